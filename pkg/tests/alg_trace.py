"""Shared scaffolding for scheduler bookkeeping tests.

`StubWorld` fabricates a deterministic learner/demonstrator pair whose
per-curriculum success rates are fixed by a pattern table, and
`trace_algorithm` is an independent re-implementation of the scheduling
bookkeeping (candidate list, stages, removals, queries) used as the oracle
the real scheduler is compared against.  The oracle shares only the leaf
sampling primitives and rng stream layout, never the scheduler code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from curlfd.env import EnvState, TerminalCause, Transition, sample_equidistant_initial, task_point, equidistant_state
from curlfd.episodes import Demonstration
from curlfd.geometry import vec2
from curlfd.tasks import TaskSpec, load_task


def state_key(state: EnvState) -> tuple:
    """Hashable identity for a state at fp precision."""
    g = (round(float(state.gripper[0]), 12), round(float(state.gripper[1]), 12))
    if state.cube is None:
        return g
    return g + (round(float(state.cube[0]), 12), round(float(state.cube[1]), 12))


def make_line_demo(spec: TaskSpec, length: int, x: float = 0.25, y0: float = -0.1,
                   dy: float = 0.01) -> Demonstration:
    """Synthetic successful demo marching straight up at column `x`.

    All states are valid workspace states away from the obstacles, so they
    can serve as curriculum centers.
    """
    transitions = []
    for t in range(length):
        s = EnvState(vec2(x, y0 + dy * t))
        s2 = EnvState(vec2(x, y0 + dy * (t + 1)))
        last = t == length - 1
        transitions.append(
            Transition(
                s=s,
                a=np.array([0.0, dy / spec.max_step]),
                r=1000.0 if last else -1.0,
                s_next=s2,
                terminal=last,
                cause=TerminalCause.GOAL if last else TerminalCause.NONE,
            )
        )
    return Demonstration(transitions, transitions[0].s.copy(), True, "Oracle", spec.task_id.value)


def zero_move_demo(spec: TaskSpec, start: EnvState, length: int = 2) -> Demonstration:
    """Stationary successful demo anchored at `start` (used for queries)."""
    transitions = []
    for t in range(length):
        last = t == length - 1
        transitions.append(
            Transition(
                s=start.copy(),
                a=np.zeros(2),
                r=1000.0 if last else -1.0,
                s_next=start.copy(),
                terminal=last,
                cause=TerminalCause.GOAL if last else TerminalCause.NONE,
            )
        )
    return Demonstration(transitions, start.copy(), True, "Oracle", spec.task_id.value)


class SuccessPattern:
    """Deterministic per-center success sequence.

    Each center key has a rate in {0.0, 0.5, 1.0}; within every block of
    `n_eval` evaluation episodes the first `rate * n_eval` succeed.  Unknown
    centers use `default_rate`.
    """

    def __init__(self, n_eval: int, rates: dict[tuple, float], default_rate: float = 0.0):
        self.n_eval = n_eval
        self.rates = dict(rates)
        self.default_rate = default_rate
        self.counters: dict[tuple, int] = {}

    def rate_for(self, key: tuple) -> float:
        return self.rates.get(key, self.default_rate)

    def next_success(self, key: tuple) -> bool:
        i = self.counters.get(key, 0)
        self.counters[key] = i + 1
        rate = self.rate_for(key)
        return (i % self.n_eval) < round(rate * self.n_eval)


@dataclass
class StubWorld:
    """Deterministic learner + demonstrator + rollout function for bookkeeping tests."""

    spec: TaskSpec
    base_demo: Demonstration
    pattern: SuccessPattern
    train_episode_len: int = 1

    def demonstrator(self):
        world = self

        class _Demo:
            calls = 0

            def demonstrate(self, start, rng):
                # first request is the bootstrap; all later ones are queries
                self.calls += 1
                if self.calls == 1:
                    return world.base_demo
                return zero_move_demo(world.spec, start)

        return _Demo()

    def learner(self):
        class _Learner:
            def act(self, obs, deterministic, rng):
                return np.zeros(2)

            def update(self, batch, rng):
                return {}

        return _Learner()

    def rollout_fn(self):
        world = self

        def fn(env, start, deterministic, rng):
            if start is None or not deterministic:
                # training/fallback rollout; outcome does not affect bookkeeping
                anchor = start if start is not None else world.base_demo.start_state
                return _episode(world.spec, anchor, False, world.train_episode_len)
            success = world.pattern.next_success(state_key(start))
            return _episode(world.spec, start, success, 1)

        return fn


def _episode(spec, start, success, length):
    transitions = []
    for t in range(length):
        last = t == length - 1
        cause = (
            TerminalCause.GOAL
            if (last and success)
            else (TerminalCause.TIMEOUT if last else TerminalCause.NONE)
        )
        transitions.append(
            Transition(
                s=start.copy(),
                a=np.zeros(2),
                r=1000.0 if cause is TerminalCause.GOAL else -1.0,
                s_next=start.copy(),
                terminal=last,
                cause=cause,
            )
        )
    return transitions


def trace_algorithm(
    spec: TaskSpec,
    base_demo: Demonstration,
    pattern: SuccessPattern,
    seed: int,
    n_iterations: int,
    n_eval: int,
    n_train: int,
    w: float,
    delta_g: int,
    demo_budget: int,
    query_interval: int,
) -> list[dict]:
    """Independent step-through of the scheduling bookkeeping.

    Returns one record per iteration with the candidate list (as state
    keys), stages, selection, removal, and query info.  Mirrors the rng
    stream layout (boot/eval/train/select/query) so tie-breaks and query
    draws line up with the scheduler under test.
    """
    streams = np.random.SeedSequence(seed).spawn(5)
    rng_select = np.random.default_rng(streams[3])
    rng_query = np.random.default_rng(streams[4])

    def demo_state(index: int) -> EnvState:
        if index == 0:
            return base_demo.transitions[0].s.copy()
        return base_demo.transitions[index].s_next.copy()

    def score(q: float) -> int:
        if q == 0.0:
            return 2
        if q < w:
            return 3
        return 1

    t_b = len(base_demo)
    g = 1
    g_tilde = 1
    n_d = 0
    episodes = 0
    next_query_at = query_interval
    candidates: list[dict] = [
        {"key": state_key(demo_state(t_b - g)), "state": demo_state(t_b - g), "origin": "base"}
    ]
    records = []
    for it in range(1, n_iterations + 1):
        rec: dict = {"iteration": it}
        if not candidates:
            episodes += n_train
            rec.update(
                fallback=True,
                candidates=[],
                g=g,
                g_tilde=g_tilde,
                n_d=n_d,
                episodes=episodes,
            )
            records.append(rec)
            continue
        qs = []
        for cand in candidates:
            succ = sum(pattern.next_success(cand["key"]) for _ in range(n_eval))
            qs.append(succ / n_eval)
        scores = [score(q) for q in qs]
        best = max(scores)
        tied = [i for i, s in enumerate(scores) if s == best]
        idx = tied[0] if len(tied) == 1 else tied[int(rng_select.integers(0, len(tied)))]
        star = candidates[idx]
        episodes += n_train
        post_succ = sum(pattern.next_success(star["key"]) for _ in range(n_eval))
        q_post = post_succ / n_eval
        removed = q_post >= w
        if removed:
            candidates.pop(idx)
        stage_advanced = False
        if star["origin"] == "base" and g < t_b:
            g = min(g + delta_g, t_b)
            new_state = demo_state(t_b - g)
            key = state_key(new_state)
            if all(c["key"] != key for c in candidates):
                candidates.append({"key": key, "state": new_state, "origin": "base"})
            stage_advanced = True
        queried_key = None
        if episodes >= next_query_at:
            next_query_at += query_interval
            if n_d < demo_budget:
                anchor = demo_state(t_b - g_tilde)
                start = sample_equidistant_initial(spec, anchor, rng_query)
                if any(c["key"] == state_key(start) for c in candidates):
                    start = sample_equidistant_initial(spec, anchor, rng_query)
                    if any(c["key"] == state_key(start) for c in candidates):
                        p = task_point(spec, start) - spec.goal_pos
                        theta = float(np.arctan2(p[1], p[0])) + 1e-6
                        start = equidistant_state(spec, start, theta)
                n_d += 1
                queried_key = state_key(start)
                candidates.append({"key": queried_key, "state": start, "origin": "queried"})
                g_tilde = min(g_tilde + delta_g, t_b)
        rec.update(
            fallback=False,
            qs=qs,
            scores=scores,
            selected=star["key"],
            q_post=q_post,
            removed=removed,
            stage_advanced=stage_advanced,
            queried=queried_key,
            candidates=sorted(c["key"] for c in candidates),
            g=g,
            g_tilde=g_tilde,
            n_d=n_d,
            episodes=episodes,
        )
        records.append(rec)
    return records


def scheduler_trace(scheduler) -> list[dict]:
    """Condense the scheduler's event log into per-iteration records
    comparable with `trace_algorithm` output."""
    records: dict[int, dict] = {}
    for ev in scheduler.events:
        it = ev["iteration"]
        if it == 0:
            continue
        rec = records.setdefault(it, {"iteration": it, "queried": None, "fallback": False})
        kind = ev["event"]
        if kind == "fallback":
            rec["fallback"] = True
        elif kind == "evaluated":
            rec["qs"] = ev["qs"]
            rec["scores"] = ev["scores"]
        elif kind == "selected":
            rec["selected"] = state_key(EnvState.from_dict(ev["center"]))
        elif kind == "post_update":
            rec["q_post"] = ev["q_post"]
            rec["removed"] = ev["removed"]
        elif kind == "stage_advance":
            rec["stage_advanced"] = True
        elif kind == "query":
            rec["queried"] = state_key(EnvState.from_dict(ev["start"]))
    return [records[k] for k in sorted(records)]
