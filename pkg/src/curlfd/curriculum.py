"""Reverse-curriculum scheduling driven by episodic demonstration queries.

One scheduler iteration: score every candidate curriculum by evaluation
rollouts, select the one at the edge of the policy's ability, train on it,
re-evaluate, prune/advance the base-demo stage, and periodically query a new
demonstration at a start of matched difficulty.  With no candidates left,
training falls back to the task's own start distribution.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .buffers import DemoBuffer, ReplayBuffer, sample_balanced
from .demonstrators import DemonstrationError, request_successful_demo
from .env import (
    Env,
    EnvState,
    episode_success,
    equidistant_state,
    rollout_episode,
    sample_curriculum_initial,
    sample_equidistant_initial,
    task_point,
)
from .episodes import Demonstration
from .tasks import TaskSpec

log = logging.getLogger(__name__)

ORIGIN_BASE = "base"
ORIGIN_QUERIED = "queried"

DUPLICATE_TOL = 1e-12


@dataclass(eq=False)
class Curriculum:
    """An initial-state distribution around a center state."""

    center: EnvState
    radius: float
    origin: str
    origin_index: int
    last_q: float | None = None
    last_score: int | None = None


@dataclass
class ScheduleConfig:
    n_eval: int = 10
    n_train: int = 20
    w: float = 0.7
    delta_g: int = 10
    demo_budget: int = 10
    query_interval: int | None = None  # episodes between queries; default 2 * n_train
    curriculum_radius: float = 0.03
    batch_size: int = 256
    max_demo_attempts: int = 25
    max_query_resamples: int = 10

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError("w must be in (0, 1]")
        if self.query_interval is None:
            self.query_interval = 2 * self.n_train
        if self.query_interval % self.n_train != 0:
            raise ValueError("query_interval must be a multiple of n_train")


@dataclass
class ScheduleState:
    """Stage bookkeeping for the base-demo and query-demo ladders."""

    t_b: int
    g: int = 1
    g_tilde: int = 1
    n_d: int = 0
    episodes: int = 0
    next_query_at: int = 0

    def advance_g(self, delta: int) -> None:
        self.g = min(self.g + delta, self.t_b)

    def advance_g_tilde(self, delta: int) -> None:
        self.g_tilde = min(self.g_tilde + delta, self.t_b)


def reachability_score(q: float, w: float) -> int:
    """Piecewise score: 2 at q=0, 3 for 0<q<w, 1 for q>=w.

    Middling success rates score highest so selection favors curricula at
    the edge of the current policy's ability.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"success rate {q} outside [0, 1]")
    if q == 0.0:
        return 2
    if q < w:
        return 3
    return 1


def select_curriculum(curricula: list[Curriculum], rng: np.random.Generator) -> int:
    """Index of a highest-score candidate, uniform among ties."""
    if not curricula:
        raise ValueError("empty candidate list")
    scores = [c.last_score for c in curricula]
    if any(s is None for s in scores):
        raise ValueError("candidates must be scored before selection")
    best = max(scores)
    tied = [i for i, s in enumerate(scores) if s == best]
    if len(tied) == 1:
        return tied[0]
    return tied[int(rng.integers(0, len(tied)))]


def base_demo_state(demo: Demonstration, index: int) -> EnvState:
    """Demo state at `index`: post-step state s_{index+1}, with index 0
    mapping to the demo's own initial state (closing the reverse curriculum)."""
    if index == 0:
        return demo.transitions[0].s.copy()
    return demo.transitions[index].s_next.copy()


class CurriculumScheduler:
    """Owns the learner, buffers, candidate list, and stage state."""

    def __init__(
        self,
        spec: TaskSpec,
        learner,
        demonstrator,
        config: ScheduleConfig,
        seed: int,
        rollout_fn=None,
        event_sink=None,
        demo_buffer: DemoBuffer | None = None,
        rollout_buffer: ReplayBuffer | None = None,
    ):
        self.spec = spec
        self.learner = learner
        self.demonstrator = demonstrator
        self.config = config
        self.env = Env(spec)
        self.demo_buffer = demo_buffer if demo_buffer is not None else DemoBuffer(spec)
        self.rollout_buffer = (
            rollout_buffer if rollout_buffer is not None else ReplayBuffer(spec)
        )
        self.curricula: list[Curriculum] = []
        self.base_demo: Demonstration | None = None
        self.schedule: ScheduleState | None = None
        self.iteration = 0
        self.env_steps = 0
        self.demos_requested = 0
        self.query_count = 0
        self._events = []
        self._event_sink = event_sink
        streams = np.random.SeedSequence(seed).spawn(5)
        self.rng_boot = np.random.default_rng(streams[0])
        self.rng_eval = np.random.default_rng(streams[1])
        self.rng_train = np.random.default_rng(streams[2])
        self.rng_select = np.random.default_rng(streams[3])
        self.rng_query = np.random.default_rng(streams[4])
        if rollout_fn is None:
            def rollout_fn(env, start, deterministic, rng):
                policy = lambda obs, det, r: self.learner.act(obs, det, r)
                return rollout_episode(env, policy, rng, start, deterministic)

        self.rollout_fn = rollout_fn

    # ------------------------------------------------------------ events
    @property
    def events(self) -> list[dict]:
        return self._events

    def _emit(self, kind: str, **fields) -> None:
        event = {
            "event": kind,
            "iteration": self.iteration,
            "episodes": self.schedule.episodes if self.schedule else 0,
            "env_steps": self.env_steps,
            **fields,
        }
        self._events.append(event)
        if self._event_sink is not None:
            self._event_sink(event)

    @staticmethod
    def _state_fields(state: EnvState) -> dict:
        return state.to_dict()

    # ------------------------------------------------------------ bootstrap
    def bootstrap(self) -> None:
        """Collect the base demo and seed the candidate list."""
        start = self.env.reset(self.rng_boot)
        demo, attempts = request_successful_demo(
            self.demonstrator, start, self.rng_boot, self.config.max_demo_attempts
        )
        self.demos_requested += 1
        self.demo_buffer.push_episode(demo)
        self.base_demo = demo
        t_b = len(demo)
        self.schedule = ScheduleState(
            t_b=t_b, next_query_at=self.config.query_interval
        )
        center = base_demo_state(demo, t_b - self.schedule.g)
        self.curricula = [
            Curriculum(
                center=center,
                radius=self.config.curriculum_radius,
                origin=ORIGIN_BASE,
                origin_index=t_b - self.schedule.g,
            )
        ]
        self._emit(
            "bootstrap",
            t_b=t_b,
            attempts=attempts,
            center=self._state_fields(center),
        )

    # ------------------------------------------------------------ phases
    def _run_episode(self, start: EnvState | None, deterministic: bool, rng) -> list:
        episode = self.rollout_fn(self.env, start, deterministic, rng)
        self.env_steps += len(episode)
        self.rollout_buffer.push_episode(episode)
        return episode

    def _eval_curriculum(self, c: Curriculum) -> float:
        successes = 0
        for _ in range(self.config.n_eval):
            start = sample_curriculum_initial(
                self.spec, c.center, c.radius, self.rng_eval
            )
            episode = self._run_episode(start, deterministic=True, rng=self.rng_eval)
            successes += episode_success(episode)
        return successes / self.config.n_eval

    def evaluate_candidates(self) -> None:
        for c in self.curricula:
            q = self._eval_curriculum(c)
            c.last_q = q
            c.last_score = reachability_score(q, self.config.w)
        self._emit(
            "evaluated",
            scores=[c.last_score for c in self.curricula],
            qs=[c.last_q for c in self.curricula],
            centers=[self._state_fields(c.center) for c in self.curricula],
        )

    def _train_on(self, c: Curriculum) -> dict:
        stats: dict = {}
        for _ in range(self.config.n_train):
            start = sample_curriculum_initial(
                self.spec, c.center, c.radius, self.rng_train
            )
            episode = self._run_episode(start, deterministic=False, rng=self.rng_train)
            self.schedule.episodes += 1
            stats = self._update_after_episode(len(episode))
        return stats

    def _train_fallback(self) -> dict:
        stats: dict = {}
        for _ in range(self.config.n_train):
            episode = self._run_episode(None, deterministic=False, rng=self.rng_train)
            self.schedule.episodes += 1
            stats = self._update_after_episode(len(episode))
        return stats

    def _update_after_episode(self, n_updates: int) -> dict:
        stats: dict = {}
        for _ in range(n_updates):
            batch = sample_balanced(
                self.demo_buffer, self.rollout_buffer, self.config.batch_size, self.rng_train
            )
            stats = self.learner.update(batch, self.rng_train) or {}
        return stats

    def _append_curriculum(self, cand: Curriculum) -> bool:
        for existing in self.curricula:
            if existing.center.almost_equal(cand.center, tol=DUPLICATE_TOL):
                return False
        self.curricula.append(cand)
        return True

    def post_update(self, c: Curriculum) -> None:
        q_post = self._eval_curriculum(c)
        removed = False
        if q_post >= self.config.w:
            self.curricula.remove(c)
            removed = True
        self._emit(
            "post_update",
            q_post=q_post,
            removed=removed,
            center=self._state_fields(c.center),
        )
        sched = self.schedule
        if c.origin == ORIGIN_BASE and sched.g < sched.t_b:
            sched.advance_g(self.config.delta_g)
            index = sched.t_b - sched.g
            new_c = Curriculum(
                center=base_demo_state(self.base_demo, index),
                radius=self.config.curriculum_radius,
                origin=ORIGIN_BASE,
                origin_index=index,
            )
            appended = self._append_curriculum(new_c)
            if not appended:
                log.info("base stage advance produced a duplicate center; skipped")
            self._emit(
                "stage_advance",
                g=sched.g,
                index=index,
                appended=appended,
                center=self._state_fields(new_c.center),
            )

    def _sample_query_start(self, anchor: EnvState) -> EnvState:
        start = sample_equidistant_initial(self.spec, anchor, self.rng_query)
        if not any(
            c.center.almost_equal(start, tol=DUPLICATE_TOL) for c in self.curricula
        ):
            return start
        # duplicate center: re-sample once, then accept with an angular jitter
        # (preserves the distance to the goal exactly)
        start = sample_equidistant_initial(self.spec, anchor, self.rng_query)
        if not any(
            c.center.almost_equal(start, tol=DUPLICATE_TOL) for c in self.curricula
        ):
            return start
        p = task_point(self.spec, start) - self.spec.goal_pos
        theta = float(np.arctan2(p[1], p[0])) + 1e-6
        return equidistant_state(self.spec, start, theta)

    def maybe_query(self) -> bool:
        sched = self.schedule
        if sched.episodes < sched.next_query_at:
            return False
        sched.next_query_at += self.config.query_interval
        if sched.n_d >= self.config.demo_budget:
            return False
        anchor = base_demo_state(self.base_demo, sched.t_b - sched.g_tilde)
        t0 = time.monotonic()
        attempts_total = 0
        demo = None
        start = None
        for _ in range(self.config.max_query_resamples):
            start = self._sample_query_start(anchor)
            try:
                demo, attempts = request_successful_demo(
                    self.demonstrator, start, self.rng_query, self.config.max_demo_attempts
                )
                attempts_total += attempts
                break
            except DemonstrationError:
                attempts_total += self.config.max_demo_attempts
                log.warning("query start %s yielded no demo; resampling", start)
        duration_ms = (time.monotonic() - t0) * 1e3
        self.demos_requested += 1
        if demo is None:
            self._emit("query_failed", attempts=attempts_total)
            return False
        self.demo_buffer.push_episode(demo)
        sched.n_d += 1
        self.query_count += 1
        new_c = Curriculum(
            center=start.copy(),
            radius=self.config.curriculum_radius,
            origin=ORIGIN_QUERIED,
            origin_index=self.query_count - 1,
        )
        self._append_curriculum(new_c)
        sched.advance_g_tilde(self.config.delta_g)
        anchor_dist = float(np.hypot(*(task_point(self.spec, anchor) - self.spec.goal_pos)))
        start_dist = float(np.hypot(*(task_point(self.spec, start) - self.spec.goal_pos)))
        self._emit(
            "query",
            start=self._state_fields(start),
            anchor=self._state_fields(anchor),
            attempts=attempts_total,
            duration_ms=duration_ms,
            n_d=sched.n_d,
            g_tilde=sched.g_tilde,
            demo_len=len(demo),
            anchor_goal_dist=anchor_dist,
            start_goal_dist=start_dist,
        )
        return True

    # ------------------------------------------------------------ iteration
    def train_iteration(self) -> dict:
        """One full scheduler iteration; returns the last update's stats."""
        if self.schedule is None:
            raise RuntimeError("bootstrap() must run first")
        self.iteration += 1
        if not self.curricula:
            stats = self._train_fallback()
            self._emit("fallback")
            return stats
        self.evaluate_candidates()
        idx = select_curriculum(self.curricula, self.rng_select)
        c_star = self.curricula[idx]
        self._emit(
            "selected",
            index=idx,
            score=c_star.last_score,
            q=c_star.last_q,
            origin=c_star.origin,
            center=self._state_fields(c_star.center),
        )
        stats = self._train_on(c_star)
        self.post_update(c_star)
        self.maybe_query()
        return stats
