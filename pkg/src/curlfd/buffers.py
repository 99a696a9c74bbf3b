"""Demo buffer D, self-rollout buffer R, and balanced batch sampling.

Transitions are stored column-wise (observation/action/reward arrays) so
batch assembly is a fancy-indexing gather rather than a Python loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import TerminalCause, Transition, observe
from .episodes import Demonstration
from .tasks import TaskSpec

SRC_DEMO = 0
SRC_ROLLOUT = 1


@dataclass
class TransitionBatch:
    """Columnar minibatch; `src` tags each row with its buffer of origin."""

    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    src: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class _ColumnStore:
    """Growable column arrays with FIFO wraparound at `capacity`."""

    def __init__(self, spec: TaskSpec, capacity: int):
        self.spec = spec
        self.capacity = int(capacity)
        self._obs_dim = spec.obs_dim
        self._alloc = 0
        self._size = 0
        self._head = 0  # next slot to write
        self.inserted = 0  # total pushes ever
        self.obs = np.empty((0, self._obs_dim))
        self.act = np.empty((0, 2))
        self.rew = np.empty(0)
        self.next_obs = np.empty((0, self._obs_dim))
        self.done = np.empty(0)

    def __len__(self) -> int:
        return self._size

    def _grow(self, need: int):
        new_alloc = min(self.capacity, max(need, 256, 2 * self._alloc))
        for name in ("obs", "act", "rew", "next_obs", "done"):
            old = getattr(self, name)
            shape = (new_alloc,) + old.shape[1:]
            fresh = np.empty(shape)
            fresh[: self._size] = old[: self._size]
            setattr(self, name, fresh)
        self._alloc = new_alloc

    def push(self, tr: Transition) -> None:
        if self._size < self.capacity and self._size == self._alloc:
            self._grow(self._size + 1)
        i = self._head
        self.obs[i] = observe(self.spec, tr.s)
        self.act[i] = tr.a
        self.rew[i] = tr.r
        self.next_obs[i] = observe(self.spec, tr.s_next)
        self.done[i] = float(tr.terminal)
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def gather(self, idx: np.ndarray, src: int) -> TransitionBatch:
        return TransitionBatch(
            obs=self.obs[idx].copy(),
            act=self.act[idx].copy(),
            rew=self.rew[idx].copy(),
            next_obs=self.next_obs[idx].copy(),
            done=self.done[idx].copy(),
            src=np.full(len(idx), src, dtype=int),
        )

    def sample(self, batch: int, rng: np.random.Generator, src: int) -> TransitionBatch:
        idx = rng.integers(0, self._size, size=batch)
        return self.gather(idx, src)


class ReplayBuffer:
    """FIFO ring of self-rollout transitions."""

    def __init__(self, spec: TaskSpec, capacity: int = 1_000_000):
        self._store = _ColumnStore(spec, capacity)

    def __len__(self) -> int:
        return len(self._store)

    @property
    def capacity(self) -> int:
        return self._store.capacity

    @property
    def inserted(self) -> int:
        return self._store.inserted

    def push(self, tr: Transition) -> None:
        self._store.push(tr)

    def push_episode(self, episode: list[Transition]) -> None:
        if not episode:
            raise ValueError("empty episode")
        for tr in episode:
            self._store.push(tr)

    def sample(self, batch: int, rng: np.random.Generator) -> TransitionBatch:
        if len(self) == 0:
            raise ValueError("empty replay buffer")
        return self._store.sample(batch, rng, SRC_ROLLOUT)


class DemoBuffer:
    """Accepts only successful episodes; keeps both episode and flat views."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self.episodes: list[Demonstration] = []
        self._store = _ColumnStore(spec, capacity=2**31 - 1)

    def __len__(self) -> int:
        return len(self._store)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def push_episode(self, demo: Demonstration) -> None:
        if not demo.success or demo.transitions[-1].cause is not TerminalCause.GOAL:
            raise ValueError("demo buffer accepts only successful demonstrations")
        self.episodes.append(demo)
        for tr in demo.transitions:
            self._store.push(tr)

    def sample(self, batch: int, rng: np.random.Generator) -> TransitionBatch:
        if len(self) == 0:
            raise ValueError("empty demo buffer")
        return self._store.sample(batch, rng, SRC_DEMO)


def _concat(a: TransitionBatch, b: TransitionBatch) -> TransitionBatch:
    return TransitionBatch(
        obs=np.concatenate([a.obs, b.obs]),
        act=np.concatenate([a.act, b.act]),
        rew=np.concatenate([a.rew, b.rew]),
        next_obs=np.concatenate([a.next_obs, b.next_obs]),
        done=np.concatenate([a.done, b.done]),
        src=np.concatenate([a.src, b.src]),
    )


def sample_balanced(
    demo: DemoBuffer, rollout: ReplayBuffer, batch: int, rng: np.random.Generator
) -> TransitionBatch:
    """Half demo / half rollout draws; falls back to the non-empty source.

    Draws are uniform with replacement within each source.
    """
    if batch % 2 != 0:
        raise ValueError("batch size must be even")
    have_demo = len(demo) > 0
    have_rollout = len(rollout) > 0
    if not have_demo and not have_rollout:
        raise ValueError("both buffers are empty")
    if not have_rollout:
        return demo.sample(batch, rng)
    if not have_demo:
        return rollout.sample(batch, rng)
    return _concat(demo.sample(batch // 2, rng), rollout.sample(batch // 2, rng))
