"""Deterministic planar kinematic environments for the reach/push tasks.

The gripper is a disc moved by bounded displacement commands; the cube (push
tasks) is an axis-aligned square displaced quasi-statically by the minimum
translation that resolves gripper penetration.  Sparse rewards: +1000 on
reaching the goal, -1000 on obstacle contact, -1 otherwise; episodes end on
goal, obstacle, or the 120-step cap.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import (
    disc_rect_mtv,
    disc_rect_penetration,
    point_rect_distance,
    rects_overlap,
    rotate_about,
    swept_disc_hits_rect,
    vec2,
)
from .tasks import TaskSpec

log = logging.getLogger(__name__)

REWARD_GOAL = 1000.0
REWARD_OBSTACLE = -1000.0
REWARD_STEP = -1.0

# Allowed gripper/cube interpenetration when validating states; contact states
# produced by the MTV resolution sit exactly on the boundary up to fp error.
CONTACT_TOL = 1e-7


class TerminalCause(str, Enum):
    GOAL = "Goal"
    OBSTACLE = "Obstacle"
    TIMEOUT = "Timeout"
    NONE = "None"


@dataclass(frozen=True, eq=False)
class EnvState:
    """Full resettable world state: gripper position, cube position if any."""

    gripper: np.ndarray
    cube: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "gripper", np.asarray(self.gripper, dtype=float))
        if self.cube is not None:
            object.__setattr__(self, "cube", np.asarray(self.cube, dtype=float))

    def copy(self) -> "EnvState":
        return EnvState(self.gripper.copy(), None if self.cube is None else self.cube.copy())

    def to_dict(self) -> dict:
        d = {"gripper": [float(self.gripper[0]), float(self.gripper[1])]}
        d["cube"] = None if self.cube is None else [float(self.cube[0]), float(self.cube[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvState":
        cube = d.get("cube")
        return cls(vec2(*d["gripper"]), None if cube is None else vec2(*cube))

    def almost_equal(self, other: "EnvState", tol: float = 1e-12) -> bool:
        if (self.cube is None) != (other.cube is None):
            return False
        if np.max(np.abs(self.gripper - other.gripper)) > tol:
            return False
        if self.cube is not None and np.max(np.abs(self.cube - other.cube)) > tol:
            return False
        return True


@dataclass(frozen=True, eq=False)
class Transition:
    s: EnvState
    a: np.ndarray
    r: float
    s_next: EnvState
    terminal: bool
    cause: TerminalCause = TerminalCause.NONE

    def to_dict(self) -> dict:
        return {
            "s": self.s.to_dict(),
            "a": [float(self.a[0]), float(self.a[1])],
            "r": float(self.r),
            "s_next": self.s_next.to_dict(),
            "terminal": bool(self.terminal),
            "cause": self.cause.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(
            s=EnvState.from_dict(d["s"]),
            a=np.asarray(d["a"], dtype=float),
            r=float(d["r"]),
            s_next=EnvState.from_dict(d["s_next"]),
            terminal=bool(d["terminal"]),
            cause=TerminalCause(d["cause"]),
        )


class StateValidationError(ValueError):
    """A state violates workspace or collision invariants for its task."""


class SamplingError(RuntimeError):
    """Rejection sampling failed to find a valid state."""


def task_point(spec: TaskSpec, state: EnvState) -> np.ndarray:
    """The coordinate the curricula vary: cube for push, gripper for reach."""
    return state.cube if spec.has_cube else state.gripper


def observe(spec: TaskSpec, state: EnvState) -> np.ndarray:
    """Flat observation vector: gripper xy, plus cube xy on push tasks."""
    if spec.has_cube:
        return np.concatenate([state.gripper, state.cube])
    return state.gripper.copy()


def validate_state(spec: TaskSpec, state: EnvState) -> None:
    """Raise StateValidationError unless `state` is a valid world state."""
    g = state.gripper
    if g.shape != (2,) or not np.all(np.isfinite(g)):
        raise StateValidationError(f"non-finite gripper {g}")
    if not spec.workspace.contains(g):
        raise StateValidationError(f"gripper {g} outside workspace")
    if spec.has_cube != (state.cube is not None):
        raise StateValidationError(
            f"cube must be {'present' if spec.has_cube else 'absent'} for {spec.task_id}"
        )
    for ob in spec.obstacles:
        if point_rect_distance(g, ob) < spec.gripper_radius - CONTACT_TOL:
            raise StateValidationError(f"gripper {g} penetrates obstacle {ob}")
    if state.cube is not None:
        c = state.cube
        if not np.all(np.isfinite(c)):
            raise StateValidationError(f"non-finite cube {c}")
        inner = spec.workspace.inflate(-spec.cube_half)
        if not inner.contains(c):
            raise StateValidationError(f"cube {c} not fully inside workspace")
        crect = spec.cube_rect(c)
        for ob in spec.obstacles:
            if rects_overlap(crect, ob):
                raise StateValidationError(f"cube {c} overlaps obstacle {ob}")
        if disc_rect_penetration(g, spec.gripper_radius, crect) > CONTACT_TOL:
            raise StateValidationError(f"gripper {g} penetrates cube {c}")


def is_valid_state(spec: TaskSpec, state: EnvState) -> bool:
    try:
        validate_state(spec, state)
    except StateValidationError:
        return False
    return True


class Env:
    """Stateful episode wrapper around the pure step dynamics.

    Owns the current state and step counter; the dynamics themselves have no
    hidden state, so distinct Env instances never interact.
    """

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self._state: EnvState | None = None
        self._t = 0

    @property
    def t(self) -> int:
        return self._t

    def observe(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state.copy()

    def obs_vector(self) -> np.ndarray:
        return observe(self.spec, self.observe())

    def reset(self, rng: np.random.Generator) -> EnvState:
        """Sample a fresh initial state from the task's own start distribution."""
        spec = self.spec
        u = float(rng.uniform(0.0, 1.0))
        point = spec.start_point(u)
        if spec.has_cube:
            state = EnvState(vec2(*spec.neutral_gripper), point)
        else:
            state = EnvState(point, None)
        validate_state(spec, state)
        self._state = state
        self._t = 0
        return state.copy()

    def reset_to_state(self, state: EnvState) -> EnvState:
        """Reset exactly to `state` (validated); zeroes the step counter."""
        validate_state(self.spec, state)
        self._state = state.copy()
        self._t = 0
        return self._state.copy()

    def step(self, action) -> Transition:
        if self._state is None:
            raise RuntimeError("environment not reset")
        spec = self.spec
        s = self._state
        a = np.asarray(action, dtype=float).reshape(2)
        if np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
            log.debug("clipping invalid action %s", a)
            a = np.nan_to_num(a)
        a = np.clip(a, -1.0, 1.0)

        g_old = s.gripper
        g_new = spec.workspace.clip(g_old + a * spec.max_step)

        hit_obstacle = any(
            swept_disc_hits_rect(g_old, g_new, spec.gripper_radius, ob)
            for ob in spec.obstacles
        )

        cube_new = None if s.cube is None else s.cube.copy()
        if s.cube is not None and not hit_obstacle:
            g_new, cube_new = self._resolve_push(g_old, g_new, s.cube)
            crect = spec.cube_rect(cube_new)
            if any(rects_overlap(crect, ob) for ob in spec.obstacles):
                hit_obstacle = True

        s_next = EnvState(g_new, cube_new)
        self._t += 1

        if hit_obstacle:
            r, terminal, cause = REWARD_OBSTACLE, True, TerminalCause.OBSTACLE
        elif self._at_goal(s_next):
            r, terminal, cause = REWARD_GOAL, True, TerminalCause.GOAL
        elif self._t >= spec.max_episode_len:
            r, terminal, cause = REWARD_STEP, True, TerminalCause.TIMEOUT
        else:
            r, terminal, cause = REWARD_STEP, False, TerminalCause.NONE

        self._state = s_next
        return Transition(s=s.copy(), a=a, r=r, s_next=s_next.copy(), terminal=terminal, cause=cause)

    def _at_goal(self, state: EnvState) -> bool:
        p = task_point(self.spec, state)
        return float(np.hypot(*(p - self.spec.goal_pos))) <= self.spec.goal_radius

    def _resolve_push(
        self, g_old: np.ndarray, g_new: np.ndarray, cube: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Quasi-static contact: displace the cube out of the gripper disc.

        If the cube is blocked by the workspace edge, the gripper is pulled
        back instead so the pair never interpenetrates; a fully jammed
        configuration reverts the whole move.
        """
        spec = self.spec
        crect = spec.cube_rect(cube)
        mtv = disc_rect_mtv(g_new, spec.gripper_radius, crect)
        if mtv is None:
            return g_new, cube
        cube_new = cube + mtv
        inner = spec.workspace.inflate(-spec.cube_half)
        clamped = inner.clip(cube_new)
        if not np.array_equal(clamped, cube_new):
            cube_new = clamped
            crect2 = spec.cube_rect(cube_new)
            mtv2 = disc_rect_mtv(g_new, spec.gripper_radius, crect2)
            if mtv2 is not None:
                # Moving the disc by -mtv2 resolves contact equivalently.
                retreat = spec.workspace.clip(g_new - mtv2)
                if disc_rect_penetration(retreat, spec.gripper_radius, crect2) > 0.0:
                    return g_old.copy(), cube.copy()  # fully jammed, revert
                g_new = retreat
        return g_new, cube_new


def sample_curriculum_initial(
    spec: TaskSpec,
    center: EnvState,
    radius: float,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> EnvState:
    """Uniform draw from the disc of `radius` around the center's task point.

    Only the task-relevant coordinate varies (cube for push, gripper for
    reach); the rest is copied from the center.  Rejection-sampled against
    the full state invariants.
    """
    validate_state(spec, center)
    if radius == 0.0:
        return center.copy()
    c = task_point(spec, center)
    for _ in range(max_tries):
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        rad = radius * math.sqrt(float(rng.uniform(0.0, 1.0)))
        point = c + rad * vec2(math.cos(theta), math.sin(theta))
        if spec.has_cube:
            cand = EnvState(center.gripper.copy(), point)
        else:
            cand = EnvState(point, None)
        if is_valid_state(spec, cand):
            return cand
    raise SamplingError(
        f"no valid curriculum start within {radius} of {c} after {max_tries} tries"
    )


def sample_equidistant_initial(
    spec: TaskSpec,
    anchor: EnvState,
    rng: np.random.Generator,
    max_tries: int = 200,
) -> EnvState:
    """Draw a start of the same difficulty as `anchor`: same distance to goal.

    The task point is placed uniformly on the feasible part of the circle
    centered at the goal through the anchor's task point.  On push tasks the
    gripper is rotated around the goal by the same angle, preserving the
    gripper/cube arrangement.  Falls back to the anchor itself when no
    feasible point is found.
    """
    validate_state(spec, anchor)
    goal = spec.goal_pos
    p = task_point(spec, anchor)
    d = float(np.hypot(*(p - goal)))
    if d < 1e-12:
        return anchor.copy()
    for _ in range(max_tries):
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        cand = equidistant_state(spec, anchor, theta)
        if is_valid_state(spec, cand):
            return cand
    log.warning("empty feasible arc around goal at radius %.4f; using anchor", d)
    return anchor.copy()


def equidistant_state(spec: TaskSpec, anchor: EnvState, theta: float) -> EnvState:
    """The anchor configuration rotated about the goal to polar angle `theta`.

    The task point lands exactly on the circle of the anchor's goal distance;
    membership on that circle is exact up to fp rounding.  On push tasks the
    cube square does not rotate, so a gripper that was touching a face may
    graze into it after rotation; it is pushed back out along the contact
    normal (the cube stays exactly on the arc).
    """
    goal = spec.goal_pos
    p = task_point(spec, anchor)
    d = float(np.hypot(*(p - goal)))
    point = goal + d * vec2(math.cos(theta), math.sin(theta))
    if not spec.has_cube:
        return EnvState(point, None)
    theta0 = math.atan2(p[1] - goal[1], p[0] - goal[0])
    gripper = rotate_about(anchor.gripper, goal, theta - theta0)
    crect = spec.cube_rect(point)
    mtv = disc_rect_mtv(gripper, spec.gripper_radius, crect)
    if mtv is not None:
        gripper = gripper - mtv
    return EnvState(gripper, point)


def rollout_episode(
    env: Env,
    policy,
    rng: np.random.Generator,
    start_state: EnvState | None = None,
    deterministic: bool = False,
) -> list[Transition]:
    """Run one full episode; `policy(obs, deterministic, rng) -> action`."""
    if start_state is None:
        env.reset(rng)
    else:
        env.reset_to_state(start_state)
    episode: list[Transition] = []
    while True:
        obs = env.obs_vector()
        action = policy(obs, deterministic, rng)
        tr = env.step(action)
        episode.append(tr)
        if tr.terminal:
            return episode


def episode_success(episode: list[Transition]) -> bool:
    return bool(episode) and episode[-1].cause is TerminalCause.GOAL
