"""Demonstration sources: scripted oracle planner and demonstration pools.

The oracle plans waypoints around the obstacles and executes them through
the real environment step, so every demonstration it returns is replayable
bit-exactly.  Pools answer queries by nearest-initial-state or
nearest-state-suffix matching, standing in for a live human demonstrator.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .env import Env, EnvState, TerminalCause, task_point
from .geometry import point_rect_distance, segment_rect_distance
from .episodes import Demonstration, load_episodes, save_episodes
from .planning import plan_rectilinear, plan_straight
from .tasks import TaskSpec

log = logging.getLogger(__name__)


class DemonstrationError(RuntimeError):
    """No successful demonstration could be produced."""


def request_successful_demo(
    demonstrator, start: EnvState, rng: np.random.Generator, max_attempts: int = 25
) -> tuple[Demonstration, int]:
    """Call the demonstrator until it succeeds; returns (demo, attempts)."""
    for attempt in range(1, max_attempts + 1):
        demo = demonstrator.demonstrate(start, rng)
        inner = getattr(demonstrator, "last_attempts", 1)
        if demo.success:
            return demo, attempt - 1 + inner
    raise DemonstrationError(f"no successful demo after {max_attempts} attempts from {start}")


class OracleDemonstrator:
    """Waypoint-following scripted expert executed through env.step.

    Reach: straight-line visibility path to the goal.  Push: rectilinear cube
    path; the gripper stages behind the face opposite each leg direction and
    pushes, with small lateral corrections.  Zero-mean action noise (clipped)
    keeps generated pools from being pathologically uniform.
    """

    def __init__(self, spec: TaskSpec, noise_sigma: float = 0.05, clearance: float = 0.025):
        self.spec = spec
        self.noise_sigma = noise_sigma
        self.clearance = clearance

    # ------------------------------------------------------------ helpers
    def _noisy(self, action: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.noise_sigma > 0.0:
            action = action + self.noise_sigma * rng.standard_normal(2)
        return np.clip(action, -1.0, 1.0)

    def _pursuit(self, pos: np.ndarray, target: np.ndarray) -> np.ndarray:
        return np.clip((target - pos) / self.spec.max_step, -1.0, 1.0)

    def _plan_gripper(self, start, target, extra_obstacles=(), jitter=0.0):
        """Waypoints for the gripper disc.

        Obstacles the gripper already sits close to get a reduced clearance
        so contact starts remain plannable.  Walls keep a floor above the
        gripper radius (grazing one ends the episode); the cube may be grazed
        freely (floor near zero), it only gets nudged.
        """
        spec = self.spec
        r = spec.gripper_radius
        walls = list(spec.obstacles)
        extras = list(extra_obstacles)
        obstacles = walls + extras
        start = np.asarray(start, dtype=float)
        for base in (
            r + self.clearance + jitter,
            r + 0.004,
            r + 0.0015,
        ):
            clearances = []
            for ob in obstacles:
                floor = r + 5e-4 if ob in walls else 1e-4
                d = point_rect_distance(start, ob)
                clearances.append(min(base, max(d - 1e-6, floor)))
            path = plan_straight(start, target, obstacles, clearances, spec.workspace)
            if path is not None:
                return path
        return None

    # ------------------------------------------------------------ reach
    def _reach_episode(self, env: Env, rng: np.random.Generator, jitter: float):
        spec = self.spec
        path = self._plan_gripper(env.observe().gripper, spec.goal_pos, jitter=jitter)
        transitions = []
        wp_index = 0
        for _ in range(spec.max_episode_len):
            g = env.observe().gripper
            if path is None:
                target = spec.goal_pos
            else:
                while (
                    wp_index < len(path) - 1
                    and float(np.hypot(*(path[wp_index] - g))) < 0.004
                ):
                    wp_index += 1
                target = path[wp_index]
            tr = env.step(self._noisy(self._pursuit(g, target), rng))
            transitions.append(tr)
            if tr.terminal:
                break
        return transitions

    # ------------------------------------------------------------ push
    def _leg_pushable(self, p0: np.ndarray, p1: np.ndarray) -> bool:
        """A cube leg is pushable when the trailing gripper lane is safe.

        The gripper follows the cube at a fixed offset behind the leg
        direction; that whole lane, staging point included, must clear the
        walls and stay inside the workspace.
        """
        spec = self.spec
        h, r = spec.cube_half, spec.gripper_radius
        d = p1 - p0
        length = float(np.abs(d).max())
        if length <= 1e-12:
            return True
        direction = d / max(float(np.hypot(*d)), 1e-12)
        off = direction * (h + r)
        staging = p0 - direction * (h + r + 0.01)
        if not spec.workspace.contains(staging):
            return False
        for ob in spec.obstacles:
            if segment_rect_distance(staging, p1 - off, ob) < r + 1e-3:
                return False
        return True

    def _safe_action(self, g: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Veto a step that would sweep the gripper into a wall; retreat instead."""
        spec = self.spec
        r = spec.gripper_radius
        target = spec.workspace.clip(g + np.clip(action, -1, 1) * spec.max_step)
        if all(
            segment_rect_distance(g, target, ob) >= r + 1e-3 for ob in spec.obstacles
        ):
            return action
        nearest = min(spec.obstacles, key=lambda ob: point_rect_distance(g, ob))
        away = g - nearest.clip(g)
        dist = float(np.hypot(*away))
        if dist < 1e-9:
            return np.zeros(2)
        return away / dist

    def _escape_waypoints(self, cube: np.ndarray, clearance: float) -> list[np.ndarray]:
        """Axis-aligned legs pulling a cube that starts inside an obstacle's
        clearance band back out to the standard clearance."""
        spec = self.spec
        bounds = spec.workspace.inflate(-spec.cube_half)
        prefix: list[np.ndarray] = []
        pos = cube.copy()
        for _ in range(3):
            violated = [
                ob for ob in spec.obstacles if point_rect_distance(pos, ob) < clearance
            ]
            if not violated:
                break
            ob = violated[0]
            away = pos - ob.clip(pos)
            axis = 0 if abs(away[0]) >= abs(away[1]) else 1
            other = away[1 - axis]
            if abs(other) >= clearance:
                break
            need = float(np.sqrt(clearance**2 - other**2))
            target = pos.copy()
            sign = np.sign(away[axis]) if away[axis] != 0.0 else 1.0
            target[axis] = ob.clip(pos)[axis] + sign * (need + 1e-4)
            target = bounds.clip(target)
            if float(np.abs(target - pos).max()) < 1e-9:
                break
            prefix.append(target)
            pos = target
        return prefix

    def _cube_plan(self, cube: np.ndarray, jitter: float):
        spec = self.spec
        clearance = spec.cube_half * np.sqrt(2.0) + 0.012 + jitter
        bounds = spec.workspace.inflate(-spec.cube_half)
        prefix = self._escape_waypoints(cube, clearance)
        if prefix and not all(
            self._leg_pushable(a, b)
            for a, b in zip([cube] + prefix, prefix)
        ):
            prefix = []
        origin = prefix[-1] if prefix else cube
        path = plan_rectilinear(
            origin, spec.goal_pos, list(spec.obstacles), clearance, bounds,
            leg_ok=self._leg_pushable,
        )
        if path is None:
            path = plan_rectilinear(
                origin, spec.goal_pos, list(spec.obstacles), spec.cube_half + 0.006,
                bounds, leg_ok=self._leg_pushable,
            )
        if path is None:
            return None
        return prefix + path

    def _push_episode(self, env: Env, rng: np.random.Generator, jitter: float):
        spec = self.spec
        h, r = spec.cube_half, spec.gripper_radius
        path = self._cube_plan(env.observe().cube, jitter)
        transitions = []
        wp_index = 0
        nav: dict = {}
        for _ in range(spec.max_episode_len):
            state = env.observe()
            g, cube = state.gripper, state.cube
            at_goal = float(np.hypot(*(cube - spec.goal_pos))) <= spec.goal_radius
            if at_goal:
                # already inside the goal region: any step ends the episode
                action = np.zeros(2)
            elif path is None:
                # unpushable start; fail fast with a minimal episode
                transitions.append(env.step(np.zeros(2)))
                break
            else:
                while (
                    wp_index < len(path) - 1
                    and float(np.abs(path[wp_index] - cube).max()) < 0.008
                ):
                    wp_index += 1
                target = path[wp_index]
                action = self._safe_action(g, self._push_step(g, cube, target, nav))
            tr = env.step(self._noisy(action, rng))
            transitions.append(tr)
            if tr.terminal:
                break
        return transitions

    def _push_step(
        self, g: np.ndarray, cube: np.ndarray, target: np.ndarray, nav: dict
    ) -> np.ndarray:
        """One control decision: push if staged behind the leg face, else stage."""
        spec = self.spec
        h, r = spec.cube_half, spec.gripper_radius
        delta = target - cube
        axis = 0 if abs(delta[0]) >= abs(delta[1]) else 1
        cross = 1 - axis
        direction = np.sign(delta[axis])
        along = (g[axis] - cube[axis]) * direction
        cross_err = g[cross] - cube[cross]

        behind = along <= -(h + 0.5 * r)
        aligned = abs(cross_err) <= 0.006
        if behind and aligned and along >= -(h + r + 0.012):
            # scaled push: slow down near the waypoint instead of overshooting
            nav.clear()
            action = np.zeros(2)
            action[axis] = np.clip(delta[axis] / spec.max_step, -1.0, 1.0)
            action[cross] = np.clip(-cross_err / spec.max_step, -0.35, 0.35)
            return action

        # stage behind the face opposite the push direction; the staging plan
        # is cached while the cube stays put
        staging = cube.copy()
        staging[axis] -= direction * (h + r + 0.01)
        stale = (
            "cube" not in nav
            or float(np.abs(nav["cube"] - cube).max()) > 0.004
            or float(np.abs(nav["staging"] - staging).max()) > 0.004
            or not nav["path"]
        )
        if stale:
            path = self._plan_gripper(g, staging, extra_obstacles=[spec.cube_rect(cube)])
            nav.update(cube=cube.copy(), staging=staging.copy(), path=path or [])
        path = nav["path"]
        while len(path) > 1 and float(np.hypot(*(path[0] - g))) < 0.004:
            path.pop(0)
        target_pt = staging if not path else path[0]
        return self._pursuit(g, target_pt)

    # ------------------------------------------------------------ entry point
    def demonstrate(self, start: EnvState, rng: np.random.Generator) -> Demonstration:
        env = Env(self.spec)
        env.reset_to_state(start)
        jitter = float(rng.uniform(-0.002, 0.002))
        if self.spec.has_cube:
            transitions = self._push_episode(env, rng, jitter)
        else:
            transitions = self._reach_episode(env, rng, jitter)
        success = bool(transitions) and transitions[-1].cause is TerminalCause.GOAL
        return Demonstration(
            transitions=transitions,
            start_state=start.copy(),
            success=success,
            source="Oracle",
            task_id=self.spec.task_id.value,
        )


# ---------------------------------------------------------------- demo pools
def generate_pool(
    spec: TaskSpec,
    count: int = 60,
    rng: np.random.Generator | None = None,
    noise_sigma: float = 0.05,
    max_attempts_each: int = 40,
) -> list[Demonstration]:
    """Collect `count` successful oracle demos with starts from the task rho0."""
    rng = rng if rng is not None else np.random.default_rng(0)
    oracle = OracleDemonstrator(spec, noise_sigma=noise_sigma)
    env = Env(spec)
    pool: list[Demonstration] = []
    while len(pool) < count:
        start = env.reset(rng)
        try:
            demo, _ = request_successful_demo(oracle, start, rng, max_attempts_each)
        except DemonstrationError:
            log.warning("pool generation: giving up on start %s", start)
            continue
        demo.source = "Pool"
        pool.append(demo)
    return pool


def save_pool(path: str | Path, pool: list[Demonstration]) -> None:
    save_episodes(path, pool)


def load_pool(path: str | Path) -> list[Demonstration]:
    return load_episodes(path)


def pool_closest_initial(
    pool: list[Demonstration], requested: EnvState, spec: TaskSpec
) -> Demonstration:
    """The pool demo whose initial state is closest to the requested one.

    Distance is Euclidean over the task-relevant coordinate; ties go to the
    lowest index.
    """
    if not pool:
        raise ValueError("empty pool")
    req = task_point(spec, requested)
    dists = [float(np.hypot(*(task_point(spec, d.start_state) - req))) for d in pool]
    return pool[int(np.argmin(dists))]


def pool_closest_state_suffix(
    pool: list[Demonstration], requested: EnvState, spec: TaskSpec
) -> Demonstration:
    """The suffix of the pool demo starting at the globally closest state."""
    if not pool:
        raise ValueError("empty pool")
    req = task_point(spec, requested)
    best = (np.inf, 0, 0)
    for di, demo in enumerate(pool):
        for ti, tr in enumerate(demo.transitions):
            d = float(np.hypot(*(task_point(spec, tr.s) - req)))
            if d < best[0]:
                best = (d, di, ti)
    _, di, ti = best
    return pool[di].suffix_from(ti)


class PoolDemonstrator:
    """Answers queries from a fixed pool of successful demonstrations."""

    def __init__(self, spec: TaskSpec, pool: list[Demonstration], mode: str = "suffix"):
        if mode not in ("suffix", "initial"):
            raise ValueError(f"unknown pool mode {mode!r}")
        self.spec = spec
        self.pool = pool
        self.mode = mode

    def demonstrate(self, start: EnvState, rng: np.random.Generator) -> Demonstration:
        if self.mode == "initial":
            return pool_closest_initial(self.pool, start, self.spec)
        return pool_closest_state_suffix(self.pool, start, self.spec)
