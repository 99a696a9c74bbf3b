"""Task definitions for the four planar manipulation tasks.

Geometry lives in ``data/task_geometry.json`` (the reference file with exact
coordinates); this module turns it into validated :class:`TaskSpec` values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np

from .geometry import Rect, point_rect_distance, vec2

START_LINE_LENGTH = 0.3
EPISODE_CAP = 120


class TaskId(str, Enum):
    REACH_V0 = "ReachV0"
    REACH_V1 = "ReachV1"
    PUSH_V0 = "PushV0"
    PUSH_V1 = "PushV1"

    @property
    def has_cube(self) -> bool:
        return self in (TaskId.PUSH_V0, TaskId.PUSH_V1)


@dataclass(frozen=True)
class TaskSpec:
    task_id: TaskId
    workspace: Rect
    goal: tuple[float, float]
    goal_radius: float
    obstacles: tuple[Rect, ...]
    start_line: tuple[tuple[float, float], tuple[float, float]]
    neutral_gripper: tuple[float, float] | None = None
    max_episode_len: int = EPISODE_CAP
    max_step: float = 0.02
    gripper_radius: float = 0.01
    cube_side: float = 0.04

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.start_line
        length = math.hypot(x1 - x0, y1 - y0)
        if abs(length - START_LINE_LENGTH) > 1e-9:
            raise ValueError(f"start line length {length} != {START_LINE_LENGTH}")
        if self.max_episode_len != EPISODE_CAP:
            raise ValueError(f"max_episode_len must be {EPISODE_CAP}")
        if self.has_cube and self.neutral_gripper is None:
            raise ValueError("push tasks need a neutral gripper pose")
        for ob in self.obstacles:
            if point_rect_distance(vec2(*self.goal), ob) <= self.goal_radius:
                raise ValueError(f"obstacle {ob} overlaps the goal region")

    @property
    def has_cube(self) -> bool:
        return self.task_id.has_cube

    @property
    def goal_pos(self) -> np.ndarray:
        return vec2(*self.goal)

    @property
    def obs_dim(self) -> int:
        return 4 if self.has_cube else 2

    @property
    def cube_half(self) -> float:
        return 0.5 * self.cube_side

    def cube_rect(self, cube: np.ndarray) -> Rect:
        h = self.cube_half
        return Rect(cube[0] - h, cube[1] - h, cube[0] + h, cube[1] + h)

    def start_point(self, u: float) -> np.ndarray:
        """Point on the start line at parameter u in [0, 1]."""
        (x0, y0), (x1, y1) = self.start_line
        return vec2(x0 + u * (x1 - x0), y0 + u * (y1 - y0))


def _rect(vals) -> Rect:
    return Rect(*[float(v) for v in vals])


def spec_from_dict(task_id: str | TaskId, data: dict, defaults: dict) -> TaskSpec:
    tid = TaskId(task_id)
    merged = {**defaults, **data}
    neutral = merged.get("neutral_gripper")
    return TaskSpec(
        task_id=tid,
        workspace=_rect(merged["workspace"]),
        goal=tuple(float(v) for v in merged["goal"]),
        goal_radius=float(merged["goal_radius"]),
        obstacles=tuple(_rect(o) for o in merged["obstacles"]),
        start_line=tuple(tuple(float(v) for v in p) for p in merged["start_line"]),
        neutral_gripper=tuple(float(v) for v in neutral) if neutral else None,
        max_episode_len=int(merged["max_episode_len"]),
        max_step=float(merged["max_step"]),
        gripper_radius=float(merged["gripper_radius"]),
        cube_side=float(merged["cube_side"]),
    )


def _load_geometry() -> dict:
    with resources.files("curlfd.data").joinpath("task_geometry.json").open() as f:
        return json.load(f)


def load_task(task_id: str | TaskId) -> TaskSpec:
    """Build the TaskSpec for one of the built-in tasks."""
    data = _load_geometry()
    tid = TaskId(task_id)
    return spec_from_dict(tid, data["tasks"][tid.value], data["defaults"])


def all_task_ids() -> list[TaskId]:
    return list(TaskId)
