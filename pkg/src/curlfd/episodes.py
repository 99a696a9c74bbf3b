"""Episodic demonstration records and the line-delimited episode file format.

One JSON object per line: an ``episode`` marker carrying metadata, followed
by one ``transition`` object per step.  The format is shared by the demo
pool cache, the demo buffer, and the teleoperation bridge.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import Env, EnvState, TerminalCause, Transition
from .tasks import TaskSpec

FORMAT_VERSION = 1


@dataclass
class Demonstration:
    transitions: list[Transition]
    start_state: EnvState
    success: bool
    source: str = "Oracle"
    task_id: str = ""

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("empty demonstration")
        if not self.start_state.almost_equal(self.transitions[0].s, tol=0.0):
            raise ValueError("start_state does not match first transition")
        for a, b in zip(self.transitions, self.transitions[1:]):
            if not a.s_next.almost_equal(b.s, tol=0.0):
                raise ValueError("transitions do not chain")
        if self.success and self.transitions[-1].cause is not TerminalCause.GOAL:
            raise ValueError("successful demonstration must end at the goal")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> list[EnvState]:
        """All visited states s_0 .. s_T."""
        return [self.transitions[0].s] + [t.s_next for t in self.transitions]

    def suffix_from(self, index: int) -> "Demonstration":
        """The partial demonstration starting at transition `index`."""
        if not 0 <= index < len(self.transitions):
            raise IndexError(index)
        tail = self.transitions[index:]
        return Demonstration(
            transitions=list(tail),
            start_state=tail[0].s.copy(),
            success=self.success,
            source=self.source,
            task_id=self.task_id,
        )


def replays_exactly(demo: Demonstration, spec: TaskSpec) -> bool:
    """Feed the demo's actions through a fresh env; require bit-exact replay."""
    env = Env(spec)
    env.reset_to_state(demo.start_state)
    for tr in demo.transitions:
        got = env.step(tr.a)
        same = (
            got.s.almost_equal(tr.s, tol=0.0)
            and got.s_next.almost_equal(tr.s_next, tol=0.0)
            and got.r == tr.r
            and got.terminal == tr.terminal
            and got.cause == tr.cause
        )
        if not same:
            return False
    return True


def save_episodes(path: str | Path, demos: list[Demonstration]) -> None:
    with open(path, "w") as f:
        for i, demo in enumerate(demos):
            marker = {
                "type": "episode",
                "version": FORMAT_VERSION,
                "index": i,
                "source": demo.source,
                "task_id": demo.task_id,
                "success": demo.success,
                "length": len(demo),
                "start_state": demo.start_state.to_dict(),
            }
            f.write(json.dumps(marker) + "\n")
            for tr in demo.transitions:
                rec = tr.to_dict()
                rec["type"] = "transition"
                f.write(json.dumps(rec) + "\n")


def load_episodes(path: str | Path) -> list[Demonstration]:
    demos: list[Demonstration] = []
    header: dict | None = None
    transitions: list[Transition] = []

    def flush():
        nonlocal header, transitions
        if header is not None:
            demos.append(
                Demonstration(
                    transitions=transitions,
                    start_state=EnvState.from_dict(header["start_state"]),
                    success=bool(header["success"]),
                    source=header["source"],
                    task_id=header["task_id"],
                )
            )
        header, transitions = None, []

    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["type"] == "episode":
                flush()
                header = rec
            elif rec["type"] == "transition":
                transitions.append(Transition.from_dict(rec))
            else:
                raise ValueError(f"unknown record type {rec['type']!r}")
    flush()
    return demos
