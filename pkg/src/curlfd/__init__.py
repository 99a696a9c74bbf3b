"""curlfd: active curriculum learning from online demonstrations.

Sparse-reward planar reach/push tasks, an AWAC learner built on a minimal
numpy network stack, reverse-curriculum scheduling driven by episodic
demonstration queries, baseline learners, and an experiment harness.
"""

from .env import Env, EnvState, TerminalCause, Transition
from .tasks import TaskId, TaskSpec, load_task

__all__ = [
    "Env",
    "EnvState",
    "TaskId",
    "TaskSpec",
    "TerminalCause",
    "Transition",
    "load_task",
]

__version__ = "0.1.0"
