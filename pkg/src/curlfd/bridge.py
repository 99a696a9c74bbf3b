"""WebSocket bridge for human teleoperation demonstrations.

The training loop blocks on :class:`RemoteDemonstrator` while a browser (or
headless driver) session supplies actions.  All physics runs here, at a
fixed tick, through the same env.step as training: the client only renders
frames and sends `action` messages.  Failed attempts reset the environment
to the same queried start until one succeeds.

Wire protocol (newline-delimited JSON messages, schema version 1; see
docs/wire_protocol.md for the exact field layout):

  server -> client: hello, query, frame, episode_end, demo_accepted, trace
  client -> server: action
"""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass

import numpy as np
from websockets.sync.server import serve

from .demonstrators import DemonstrationError
from .env import Env, EnvState, TerminalCause, task_point
from .episodes import Demonstration
from .tasks import TaskSpec

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


@dataclass
class QueryRecord:
    """One demonstration query: request, outcome, effort accounting."""

    index: int
    start_state: EnvState
    attempts: int = 0
    duration_ms: float = 0.0
    demo: Demonstration | None = None


def _geometry_payload(spec: TaskSpec) -> dict:
    return {
        "workspace": [spec.workspace.xmin, spec.workspace.ymin,
                      spec.workspace.xmax, spec.workspace.ymax],
        "obstacles": [[o.xmin, o.ymin, o.xmax, o.ymax] for o in spec.obstacles],
        "goal": list(spec.goal),
        "goal_radius": spec.goal_radius,
        "start_line": [list(p) for p in spec.start_line],
        "cube_side": spec.cube_side if spec.has_cube else None,
        "gripper_radius": spec.gripper_radius,
        "max_episode_len": spec.max_episode_len,
    }


class QueryBridge:
    """Serves one teleoperation session and hands queries through it.

    `request_demo` blocks until a connected client finishes a successful
    episode from the requested start state.
    """

    def __init__(self, spec: TaskSpec, port: int, tick_hz: float = 20.0,
                 session_timeout: float = 600.0, demo_budget: int | None = None):
        self.spec = spec
        self.port = port
        self.tick_hz = tick_hz
        self.session_timeout = session_timeout
        self.demo_budget = demo_budget
        self._requests: queue.Queue = queue.Queue()
        self._results: queue.Queue = queue.Queue()
        self._past_queries: list[list[float]] = []
        self._collected = 0
        self._session_lock = threading.Lock()
        self._episode_counter = 0
        self._server = None
        self._thread: threading.Thread | None = None
        self._stopping = threading.Event()

    # ------------------------------------------------------------ lifecycle
    def start(self) -> None:
        ready = threading.Event()

        def run():
            with serve(self._handle, "127.0.0.1", self.port) as server:
                self._server = server
                ready.set()
                server.serve_forever()

        self._thread = threading.Thread(target=run, daemon=True, name="query-bridge")
        self._thread.start()
        if not ready.wait(timeout=10.0):
            raise RuntimeError("bridge server failed to start")

    def stop(self) -> None:
        self._stopping.set()
        if self._server is not None:
            self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    # ------------------------------------------------------------ scheduler side
    def request_demo(self, start: EnvState, index: int, timeout: float | None = None) -> QueryRecord:
        self._requests.put(QueryRecord(index=index, start_state=start.copy()))
        try:
            result = self._results.get(timeout=timeout or self.session_timeout)
        except queue.Empty:
            raise DemonstrationError("bridge session timed out") from None
        if isinstance(result, Exception):
            raise DemonstrationError(f"bridge session failed: {result}") from result
        return result

    # ------------------------------------------------------------ session side
    def _send(self, ws, kind: str, **fields) -> None:
        ws.send(json.dumps({"type": kind, "version": PROTOCOL_VERSION, **fields}))

    def _recv_action(self, ws, episode: int) -> np.ndarray:
        # actions echo the episode number; stale ones from a closed episode
        # are dropped
        while True:
            raw = ws.recv(timeout=self.session_timeout)
            msg = json.loads(raw)
            if msg.get("type") == "action" and msg.get("episode") == episode:
                return np.array([float(msg["dx"]), float(msg["dy"])])
            log.debug("ignoring client message %s", msg.get("type"))

    def _handle(self, ws) -> None:
        if not self._session_lock.acquire(blocking=False):
            self._send(ws, "error", message="another session is active")
            ws.close()
            return
        try:
            self._send(
                ws,
                "hello",
                task_id=self.spec.task_id.value,
                geometry=_geometry_payload(self.spec),
                tick_hz=self.tick_hz,
                budget=self.demo_budget,
                collected=self._collected,
            )
            self._send(ws, "trace", past_query_points=list(self._past_queries))
            while not self._stopping.is_set():
                try:
                    record: QueryRecord = self._requests.get(timeout=0.2)
                except queue.Empty:
                    continue
                try:
                    self._run_query(ws, record)
                    self._results.put(record)
                except Exception as exc:  # surface to the blocked scheduler
                    self._results.put(exc)
                    raise
        finally:
            self._session_lock.release()

    def _run_query(self, ws, record: QueryRecord) -> None:
        env = Env(self.spec)
        tick = 1.0 / self.tick_hz if self.tick_hz > 0 else 0.0
        t0 = time.monotonic()
        self._send(
            ws,
            "query",
            start_state=record.start_state.to_dict(),
            task_id=self.spec.task_id.value,
            query_index=record.index,
        )
        while True:
            record.attempts += 1
            self._episode_counter += 1
            episode_id = self._episode_counter
            env.reset_to_state(record.start_state)
            transitions = []
            while True:
                state = env.observe()
                self._send(
                    ws,
                    "frame",
                    episode=episode_id,
                    state=state.to_dict(),
                    step=env.t,
                    reward=transitions[-1].r if transitions else 0.0,
                    final=False,
                )
                action = self._recv_action(ws, episode_id)
                tr = env.step(action)
                transitions.append(tr)
                if tick:
                    time.sleep(tick)
                if tr.terminal:
                    break
            self._send(
                ws,
                "frame",
                episode=episode_id,
                state=env.observe().to_dict(),
                step=env.t,
                reward=transitions[-1].r,
                final=True,
            )
            self._send(ws, "episode_end", cause=transitions[-1].cause.value)
            if transitions[-1].cause is TerminalCause.GOAL:
                record.duration_ms = (time.monotonic() - t0) * 1e3
                record.demo = Demonstration(
                    transitions=transitions,
                    start_state=record.start_state.copy(),
                    success=True,
                    source="Human",
                    task_id=self.spec.task_id.value,
                )
                self._collected += 1
                point = task_point(self.spec, record.start_state)
                self._past_queries.append([float(point[0]), float(point[1])])
                self._send(
                    ws,
                    "demo_accepted",
                    attempts=record.attempts,
                    duration_ms=record.duration_ms,
                    collected=self._collected,
                    budget=self.demo_budget,
                )
                self._send(ws, "trace", past_query_points=list(self._past_queries))
                return


class RemoteDemonstrator:
    """Blocking demonstrator backed by a bridge session.

    Returns only successful demonstrations; the bridge loops failed attempts
    internally and reports the attempt count and wall-clock duration.
    """

    def __init__(self, spec: TaskSpec, port: int, tick_hz: float = 20.0,
                 timeout: float = 600.0, bridge: QueryBridge | None = None):
        if bridge is None:
            bridge = QueryBridge(spec, port, tick_hz=tick_hz, session_timeout=timeout)
            bridge.start()
        self.bridge = bridge
        self.spec = spec
        self._index = 0
        self.last_attempts = 1
        self.last_duration_ms = 0.0
        self.records: list[QueryRecord] = []

    def demonstrate(self, start: EnvState, rng: np.random.Generator) -> Demonstration:
        record = self.bridge.request_demo(start, self._index)
        self._index += 1
        self.last_attempts = record.attempts
        self.last_duration_ms = record.duration_ms
        self.records.append(record)
        return record.demo
