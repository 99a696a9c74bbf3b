"""Waypoint planning around rectangular obstacles.

Two planners over the same corner graph: straight-line shortest paths for
the reach tasks, and rectilinear (axis-aligned leg) paths for pushing, where
face contact only ever moves the cube along one axis at a time.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from .geometry import Rect, segment_rect_distance, vec2


def _per_obstacle(clearance, obstacles) -> list[float]:
    if np.isscalar(clearance):
        return [float(clearance)] * len(obstacles)
    if len(clearance) != len(obstacles):
        raise ValueError("need one clearance per obstacle")
    return [float(c) for c in clearance]


def _clearance_ok(p0, p1, obstacles, clearances) -> bool:
    return all(
        segment_rect_distance(p0, p1, ob) >= c for ob, c in zip(obstacles, clearances)
    )


def _nodes(start, target, obstacles, clearances, bounds: Rect, corner_margin: float):
    nodes = [np.asarray(start, dtype=float), np.asarray(target, dtype=float)]
    for ob, c in zip(obstacles, clearances):
        for corner in ob.inflate(c + corner_margin).corners():
            if not bounds.contains(corner):
                continue
            if _clearance_ok(corner, corner, obstacles, clearances):
                nodes.append(corner)
    return nodes


def _dijkstra(n_nodes, edges) -> list[int] | None:
    """Shortest 0 -> 1 path; `edges[u]` lists (v, cost) pairs."""
    dist = [math.inf] * n_nodes
    prev = [-1] * n_nodes
    dist[0] = 0.0
    heap = [(0.0, 0)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == 1:
            break
        for v, c in edges[u]:
            nd = d + c
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if not math.isfinite(dist[1]):
        return None
    path = [1]
    while path[-1] != 0:
        path.append(prev[path[-1]])
    return path[::-1]


def plan_straight(
    start,
    target,
    obstacles: list[Rect],
    clearance,
    bounds: Rect,
    corner_margin: float = 0.004,
) -> list[np.ndarray] | None:
    """Euclidean shortest waypoint chain keeping `clearance` from obstacles.

    `clearance` is a scalar or one value per obstacle.  Returns the waypoints
    after `start` (target included), or None when the target is unreachable
    at this clearance.
    """
    clearances = _per_obstacle(clearance, obstacles)
    nodes = _nodes(start, target, obstacles, clearances, bounds, corner_margin)
    edges: list[list[tuple[int, float]]] = [[] for _ in nodes]
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if _clearance_ok(nodes[i], nodes[j], obstacles, clearances):
                c = float(np.hypot(*(nodes[i] - nodes[j])))
                edges[i].append((j, c))
                edges[j].append((i, c))
    idx_path = _dijkstra(len(nodes), edges)
    if idx_path is None:
        return None
    return [nodes[i] for i in idx_path[1:]]


def _elbow_ok(p0, p1, obstacles, clearances, prefer_x_first: bool):
    """Pick a collision-free L-path p0 -> elbow -> p1; returns elbow or None."""
    options = [vec2(p1[0], p0[1]), vec2(p0[0], p1[1])]
    if not prefer_x_first:
        options.reverse()
    for elbow in options:
        if _clearance_ok(p0, elbow, obstacles, clearances) and _clearance_ok(
            elbow, p1, obstacles, clearances
        ):
            return elbow
    return None


def plan_rectilinear(
    start,
    target,
    obstacles: list[Rect],
    clearance,
    bounds: Rect,
    corner_margin: float = 0.004,
    leg_ok=None,
) -> list[np.ndarray] | None:
    """Axis-aligned waypoint chain from start to target (elbows included).

    Edges of the search graph are L-paths between corner nodes, costed by
    Manhattan length, so every returned leg moves along a single axis.
    `leg_ok(p0, p1)`, when given, must accept every leg of an edge for the
    edge to enter the graph (e.g. a pushability test).
    """
    clearances = _per_obstacle(clearance, obstacles)
    nodes = _nodes(start, target, obstacles, clearances, bounds, corner_margin)
    edges: list[list[tuple[int, float]]] = [[] for _ in nodes]
    elbows: dict[tuple[int, int], np.ndarray | None] = {}

    def usable(p0, elbow, p1) -> bool:
        if leg_ok is None:
            return True
        for a, b in ((p0, elbow), (elbow, p1)):
            if float(np.abs(b - a).max()) > 1e-12 and not leg_ok(a, b):
                return False
        return True

    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            elbow = None
            for x_first in (True, False):
                cand = _elbow_ok(
                    nodes[i], nodes[j], obstacles, clearances, prefer_x_first=x_first
                )
                if cand is not None and usable(nodes[i], cand, nodes[j]) and usable(
                    nodes[j], cand, nodes[i]
                ):
                    elbow = cand
                    break
            if elbow is None:
                continue
            c = float(np.abs(nodes[i] - nodes[j]).sum())
            edges[i].append((j, c))
            edges[j].append((i, c))
            elbows[(i, j)] = elbow
    idx_path = _dijkstra(len(nodes), edges)
    if idx_path is None:
        return None
    waypoints: list[np.ndarray] = []
    for u, v in zip(idx_path, idx_path[1:]):
        key = (u, v) if (u, v) in elbows else (v, u)
        elbow = elbows[key]
        prev = nodes[u] if not waypoints else waypoints[-1]
        for wp in (elbow, nodes[v]):
            if float(np.abs(wp - prev).max()) > 1e-12:
                waypoints.append(wp)
                prev = wp
    return waypoints
