"""Planar collision primitives: axis-aligned rectangles, segments, discs.

Everything works on plain floats / length-2 numpy arrays in workspace
coordinates (meters).  Collision predicates use strict penetration
(`distance < radius`), so exact tangency counts as touching, not colliding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Vec2 = np.ndarray


def vec2(x, y) -> Vec2:
    return np.array([float(x), float(y)])


@dataclass(frozen=True)
class Rect:
    """Solid axis-aligned rectangle given by its min/max corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValueError(f"degenerate rect {self}")

    @classmethod
    def from_center(cls, cx: float, cy: float, half_x: float, half_y: float) -> "Rect":
        return cls(cx - half_x, cy - half_y, cx + half_x, cy + half_y)

    @property
    def center(self) -> Vec2:
        return vec2(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def inflate(self, d: float) -> "Rect":
        return Rect(self.xmin - d, self.ymin - d, self.xmax + d, self.ymax + d)

    def contains(self, p: Vec2) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax

    def clip(self, p: Vec2) -> Vec2:
        return vec2(
            min(max(p[0], self.xmin), self.xmax),
            min(max(p[1], self.ymin), self.ymax),
        )

    def corners(self) -> list[Vec2]:
        return [
            vec2(self.xmin, self.ymin),
            vec2(self.xmax, self.ymin),
            vec2(self.xmax, self.ymax),
            vec2(self.xmin, self.ymax),
        ]

    def edges(self) -> list[tuple[Vec2, Vec2]]:
        c = self.corners()
        return [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]


def point_rect_distance(p: Vec2, rect: Rect) -> float:
    """Distance from a point to a solid rectangle (0 if inside)."""
    dx = max(rect.xmin - p[0], 0.0, p[0] - rect.xmax)
    dy = max(rect.ymin - p[1], 0.0, p[1] - rect.ymax)
    return math.hypot(dx, dy)


def rects_overlap(a: Rect, b: Rect) -> bool:
    """Strict interior overlap; shared edges do not count."""
    return a.xmin < b.xmax and a.xmax > b.xmin and a.ymin < b.ymax and a.ymax > b.ymin


def _pt_seg_dist(px, py, ax, ay, bx, by) -> float:
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * abx + (py - ay) * aby) / denom
    t = min(max(t, 0.0), 1.0)
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> float:
    return _pt_seg_dist(p[0], p[1], a[0], a[1], b[0], b[1])


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_seg(ax, ay, bx, by, cx, cy) -> bool:
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


def _segs_intersect(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y) -> bool:
    d1 = _orient(q1x, q1y, q2x, q2y, p1x, p1y)
    d2 = _orient(q1x, q1y, q2x, q2y, p2x, p2y)
    d3 = _orient(p1x, p1y, p2x, p2y, q1x, q1y)
    d4 = _orient(p1x, p1y, p2x, p2y, q2x, q2y)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_seg(q1x, q1y, q2x, q2y, p1x, p1y):
        return True
    if d2 == 0 and _on_seg(q1x, q1y, q2x, q2y, p2x, p2y):
        return True
    if d3 == 0 and _on_seg(p1x, p1y, p2x, p2y, q1x, q1y):
        return True
    if d4 == 0 and _on_seg(p1x, p1y, p2x, p2y, q2x, q2y):
        return True
    return False


def segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool:
    """Closed-segment intersection, including collinear overlap and endpoints."""
    return _segs_intersect(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1], q2[0], q2[1])


def _seg_seg_dist(a1x, a1y, a2x, a2y, b1x, b1y, b2x, b2y) -> float:
    if _segs_intersect(a1x, a1y, a2x, a2y, b1x, b1y, b2x, b2y):
        return 0.0
    return min(
        _pt_seg_dist(a1x, a1y, b1x, b1y, b2x, b2y),
        _pt_seg_dist(a2x, a2y, b1x, b1y, b2x, b2y),
        _pt_seg_dist(b1x, b1y, a1x, a1y, a2x, a2y),
        _pt_seg_dist(b2x, b2y, a1x, a1y, a2x, a2y),
    )


def segment_segment_distance(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> float:
    return _seg_seg_dist(a1[0], a1[1], a2[0], a2[1], b1[0], b1[1], b2[0], b2[1])


def segment_rect_distance(p0: Vec2, p1: Vec2, rect: Rect) -> float:
    """Distance between a segment and a solid rectangle (0 on contact/overlap)."""
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    xa, ya, xb, yb = rect.xmin, rect.ymin, rect.xmax, rect.ymax
    if (xa <= x0 <= xb and ya <= y0 <= yb) or (xa <= x1 <= xb and ya <= y1 <= yb):
        return 0.0
    best = math.inf
    for ex0, ey0, ex1, ey1 in (
        (xa, ya, xb, ya),
        (xb, ya, xb, yb),
        (xb, yb, xa, yb),
        (xa, yb, xa, ya),
    ):
        d = _seg_seg_dist(x0, y0, x1, y1, ex0, ey0, ex1, ey1)
        if d == 0.0:
            return 0.0
        best = min(best, d)
    return best


def swept_disc_hits_rect(p0: Vec2, p1: Vec2, radius: float, rect: Rect) -> bool:
    """True when a disc moving from p0 to p1 penetrates the rectangle.

    Exact for the swept capsule, so thin walls cannot be tunneled through.
    """
    return segment_rect_distance(p0, p1, rect) < radius


def disc_rect_mtv(center: Vec2, radius: float, rect: Rect) -> Vec2 | None:
    """Minimum translation of the RECTANGLE that resolves disc penetration.

    Returns None when there is no strict penetration.  After translating the
    rectangle by the returned vector the disc exactly touches it.
    """
    closest = rect.clip(center)
    d = center - closest
    dist = float(np.hypot(*d))
    if dist > 1e-12:
        if dist >= radius:
            return None
        return -(d / dist) * (radius - dist)
    # Disc center on or inside the rectangle: escape through the nearest face.
    moves = [
        vec2(-((rect.xmax - center[0]) + radius), 0.0),
        vec2((center[0] - rect.xmin) + radius, 0.0),
        vec2(0.0, -((rect.ymax - center[1]) + radius)),
        vec2(0.0, (center[1] - rect.ymin) + radius),
    ]
    return min(moves, key=lambda m: float(np.hypot(*m)))


def disc_rect_penetration(center: Vec2, radius: float, rect: Rect) -> float:
    """Penetration depth of a disc into a rectangle (0 when separated)."""
    closest = rect.clip(center)
    dist = float(np.hypot(*(center - closest)))
    if dist > 1e-12:
        return max(0.0, radius - dist)
    # Center on or inside the rectangle: depth measured to the nearest face.
    depth = min(
        center[0] - rect.xmin,
        rect.xmax - center[0],
        center[1] - rect.ymin,
        rect.ymax - center[1],
    )
    return radius + max(depth, 0.0)


def rotate_about(p: Vec2, pivot: Vec2, angle: float) -> Vec2:
    c, s = math.cos(angle), math.sin(angle)
    d = p - pivot
    return vec2(pivot[0] + c * d[0] - s * d[1], pivot[1] + s * d[0] + c * d[1])
