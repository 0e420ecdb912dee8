"""Planar vector primitives and road-network topology repair.

Coordinates are projected meters (x east, y north). No reprojection happens
anywhere in the package; callers must project geographic data beforehand.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

SNAP_TOLERANCE = 0.5
EXTEND_MAX = 500.0
TRIM_MIN = 500.0


class PlanarPoint(NamedTuple):
    x: float
    y: float


class RoadClass(enum.IntEnum):
    L1 = 1  # motorway, trunk
    L2 = 2  # national and regional roads
    L3 = 3  # local roads


_BUFFER_WIDTH = {RoadClass.L1: 40.0, RoadClass.L2: 20.0, RoadClass.L3: 10.0}


def buffer_width(road_class: RoadClass | int) -> float:
    """Full widened road width in meters for a road class."""
    return _BUFFER_WIDTH[RoadClass(road_class)]


def _id_key(value) -> tuple:
    return (0, value, "") if isinstance(value, int) else (1, 0, str(value))


@dataclass(frozen=True)
class RoadPolyline:
    id: int | str
    vertices: tuple[PlanarPoint, ...]
    road_class: RoadClass = RoadClass.L3

    def __post_init__(self):
        verts = tuple(PlanarPoint(float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "road_class", RoadClass(self.road_class))
        if len(verts) < 2:
            raise ValueError(f"road {self.id}: needs at least 2 vertices")
        for p in verts:
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise ValueError(f"road {self.id}: non-finite coordinate")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise ValueError(f"road {self.id}: repeated consecutive vertex {a}")

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.vertices, self.vertices[1:]))

    def segments(self):
        return zip(self.vertices, self.vertices[1:])


def ring_signed_area(ring: Sequence[PlanarPoint]) -> float:
    n = len(ring)
    s = 0.0
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s / 2.0


def _open_ring(ring) -> tuple[PlanarPoint, ...]:
    pts = [PlanarPoint(float(x), float(y)) for x, y in ring]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    return tuple(pts)


@dataclass(frozen=True)
class SimplePolygon:
    """Polygon with an open exterior ring (CCW) and open hole rings (CW)."""

    exterior: tuple[PlanarPoint, ...]
    holes: tuple[tuple[PlanarPoint, ...], ...] = ()

    @classmethod
    def from_rings(cls, exterior, holes=()) -> "SimplePolygon":
        """Build from possibly-closed rings, fixing orientation."""
        ext = _open_ring(exterior)
        if len(ext) < 3:
            raise ValueError("exterior ring needs at least 3 distinct vertices")
        if ring_signed_area(ext) < 0:
            ext = ext[::-1]
        hs = []
        for h in holes:
            h = _open_ring(h)
            if ring_signed_area(h) > 0:
                h = h[::-1]
            hs.append(h)
        return cls(ext, tuple(hs))

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "SimplePolygon":
        return cls.from_rings([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])

    @property
    def rings(self) -> tuple[tuple[PlanarPoint, ...], ...]:
        return (self.exterior,) + self.holes

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)

    def translated(self, dx: float, dy: float) -> "SimplePolygon":
        def mv(r):
            return tuple(PlanarPoint(x + dx, y + dy) for x, y in r)
        return SimplePolygon(mv(self.exterior), tuple(mv(h) for h in self.holes))

    def scaled(self, k: float) -> "SimplePolygon":
        def sc(r):
            return tuple(PlanarPoint(x * k, y * k) for x, y in r)
        return SimplePolygon(sc(self.exterior), tuple(sc(h) for h in self.holes))


def polygon_area(poly: SimplePolygon) -> float:
    """Shoelace area of the exterior minus the holes."""
    ext = abs(ring_signed_area(poly.exterior))
    if ext == 0:
        raise ValueError("degenerate exterior ring (zero area)")
    area = ext - sum(abs(ring_signed_area(h)) for h in poly.holes)
    if not area > 0:
        raise ValueError("degenerate polygon (non-positive area)")
    return area


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def ring_is_simple(ring: Sequence[PlanarPoint]) -> bool:
    n = len(ring)
    if n < 3:
        return False
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # neighbours share a vertex
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


def validate_polygon(poly: SimplePolygon) -> None:
    for k, ring in enumerate(poly.rings):
        if not ring_is_simple(ring):
            raise ValueError(f"ring {k} is self-intersecting or degenerate")
    if ring_signed_area(poly.exterior) <= 0:
        raise ValueError("exterior ring must be counter-clockwise")
    if any(ring_signed_area(h) >= 0 for h in poly.holes):
        raise ValueError("hole rings must be clockwise")
    polygon_area(poly)


# --- topology repair --------------------------------------------------------

def point_segment_distance(p, a, b) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def point_road_distance(p, road: RoadPolyline) -> float:
    return min(point_segment_distance(p, a, b) for a, b in road.segments())


def _ray_hit(origin, direction, a, b) -> float | None:
    """Distance along a unit ray to segment ab, or None if it misses."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    dx, dy = direction
    den = dx * ey - dy * ex
    if den == 0:
        return None  # parallel or collinear: treated as a miss
    wx, wy = a[0] - origin[0], a[1] - origin[1]
    t = (wx * ey - wy * ex) / den
    s = (wx * dy - wy * dx) / den
    if t <= 1e-9 or s < 0.0 or s > 1.0:
        return None
    return t


def _endpoint_rays(road: RoadPolyline):
    """(is_end, endpoint, unit outward direction) for both ends."""
    v = road.vertices
    for is_end, tip, prev in ((False, v[0], v[1]), (True, v[-1], v[-2])):
        dx, dy = tip[0] - prev[0], tip[1] - prev[1]
        n = math.hypot(dx, dy)
        yield is_end, tip, (dx / n, dy / n)


def dangling_ends(road: RoadPolyline, others: Sequence[RoadPolyline],
                  snap: float = SNAP_TOLERANCE) -> list[bool]:
    """[start dangles, end dangles] relative to the other roads."""
    out = []
    for tip in (road.vertices[0], road.vertices[-1]):
        out.append(all(point_road_distance(tip, o) > snap for o in others))
    return out


def _repair_pass(roads: list[RoadPolyline], extend_max: float, trim_min: float,
                 snap: float) -> list[RoadPolyline]:
    extended = []
    for i, road in enumerate(roads):
        others = roads[:i] + roads[i + 1:]
        dangles = dangling_ends(road, others, snap)
        verts = list(road.vertices)
        for (is_end, tip, d), dangling in zip(_endpoint_rays(road), dangles):
            if not dangling:
                continue
            best = None
            for o in others:
                for a, b in o.segments():
                    t = _ray_hit(tip, d, a, b)
                    if t is not None and t <= extend_max and (best is None or t < best):
                        best = t
            if best is not None:
                hit = PlanarPoint(tip[0] + best * d[0], tip[1] + best * d[1])
                if is_end:
                    verts.append(hit)
                else:
                    verts.insert(0, hit)
        extended.append(replace(road, vertices=tuple(verts)) if len(verts) != len(road.vertices) else road)

    kept = []
    for i, road in enumerate(extended):
        others = extended[:i] + extended[i + 1:]
        if any(dangling_ends(road, others, snap)) and road.length < trim_min:
            continue
        kept.append(road)
    return kept


def repair_topology(roads: Sequence[RoadPolyline], extend_max: float = EXTEND_MAX,
                    trim_min: float = TRIM_MIN, snap: float = SNAP_TOLERANCE) -> list[RoadPolyline]:
    """Extend dangling road ends onto nearby roads, then drop short dangling stubs.

    A dangling endpoint is one farther than ``snap`` from every other road. Its
    ray (continuing the final segment) is extended to the nearest crossing road
    within ``extend_max``. Afterwards any road still dangling and shorter than
    ``trim_min`` is removed. Passes repeat until nothing changes, which makes
    the operation idempotent.
    """
    current = sorted(roads, key=lambda r: _id_key(r.id))
    for _ in range(len(current) + 1):
        nxt = _repair_pass(current, extend_max, trim_min, snap)
        if nxt == current:
            break
        current = nxt
    return current
