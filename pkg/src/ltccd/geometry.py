"""Planar polygon helpers for footprint/pixel overlap.

Footprints are simple (non-self-intersecting) polygons in projected map
coordinates, given as vertex lists without a repeated closing vertex.
Pixel cells are axis-aligned rectangles, so clipping reduces to
Sutherland-Hodgman against four half-planes.
"""

from __future__ import annotations

from typing import Sequence

Point = tuple[float, float]


def polygon_area(vertices: Sequence[Point]) -> float:
    """Absolute shoelace area; 0.0 for degenerate inputs."""
    n = len(vertices)
    if n < 3:
        return 0.0
    total = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return abs(total) / 2.0


def clip_to_rect(
    vertices: Sequence[Point],
    xmin: float,
    ymin: float,
    xmax: float,
    ymax: float,
) -> list[Point]:
    """Clip a simple polygon to an axis-aligned rectangle.

    Returns the clipped vertex ring, possibly empty.
    """
    def clip_edge(poly: list[Point], inside, intersect) -> list[Point]:
        out: list[Point] = []
        n = len(poly)
        for i in range(n):
            cur = poly[i]
            prev = poly[i - 1]
            cur_in = inside(cur)
            prev_in = inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def x_cross(p: Point, q: Point, x: float) -> Point:
        t = (x - p[0]) / (q[0] - p[0])
        return (x, p[1] + t * (q[1] - p[1]))

    def y_cross(p: Point, q: Point, y: float) -> Point:
        t = (y - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), y)

    poly = list(vertices)
    for inside, intersect in (
        (lambda p: p[0] >= xmin, lambda p, q: x_cross(p, q, xmin)),
        (lambda p: p[0] <= xmax, lambda p, q: x_cross(p, q, xmax)),
        (lambda p: p[1] >= ymin, lambda p, q: y_cross(p, q, ymin)),
        (lambda p: p[1] <= ymax, lambda p, q: y_cross(p, q, ymax)),
    ):
        if not poly:
            return []
        poly = clip_edge(poly, inside, intersect)
    return poly


def rect_overlap_area(
    vertices: Sequence[Point],
    xmin: float,
    ymin: float,
    xmax: float,
    ymax: float,
) -> float:
    """Area of polygon ∩ rectangle."""
    return polygon_area(clip_to_rect(vertices, xmin, ymin, xmax, ymax))


def point_in_polygon(point: Point, vertices: Sequence[Point]) -> bool:
    """Ray-casting test; points on an edge count as inside."""
    x, y = point
    n = len(vertices)
    inside = False
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        # on-edge check: collinear and within the segment's bounding box
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if (
            abs(cross) < 1e-9
            and min(x1, x2) - 1e-9 <= x <= max(x1, x2) + 1e-9
            and min(y1, y2) - 1e-9 <= y <= max(y1, y2) + 1e-9
        ):
            return True
        if (y1 > y) != (y2 > y):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_at:
                inside = not inside
    return inside


def bounding_box(vertices: Sequence[Point]) -> tuple[float, float, float, float]:
    xs = [v[0] for v in vertices]
    ys = [v[1] for v in vertices]
    return min(xs), min(ys), max(xs), max(ys)
