"""Exact rational primitives for planar convex geometry.

Points are ``(Fraction, Fraction)`` pairs and every predicate here is
exact; floats are accepted anywhere and converted to their exact binary
rational value, so float inputs never introduce rounding inside the
geometry itself.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

Point = tuple[Fraction, Fraction]

ZERO = Fraction(0)


def frac(x) -> Fraction:
    """Coerce ints, floats, strings and Fractions to an exact Fraction."""
    if isinstance(x, Fraction):
        return x
    return Fraction(x)


def fpoint(p) -> Point:
    return (frac(p[0]), frac(p[1]))


def cross(o: Point, a: Point, b: Point) -> Fraction:
    """Signed area of the parallelogram spanned by o->a and o->b."""
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[Point]) -> list[Point]:
    """Counterclockwise convex hull (monotone chain), interior and
    collinear points dropped.  Degenerate inputs return their extreme
    points (two for a segment, one for a point, empty for no input)."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:  # all collinear
        return [pts[0], pts[-1]]
    return hull


def polygon_area(vertices: Sequence[Point]) -> Fraction:
    """Area of a simple polygon given in counterclockwise order."""
    if len(vertices) < 3:
        return ZERO
    s = ZERO
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2


def hull_area(points: Iterable[Point]) -> Fraction:
    return polygon_area(convex_hull(points))


def clip_halfplane(poly: Sequence[Point], a, b, c) -> list[Point]:
    """Intersect a convex polygon (CCW vertex list) with {a*x + b*y <= c}.

    Returns the clipped polygon; empty list if the intersection has no
    interior and has collapsed to nothing.
    """
    a, b, c = frac(a), frac(b), frac(c)
    if not poly:
        return []
    out: list[Point] = []
    n = len(poly)
    for i in range(n):
        p = poly[i]
        q = poly[(i + 1) % n]
        fp = a * p[0] + b * p[1] - c
        fq = a * q[0] + b * q[1] - c
        if fp <= 0:
            out.append(p)
            if fq > 0:
                t = fp / (fp - fq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif fq < 0:
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    # drop exact duplicates produced by vertices lying on the cut line
    dedup: list[Point] = []
    for p in out:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) >= 2 and dedup[0] == dedup[-1]:
        dedup.pop()
    return dedup


def box_polygon(x_lo, x_hi, y_lo, y_hi) -> list[Point]:
    """CCW rectangle [x_lo, x_hi] x [y_lo, y_hi]."""
    x0, x1, y0, y1 = frac(x_lo), frac(x_hi), frac(y_lo), frac(y_hi)
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def solve2(a11, a12, b1, a21, a22, b2) -> Point | None:
    """Solve the 2x2 linear system exactly; None if singular."""
    det = a11 * a22 - a12 * a21
    if det == 0:
        return None
    return ((b1 * a22 - b2 * a12) / det, (a11 * b2 - a21 * b1) / det)


def point_in_hull(p: Point, hull: Sequence[Point]) -> bool:
    """Membership in the closed convex hull given as a CCW vertex list."""
    n = len(hull)
    if n == 0:
        return False
    if n == 1:
        return p == hull[0]
    if n == 2:
        a, b = hull
        if cross(a, b, p) != 0:
            return False
        lo = (min(a[0], b[0]), min(a[1], b[1]))
        hi = (max(a[0], b[0]), max(a[1], b[1]))
        return lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]
    for i in range(n):
        if cross(hull[i], hull[(i + 1) % n], p) < 0:
            return False
    return True
