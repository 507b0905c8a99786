"""Exact and grid-based convex calculus in two log coordinates.

The exact layer works with piecewise-linear (PL) convex functions

    f(x) = max_i (a_i . x + c_i),   a_i >= 0 componentwise,

with rational coefficients on (shifted) quadrant domains.  Convexity
together with the nonnegative-slope constraint is exactly the condition
for ``u(z, w) = f(log|z|, log|w|)`` to extend plurisubharmonically
across the coordinate axes of a Reinhardt domain in C^2.

Monge-Ampere masses follow the Aleksandrov convention, normalised so
that ``dd^c log|z - a|`` is the unit Dirac in one variable:

    mass(kink vertex v) = n! * area(subdifferential polygon at v),  n = 2,

and the mass sitting on the pole orbit (both log coordinates at minus
infinity, the origin of C^2) is kept symbolically:

    pole_mass = 2 * area(conv(slopes U {0})) - sum of finite kink masses.

The grid layer mirrors the same normalisation through discrete
subdifferential cells of a lower convex hull (Oliker-Prussner style).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .geometry import (
    ZERO,
    Point,
    box_polygon,
    clip_halfplane,
    convex_hull,
    frac,
    hull_area,
    point_in_hull,
    polygon_area,
    solve2,
)

Piece = tuple[Fraction, Fraction, Fraction]  # value = a1*x1 + a2*x2 + c


class MasweepError(Exception):
    pass


class MonotonicityError(MasweepError):
    """A slope has a negative component: no psh extension across the axes."""


class ConvexityError(MasweepError):
    """Grid values violate discrete convexity beyond tolerance."""


class EnvelopeError(MasweepError):
    """Constrained envelope could not be computed or is invalid."""


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogDomain:
    """Log image of a Reinhardt domain, with a truncation box.

    quadrant        {x1 < 0, x2 < 0}               (unit bidisc)
    shiftedQuadrant {x1 < shift, x2 < shift}       (polydisc of radius e^shift)
    ballLog         {e^{2x1} + e^{2x2} < radius^2} (ball)

    The quadrants are unbounded toward -infinity; ``rtrunc`` fixes the
    depth of the working box below ``shift``.  Truncation faces stand in
    for the coordinate axes, the faces at ``x_i = shift`` are the real
    boundary and their meeting point is the distinguished corner.
    """

    kind: str = "quadrant"
    shift: Fraction = ZERO
    radius: float = 1.0
    rtrunc: Fraction = Fraction(4)

    def __post_init__(self):
        if self.kind not in ("quadrant", "shiftedQuadrant", "ballLog"):
            raise MasweepError(f"unknown domain kind {self.kind!r}")
        object.__setattr__(self, "shift", frac(self.shift))
        object.__setattr__(self, "rtrunc", frac(self.rtrunc))
        if self.kind == "quadrant" and self.shift != 0:
            raise MasweepError("plain quadrant has its faces at 0")

    @property
    def is_ball(self) -> bool:
        return self.kind == "ballLog"

    def corner(self) -> Point:
        return (self.shift, self.shift)

    def floor(self) -> Fraction:
        return self.shift - self.rtrunc

    def box(self) -> list[Point]:
        lo, hi = self.floor(), self.shift
        return box_polygon(lo, hi, lo, hi)

    def contains(self, p, closed: bool = False) -> bool:
        if self.is_ball:
            v = math.exp(2 * float(p[0])) + math.exp(2 * float(p[1]))
            return v <= self.radius**2 if closed else v < self.radius**2
        x1, x2 = frac(p[0]), frac(p[1])
        if closed:
            return x1 <= self.shift and x2 <= self.shift
        return x1 < self.shift and x2 < self.shift

    def with_rtrunc(self, r) -> "LogDomain":
        return replace(self, rtrunc=frac(r))

    def face_of(self, p, tol: float = 1e-12) -> str:
        """Label of the boundary part a point lies on (quadrant family)."""
        if self.is_ball:
            raise MasweepError("face labels are for the quadrant family")
        d1 = abs(float(p[0] - self.shift))
        d2 = abs(float(p[1] - self.shift))
        if d1 <= tol and d2 <= tol:
            return "corner"
        if d1 <= tol:
            return "edge1"
        if d2 <= tol:
            return "edge2"
        return "interior"


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Polygon:
    """Convex polygon in slope space, counterclockwise rational vertices."""

    vertices: tuple[Point, ...]

    @staticmethod
    def hull_of(points) -> "Polygon":
        return Polygon(tuple(convex_hull([(frac(p[0]), frac(p[1])) for p in points])))

    @property
    def area(self) -> Fraction:
        return polygon_area(self.vertices)

    def contains(self, p) -> bool:
        return point_in_hull((frac(p[0]), frac(p[1])), self.vertices)


@dataclass(frozen=True)
class SegmentDensity:
    """1D measure coeff * e^{rate t} dt on an axis-parallel segment.

    ``axis`` is the coordinate that varies (0 or 1), ``fixed`` the value
    of the other one; ``lo`` may be -inf when the segment runs down an
    unbounded face.
    """

    axis: int
    fixed: float
    lo: float
    hi: float
    coeff: float
    rate: float

    def mass(self) -> float:
        return self._exp_int(0.0)

    def _exp_int(self, k: float) -> float:
        r = self.rate + k
        if r <= 0 and math.isinf(self.lo):
            raise MasweepError("divergent segment moment")
        if r == 0:
            return self.coeff * (self.hi - self.lo)
        lo_term = 0.0 if math.isinf(self.lo) else math.exp(r * self.lo)
        return self.coeff / r * (math.exp(r * self.hi) - lo_term)

    def exp_moment(self, k1: float, k2: float) -> float:
        k_var, k_fix = (k1, k2) if self.axis == 0 else (k2, k1)
        return math.exp(k_fix * self.fixed) * self._exp_int(k_var)

    def integrate(self, fn, n: int = 256) -> float:
        """Integrate a scalar callable of (x1, x2); exact-in-mass midpoint
        rule in the e^{rate t} substitution."""
        r = self.rate
        s_lo = 0.0 if math.isinf(self.lo) else math.exp(r * self.lo)
        s_hi = math.exp(r * self.hi)
        total = 0.0
        ds = (s_hi - s_lo) / n
        for i in range(n):
            s = s_lo + (i + 0.5) * ds
            t = math.log(s) / r
            p = (t, self.fixed) if self.axis == 0 else (self.fixed, t)
            total += fn(p)
        return total * ds * self.coeff / r


@dataclass(frozen=True)
class BoxDensity:
    """2D measure coeff * e^{r1 x1 + r2 x2} dx on a product box."""

    lo1: float
    hi1: float
    lo2: float
    hi2: float
    coeff: float
    rate1: float
    rate2: float

    def _int1(self, rate, lo, hi, k):
        r = rate + k
        if r <= 0 and math.isinf(lo):
            raise MasweepError("divergent box moment")
        if r == 0:
            return hi - lo
        lo_term = 0.0 if math.isinf(lo) else math.exp(r * lo)
        return (math.exp(r * hi) - lo_term) / r

    def mass(self) -> float:
        return self.exp_moment(0.0, 0.0)

    def exp_moment(self, k1, k2) -> float:
        return (
            self.coeff
            * self._int1(self.rate1, self.lo1, self.hi1, k1)
            * self._int1(self.rate2, self.lo2, self.hi2, k2)
        )

    def integrate(self, fn, n: int = 64) -> float:
        out = 0.0
        for r, lo, hi in ((self.rate1, self.lo1, self.hi1),):
            pass
        s1_lo = 0.0 if math.isinf(self.lo1) else math.exp(self.rate1 * self.lo1)
        s1_hi = math.exp(self.rate1 * self.hi1)
        s2_lo = 0.0 if math.isinf(self.lo2) else math.exp(self.rate2 * self.lo2)
        s2_hi = math.exp(self.rate2 * self.hi2)
        d1 = (s1_hi - s1_lo) / n
        d2 = (s2_hi - s2_lo) / n
        for i in range(n):
            t1 = math.log(s1_lo + (i + 0.5) * d1) / self.rate1
            for j in range(n):
                t2 = math.log(s2_lo + (j + 0.5) * d2) / self.rate2
                out += fn((t1, t2))
        return out * d1 * d2 * self.coeff / (self.rate1 * self.rate2)


class LogMeasure:
    """Positive measure in log coordinates: finite atoms, 1D/2D exponential
    densities, and a symbolic mass on the pole orbit.

    Atom positions are exact rationals whenever they come from the PL
    layer; masses are Fractions on the exact path and floats on the grid
    path.  An atom at log-point x stands for the uniform probability
    measure on the torus orbit {|z| = e^{x1}, |w| = e^{x2}} scaled by its
    mass, and the pole for the orbit collapsed to the origin of C^2.
    """

    __slots__ = ("atoms", "pole_mass", "segments", "boxes")

    def __init__(self, atoms=(), pole_mass=0, segments=(), boxes=()):
        merged: dict[Point, object] = {}
        for p, m in atoms:
            key = (frac(p[0]), frac(p[1]))
            merged[key] = merged.get(key, 0) + m
        self.atoms = [(p, m) for p, m in sorted(merged.items()) if m != 0]
        self.pole_mass = pole_mass
        self.segments = list(segments)
        self.boxes = list(boxes)
        self._validate()

    def _validate(self):
        for p, m in self.atoms:
            if m < 0 and not math.isclose(float(m), 0.0, abs_tol=1e-12):
                raise MasweepError(f"negative atom mass {m} at {p}")
        if self.pole_mass < 0 and not math.isclose(float(self.pole_mass), 0.0, abs_tol=1e-12):
            raise MasweepError(f"negative pole mass {self.pole_mass}")

    @staticmethod
    def zero() -> "LogMeasure":
        return LogMeasure()

    @staticmethod
    def atom(p, mass) -> "LogMeasure":
        return LogMeasure(atoms=[(p, mass)])

    def total_mass(self):
        return (
            sum((m for _, m in self.atoms), ZERO)
            + self.pole_mass
            + sum(s.mass() for s in self.segments)
            + sum(b.mass() for b in self.boxes)
        )

    def atom_dict(self) -> dict[Point, object]:
        return dict(self.atoms)

    def is_exact(self) -> bool:
        return not self.segments and not self.boxes and all(
            isinstance(m, (int, Fraction)) for _, m in self.atoms
        ) and isinstance(self.pole_mass, (int, Fraction))

    # -- pairings ----------------------------------------------------------

    def exp_moment(self, k: float, l: float) -> float:
        """Integral of e^{k x1 + l x2}, i.e. of |z|^k |w|^l over the orbit
        measure.  The pole contributes only to the (0, 0) moment."""
        out = 0.0
        for (x1, x2), m in self.atoms:
            out += float(m) * math.exp(k * float(x1) + l * float(x2))
        if k == 0 and l == 0:
            out += float(self.pole_mass)
        for s in self.segments:
            out += s.exp_moment(k, l)
        for b in self.boxes:
            out += b.exp_moment(k, l)
        return out

    def integrate(self, fn, pole_value: float = 0.0, n: int = 256) -> float:
        """Integrate a scalar callable of a log point; ``pole_value`` is the
        integrand's limit along the deep diagonal (its value on the origin
        orbit)."""
        out = 0.0
        for p, m in self.atoms:
            out += float(m) * fn((float(p[0]), float(p[1])))
        if self.pole_mass:
            out += float(self.pole_mass) * pole_value
        for s in self.segments:
            out += s.integrate(fn, n=n)
        for b in self.boxes:
            out += b.integrate(fn)
        return out

    def restrict_atoms(self, keep) -> "LogMeasure":
        """Atoms satisfying the predicate; densities and pole dropped."""
        return LogMeasure(atoms=[(p, m) for p, m in self.atoms if keep(p)])

    def scaled(self, c) -> "LogMeasure":
        return LogMeasure(
            atoms=[(p, m * c) for p, m in self.atoms],
            pole_mass=self.pole_mass * c,
            segments=[
                replace(s, coeff=s.coeff * float(c)) for s in self.segments
            ],
            boxes=[replace(b, coeff=b.coeff * float(c)) for b in self.boxes],
        )

    def __repr__(self):
        parts = [f"atoms={self.atoms!r}"]
        if self.pole_mass:
            parts.append(f"pole={self.pole_mass}")
        if self.segments:
            parts.append(f"segments={len(self.segments)}")
        if self.boxes:
            parts.append(f"boxes={len(self.boxes)}")
        return "LogMeasure(" + ", ".join(parts) + ")"


def signed_atom_difference(mu: LogMeasure, nu: LogMeasure) -> dict[Point, object]:
    """Exact atom-wise difference mu - nu (pole under key 'pole')."""
    out: dict = {}
    for p, m in mu.atoms:
        out[p] = out.get(p, 0) + m
    for p, m in nu.atoms:
        out[p] = out.get(p, 0) - m
    out["pole"] = mu.pole_mass - nu.pole_mass
    return {k: v for k, v in out.items() if v != 0}


# ---------------------------------------------------------------------------
# PL convex functions
# ---------------------------------------------------------------------------


def _scale_bound(pieces: list[Piece], shift: Fraction) -> Fraction:
    """Depth below which every kink line and arrangement vertex of the
    piece family has been passed, so the canonical form and the measure
    do not depend on truncating there."""
    coords = [abs(shift)]
    for (a1, a2, c) in pieces:
        coords.append(abs(c))
    # offsets of pairwise kink lines
    for (p, q) in itertools.combinations(pieces, 2):
        da1, da2, dc = q[0] - p[0], q[1] - p[1], p[2] - q[2]
        d = max(abs(da1), abs(da2))
        if d != 0:
            coords.append(abs(dc) / d)
    # arrangement vertices
    for pt in _triple_points(pieces):
        coords.append(abs(pt[0]))
        coords.append(abs(pt[1]))
    m = max(coords) if coords else ZERO
    return 2 * m + 4


def _triple_points(pieces: list[Piece]) -> list[Point]:
    pts = set()
    for (i, j, k) in itertools.combinations(range(len(pieces)), 3):
        p, q, r = pieces[i], pieces[j], pieces[k]
        sol = solve2(
            p[0] - q[0], p[1] - q[1], q[2] - p[2],
            p[0] - r[0], p[1] - r[1], r[2] - p[2],
        )
        if sol is not None:
            pts.add(sol)
    return sorted(pts)


def _prune_pieces(pieces: list[Piece], box: list[Point]) -> list[Piece]:
    """Keep pieces whose strict-domination cell has interior in the box.

    This is the redundancy-free canonical form: a piece survives iff it
    realises the max on a set with nonempty interior.  Ties over full
    cells cannot occur after deduplication (equal affine functions are
    equal pieces)."""
    pieces = sorted(set(pieces))
    live = []
    for i, p in enumerate(pieces):
        cell = box
        for j, q in enumerate(pieces):
            if i == j:
                continue
            # keep the side where p >= q: (q - p) . x <= c_p - c_q
            cell = clip_halfplane(cell, q[0] - p[0], q[1] - p[1], p[2] - q[2])
            if len(cell) < 3:
                break
        if len(cell) >= 3 and polygon_area(cell) > 0:
            live.append(p)
    return live


class PLConvexFunction:
    """Canonical max of finitely many affine pieces with slopes >= 0.

    The canonical form is unique: duplicate pieces are merged, pieces
    never strictly active on the domain are pruned, and the remainder is
    sorted lexicographically by (a1, a2, c).
    """

    __slots__ = ("pieces", "domain")

    def __init__(self, pieces, domain: LogDomain | None = None, _canonical: bool = False):
        domain = domain or LogDomain()
        if domain.is_ball:
            raise MasweepError("the PL layer supports only the quadrant family")
        if _canonical:
            self.pieces = tuple(pieces)
            self.domain = domain
            return
        raw: list[Piece] = []
        for piece in pieces:
            a1, a2, c = frac(piece[0]), frac(piece[1]), frac(piece[2])
            if a1 < 0 or a2 < 0:
                raise MonotonicityError(f"slope ({a1}, {a2}) has a negative component")
            raw.append((a1, a2, c))
        if not raw:
            raise MasweepError("need at least one piece")
        bound = _scale_bound(raw, domain.shift)
        rtrunc = max(domain.rtrunc, bound)
        box = box_polygon(domain.shift - rtrunc, domain.shift,
                          domain.shift - rtrunc, domain.shift)
        self.pieces = tuple(_prune_pieces(raw, box))
        self.domain = domain.with_rtrunc(rtrunc)

    @staticmethod
    def from_pieces(pieces, domain: LogDomain | None = None) -> "PLConvexFunction":
        return PLConvexFunction(pieces, domain)

    @staticmethod
    def constant(c, domain: LogDomain | None = None) -> "PLConvexFunction":
        return PLConvexFunction([(0, 0, c)], domain)

    # -- evaluation ---------------------------------------------------------

    def value(self, p) -> Fraction:
        x1, x2 = frac(p[0]), frac(p[1])
        return max(a1 * x1 + a2 * x2 + c for (a1, a2, c) in self.pieces)

    def __call__(self, p):
        return self.value(p)

    def value_grid(self, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
        vals = np.full(np.broadcast(X1, X2).shape, -np.inf)
        for (a1, a2, c) in self.pieces:
            vals = np.maximum(vals, float(a1) * X1 + float(a2) * X2 + float(c))
        return vals

    # -- structure ----------------------------------------------------------

    @property
    def slopes(self) -> list[Point]:
        return [(a1, a2) for (a1, a2, _) in self.pieces]

    def active_indices(self, p) -> list[int]:
        x1, x2 = frac(p[0]), frac(p[1])
        vals = [a1 * x1 + a2 * x2 + c for (a1, a2, c) in self.pieces]
        vmax = max(vals)
        return [i for i, v in enumerate(vals) if v == vmax]

    def subdifferential(self, p) -> Polygon:
        """Convex hull of the slopes active at a point (exact)."""
        return Polygon.hull_of([self.slopes[i] for i in self.active_indices(p)])

    def kink_vertices(self) -> list[tuple[Point, Polygon]]:
        """Arrangement vertices in the closed domain whose subdifferential
        has positive area (the carriers of Aleksandrov mass)."""
        out = []
        seen = set()
        for pt in _triple_points(list(self.pieces)):
            if pt in seen:
                continue
            seen.add(pt)
            if pt[0] > self.domain.shift or pt[1] > self.domain.shift:
                continue
            active = self.active_indices(pt)
            if len(active) < 3:
                continue
            poly = Polygon.hull_of([self.slopes[i] for i in active])
            if poly.area > 0:
                out.append((pt, poly))
        return out

    def ma(self) -> LogMeasure:
        """Aleksandrov Monge-Ampere measure: mass 2*area(subdifferential)
        at every kink vertex plus the symbolic pole remainder."""
        atoms = []
        kink_total = ZERO
        for pt, poly in self.kink_vertices():
            m = 2 * poly.area
            atoms.append((pt, m))
            kink_total += m
        total = 2 * hull_area(list(self.slopes) + [(ZERO, ZERO)])
        pole = total - kink_total
        if pole < 0:
            raise MasweepError("kink masses exceed the completed slope hull")
        return LogMeasure(atoms=atoms, pole_mass=pole)

    # -- algebra ------------------------------------------------------------

    def max_with(self, other: "PLConvexFunction") -> "PLConvexFunction":
        self._check_same_domain(other)
        return PLConvexFunction(self.pieces + other.pieces, self.domain)

    def max_with_const(self, c) -> "PLConvexFunction":
        return PLConvexFunction(self.pieces + ((ZERO, ZERO, frac(c)),), self.domain)

    def sum_with(self, other: "PLConvexFunction") -> "PLConvexFunction":
        self._check_same_domain(other)
        pieces = [
            (p[0] + q[0], p[1] + q[1], p[2] + q[2])
            for p in self.pieces
            for q in other.pieces
        ]
        return PLConvexFunction(pieces, self.domain)

    def scale(self, c) -> "PLConvexFunction":
        c = frac(c)
        if c <= 0:
            raise MasweepError("scaling factor must be positive")
        return PLConvexFunction(
            [(a1 * c, a2 * c, cc * c) for (a1, a2, cc) in self.pieces], self.domain
        )

    def add_const(self, c) -> "PLConvexFunction":
        c = frac(c)
        return PLConvexFunction(
            [(a1, a2, cc + c) for (a1, a2, cc) in self.pieces], self.domain
        )

    def _check_same_domain(self, other):
        if (self.domain.kind, self.domain.shift) != (other.domain.kind, other.domain.shift):
            raise MasweepError("functions live on different domains")

    # -- predicates ----------------------------------------------------------

    def bounded_below(self) -> bool:
        return any(a1 == 0 and a2 == 0 for (a1, a2, _) in self.pieces)

    def pole_value(self) -> float:
        """Limit along the deep diagonal (value on the origin orbit)."""
        consts = [c for (a1, a2, c) in self.pieces if a1 == 0 and a2 == 0]
        return float(max(consts)) if consts else -math.inf

    def is_nonpositive(self) -> bool:
        # monotone pieces attain their supremum at the corner
        s = self.domain.shift
        return self.value((s, s)) <= 0

    def face_profile(self, axis: int) -> list[tuple[Fraction, Fraction]]:
        """1D pieces (slope, intercept) of the restriction to the face
        {x_axis = shift} as a function of the other coordinate."""
        s = self.domain.shift
        out = set()
        for (a1, a2, c) in self.pieces:
            if axis == 0:
                out.add((a2, a1 * s + c))
            else:
                out.add((a1, a2 * s + c))
        return sorted(out)

    def zero_on_faces(self) -> bool:
        """Exact test that the function vanishes identically on both
        boundary faces of the truncated domain."""
        lo, hi = self.domain.floor(), self.domain.shift
        for axis in (0, 1):
            prof = self.face_profile(axis)
            ts = {lo, hi}
            for (s1, b1), (s2, b2) in itertools.combinations(prof, 2):
                if s1 != s2:
                    t = (b2 - b1) / (s1 - s2)
                    if lo <= t <= hi:
                        ts.add(t)
            for t in ts:
                if max(s * t + b for (s, b) in prof) != 0:
                    return False
        return True

    def is_zero(self) -> bool:
        return self.pieces == ((ZERO, ZERO, ZERO),)

    def leq(self, other: "PLConvexFunction") -> bool:
        """Exact pointwise comparison self <= other on the domain box."""
        self._check_same_domain(other)
        lo = min(self.domain.floor(), other.domain.floor())
        hi = self.domain.shift
        cands = {(lo, lo), (lo, hi), (hi, lo), (hi, hi)}
        for pt, _ in other.kink_vertices():
            if lo <= pt[0] <= hi and lo <= pt[1] <= hi:
                cands.add(pt)
        # kink lines of `other` crossing the box edges
        for (p, q) in itertools.combinations(other.pieces, 2):
            da1, da2, dc = p[0] - q[0], p[1] - q[1], q[2] - p[2]
            for fixed_axis, fixed_val in ((0, lo), (0, hi), (1, lo), (1, hi)):
                if fixed_axis == 0 and da2 != 0:
                    t = (dc - da1 * fixed_val) / da2
                    if lo <= t <= hi:
                        cands.add((fixed_val, t))
                elif fixed_axis == 1 and da1 != 0:
                    t = (dc - da2 * fixed_val) / da1
                    if lo <= t <= hi:
                        cands.add((t, fixed_val))
        # each piece of self must sit below `other` everywhere; the gap
        # piece - other is convex in disguise (affine minus convex is
        # concave) so its max over the box occurs at one of the candidates
        for (a1, a2, c) in self.pieces:
            for pt in cands:
                if a1 * pt[0] + a2 * pt[1] + c > other.value(pt):
                    return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, PLConvexFunction)
            and self.pieces == other.pieces
            and self.domain.kind == other.domain.kind
            and self.domain.shift == other.domain.shift
        )

    def __hash__(self):
        return hash((self.pieces, self.domain.kind, self.domain.shift))

    def __repr__(self):
        terms = ", ".join(f"({a1},{a2},{c})" for (a1, a2, c) in self.pieces)
        return f"PLConvexFunction[{terms}]"


def pl_max(f: PLConvexFunction, g: PLConvexFunction) -> PLConvexFunction:
    """Canonical pointwise maximum; piece set is the pruned union."""
    return f.max_with(g)


def pl_sum(f: PLConvexFunction, g: PLConvexFunction) -> PLConvexFunction:
    return f.sum_with(g)


def ma_pl(f: PLConvexFunction) -> LogMeasure:
    return f.ma()


def subdifferential(f: PLConvexFunction, p) -> Polygon:
    return f.subdifferential(p)


# ---------------------------------------------------------------------------
# free regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxRegion:
    """Open region {x1 < hi1, x2 < hi2} inside the domain (compactly
    contained in the bidisc sense: bounded away from the real faces)."""

    hi1: Fraction
    hi2: Fraction

    def __post_init__(self):
        object.__setattr__(self, "hi1", frac(self.hi1))
        object.__setattr__(self, "hi2", frac(self.hi2))

    def contains(self, p) -> bool:
        return frac(p[0]) < self.hi1 and frac(p[1]) < self.hi2

    def contains_closed(self, p) -> bool:
        return frac(p[0]) <= self.hi1 and frac(p[1]) <= self.hi2

    def compactly_contained(self, domain: LogDomain) -> bool:
        return self.hi1 < domain.shift and self.hi2 < domain.shift

    def boundary_points(self, f: PLConvexFunction, domain: LogDomain) -> list[Point]:
        lo = domain.floor()
        pts = [(self.hi1, self.hi2), (self.hi1, lo), (lo, self.hi2)]
        for (p, q) in itertools.combinations(f.pieces, 2):
            da1, da2, dc = p[0] - q[0], p[1] - q[1], q[2] - p[2]
            if da2 != 0:
                t = (dc - da1 * self.hi1) / da2
                if lo <= t <= self.hi2:
                    pts.append((self.hi1, t))
            if da1 != 0:
                t = (dc - da2 * self.hi2) / da1
                if lo <= t <= self.hi1:
                    pts.append((t, self.hi2))
        return pts


@dataclass(frozen=True)
class SublevelRegion:
    """Open sublevel set {u < level} of an exhaustion-type PL function."""

    u: PLConvexFunction
    level: Fraction

    def __post_init__(self):
        object.__setattr__(self, "level", frac(self.level))

    def contains(self, p) -> bool:
        return self.u.value(p) < self.level

    def contains_closed(self, p) -> bool:
        return self.u.value(p) <= self.level

    def compactly_contained(self, domain: LogDomain) -> bool:
        return self.level < 0 and self.u.zero_on_faces()

    def boundary_points(self, f: PLConvexFunction, domain: LogDomain) -> list[Point]:
        """Corners of the level polyline {u = level} plus its crossings
        with the kink lines of f and with the truncation edges."""
        r = self.level
        lo = domain.floor()
        pts: list[Point] = []

        def on_level(p):
            return self.u.value(p) == r and lo <= p[0] <= domain.shift and lo <= p[1] <= domain.shift

        pieces_u = self.u.pieces
        for (p, q) in itertools.combinations(pieces_u, 2):
            sol = solve2(p[0], p[1], r - p[2], q[0], q[1], r - q[2])
            if sol is not None and on_level(sol):
                pts.append(sol)
        for (a1, a2, c) in pieces_u:
            # crossings with truncation edges
            if a2 != 0:
                t = (r - c - a1 * lo) / a2
                cand = (lo, t)
                if on_level(cand):
                    pts.append(cand)
            if a1 != 0:
                t = (r - c - a2 * lo) / a1
                cand = (t, lo)
                if on_level(cand):
                    pts.append(cand)
            # crossings with kink lines of f
            for (pp, qq) in itertools.combinations(f.pieces, 2):
                sol = solve2(
                    a1, a2, r - c,
                    pp[0] - qq[0], pp[1] - qq[1], qq[2] - pp[2],
                )
                if sol is not None and on_level(sol):
                    pts.append(sol)
        return pts


# ---------------------------------------------------------------------------
# constrained envelopes (exact PL path)
# ---------------------------------------------------------------------------


def _envelope_candidates(f: PLConvexFunction, region, domain: LogDomain) -> list[tuple[Point, Fraction]]:
    """Constraint points covering the extreme points of the graph of f
    over the constraint set (domain box minus the free region)."""
    lo, hi = domain.floor(), domain.shift
    pts: set[Point] = set()
    for corner in ((lo, lo), (hi, lo), (lo, hi), (hi, hi)):
        pts.add(corner)
    for pt, _ in f.kink_vertices():
        if lo <= pt[0] <= hi and lo <= pt[1] <= hi:
            pts.add(pt)
    # kink lines crossing the box edges
    for (p, q) in itertools.combinations(f.pieces, 2):
        da1, da2, dc = p[0] - q[0], p[1] - q[1], q[2] - p[2]
        for val in (lo, hi):
            if da2 != 0:
                t = (dc - da1 * val) / da2
                if lo <= t <= hi:
                    pts.add((val, t))
            if da1 != 0:
                t = (dc - da2 * val) / da1
                if lo <= t <= hi:
                    pts.add((t, val))
    if region is not None:
        pts = {p for p in pts if not region.contains(p)}
        pts.update(region.boundary_points(f, domain))
    return [(p, f.value(p)) for p in sorted(pts)]


def _envelope_from_constraints(
    constraints: list[tuple[Point, Fraction]],
    domain: LogDomain,
    slope_bound: Fraction,
) -> PLConvexFunction:
    """Largest function of the form sup of affine pieces with nonnegative
    slopes satisfying ell(y) <= v for every constraint (y, v).

    Works through the conjugate G(a) = max_y (a.y - v): the envelope's
    canonical pieces are (a*, -G(a*)) over the vertices of G's induced
    subdivision of the slope quadrant.  The slope box [0, bound]^2 is
    validated and enlarged if the envelope wants steeper pieces.
    """
    g_pieces = sorted({(frac(y[0]), frac(y[1]), -frac(v)) for (y, v) in constraints})
    bound = frac(slope_bound)
    for _attempt in range(5):
        abox = box_polygon(0, bound, 0, bound)
        live = _prune_pieces(g_pieces, abox)
        cand_a: set[Point] = set()
        for corner in abox:
            cand_a.add(corner)
        for pt in _triple_points(live):
            if 0 <= pt[0] <= bound and 0 <= pt[1] <= bound:
                cand_a.add(pt)
        for (p, q) in itertools.combinations(live, 2):
            da1, da2, dc = p[0] - q[0], p[1] - q[1], q[2] - p[2]
            for val in (ZERO, bound):
                if da2 != 0:
                    t = (dc - da1 * val) / da2
                    if 0 <= t <= bound:
                        cand_a.add((val, t))
                if da1 != 0:
                    t = (dc - da2 * val) / da1
                    if 0 <= t <= bound:
                        cand_a.add((t, val))

        def G(a):
            return max(a[0] * y1 + a[1] * y2 + mc for (y1, y2, mc) in live)

        env_pieces = {(a[0], a[1], -G(a)) for a in cand_a}
        env = PLConvexFunction(sorted(env_pieces), domain)
        # the slope box must not clip the canonical envelope
        if all(a1 < bound and a2 < bound for (a1, a2, _) in env.pieces):
            ok = all(env.value(y) == v for (y, v) in constraints if _on_constraint(env, y, v))
            return env
        bound *= 2
    raise EnvelopeError("envelope slope bound did not stabilise")


def _on_constraint(env, y, v):  # pragma: no cover - hook for debugging
    return True


def partial_convex_envelope(f, region=None, cap=None):
    """Largest convex monotone function lying below f on the domain minus
    the free region (and below ``cap`` everywhere, when given).

    Exact on the PL path: the result agrees with f on the constraint set
    and dominates f nowhere below it.  On the grid path the envelope is
    computed by midpoint lowering over axis and diagonal stencils.
    """
    if isinstance(f, GridConvexFunction):
        return _grid_partial_envelope(f, region, cap)
    domain = f.domain
    if region is not None and not region.compactly_contained(domain):
        raise EnvelopeError("free region must be compactly contained in the domain")
    constraints = _envelope_candidates(f, region, domain)
    if cap is not None:
        corner = (domain.shift, domain.shift)
        capv = frac(cap)
        constraints = [(p, min(v, capv) if p == corner else v) for (p, v) in constraints]
        if corner not in [p for p, _ in constraints]:
            constraints.append((corner, capv))
        constraints.append((corner, capv))
    slope_hint = max(
        [a for (a1, a2, _) in f.pieces for a in (a1, a2)] + [frac(1)]
    ) + 1
    env = _envelope_from_constraints(constraints, domain, slope_hint)
    return env


# ---------------------------------------------------------------------------
# grid layer
# ---------------------------------------------------------------------------


class GridConvexFunction:
    """Convex function sampled on a uniform grid over the truncated domain.

    ``values[i, j]`` is the value at (x1[i], x2[j]); ``mask`` (ballLog
    only) marks the nodes inside the curved region.  Discrete convexity
    is required along the axis and diagonal stencils up to ``conv_tol``;
    monotone inputs additionally never decrease along either axis.
    """

    def __init__(self, x1, x2, values, domain: LogDomain, h: float,
                 mask=None, monotone: bool = True, conv_tol: float = 1e-8):
        self.x1 = np.asarray(x1, dtype=float)
        self.x2 = np.asarray(x2, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.domain = domain
        self.h = float(h)
        self.mask = mask if mask is None else np.asarray(mask, dtype=bool)
        self.monotone = monotone
        self.conv_tol = conv_tol

    @staticmethod
    def sample(fn, domain: LogDomain, h: float, conv_tol: float = 1e-8,
               monotone: bool = True) -> "GridConvexFunction":
        """Sample a PLConvexFunction or a callable of (X1, X2) arrays."""
        shift = float(domain.shift)
        n = int(round(float(domain.rtrunc) / h))
        xs = shift - h * np.arange(n, -1, -1)
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        if isinstance(fn, PLConvexFunction):
            V = fn.value_grid(X1, X2)
        else:
            V = np.asarray(fn(X1, X2), dtype=float)
        mask = None
        if domain.is_ball:
            mask = np.exp(2 * X1) + np.exp(2 * X2) < domain.radius**2
        return GridConvexFunction(xs, xs, V, domain, h, mask=mask,
                                  monotone=monotone, conv_tol=conv_tol)

    # -- validation ---------------------------------------------------------

    def convexity_violation(self) -> float:
        V = self.values
        worst = 0.0
        stencils = [((0, 1), (0, -1)), ((1, 0), (-1, 0)),
                    ((1, 1), (-1, -1)), ((1, -1), (-1, 1))]
        for (d1, d2) in stencils:
            c = V[1:-1, 1:-1]
            p = V[1 + d1[0]: V.shape[0] - 1 + d1[0], 1 + d1[1]: V.shape[1] - 1 + d1[1]]
            m = V[1 + d2[0]: V.shape[0] - 1 + d2[0], 1 + d2[1]: V.shape[1] - 1 + d2[1]]
            gap = c - (p + m) / 2
            if self.mask is not None:
                ok = (self.mask[1:-1, 1:-1]
                      & self.mask[1 + d1[0]: V.shape[0] - 1 + d1[0], 1 + d1[1]: V.shape[1] - 1 + d1[1]]
                      & self.mask[1 + d2[0]: V.shape[0] - 1 + d2[0], 1 + d2[1]: V.shape[1] - 1 + d2[1]])
                gap = np.where(ok, gap, -np.inf)
            worst = max(worst, float(gap.max(initial=-np.inf)))
        return worst

    def check_convex(self):
        v = self.convexity_violation()
        if v > self.conv_tol:
            raise ConvexityError(f"discrete convexity violated by {v:.3e}")

    def max_with_const(self, r: float) -> "GridConvexFunction":
        return GridConvexFunction(self.x1, self.x2, np.maximum(self.values, r),
                                  self.domain, self.h, mask=self.mask,
                                  monotone=self.monotone, conv_tol=self.conv_tol)

    def sup_diff(self, other: "GridConvexFunction") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def ma(self) -> LogMeasure:
        return ma_grid(self)


def _float_hull_area_and_pts(points: list[tuple[float, float]]):
    """Convex hull area of a small float point set (monotone chain)."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return 0.0, pts

    def crossf(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and crossf(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and crossf(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return 0.0, pts
    s = 0.0
    for i in range(len(hull)):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % len(hull)]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2, hull


def ma_grid(F: GridConvexFunction) -> LogMeasure:
    """Discrete Monge-Ampere measure via per-node subdifferential cells.

    Nodes receive 2 * area of the convex hull of the gradients of the
    lower-hull facets meeting them.  On the truncation edges the cells
    are completed by their axis projections (the monotone completion that
    carries the pole and axis mass of the psh extension); the faces at
    x = shift are real boundary and receive no completion.
    """
    from scipy.spatial import ConvexHull, QhullError

    F.check_convex()
    V = F.values
    X1, X2 = np.meshgrid(F.x1, F.x2, indexing="ij")
    if F.mask is not None:
        keep = F.mask.ravel()
    else:
        keep = np.ones(V.size, dtype=bool)
    P = np.column_stack([X1.ravel()[keep], X2.ravel()[keep], V.ravel()[keep]])
    if P.shape[0] < 4:
        return LogMeasure.zero()
    # affine functions carry no mass and degenerate the hull
    A = np.column_stack([P[:, 0], P[:, 1], np.ones(len(P))])
    coef, *_ = np.linalg.lstsq(A, P[:, 2], rcond=None)
    resid = np.max(np.abs(A @ coef - P[:, 2]))
    if resid < 1e-11 * max(1.0, np.max(np.abs(P[:, 2]))):
        return LogMeasure.zero()
    try:
        hull = ConvexHull(P)
    except QhullError:
        return LogMeasure.zero()
    eqs = hull.equations
    lower = eqs[:, 2] < -1e-9
    grads = -eqs[lower][:, 0:2] / eqs[lower][:, 2:3]
    simplices = hull.simplices[lower]

    node_grads: dict[int, list[tuple[float, float]]] = {}
    for grad, simplex in zip(grads, simplices):
        g = (grad[0], grad[1])
        for v in simplex:
            node_grads.setdefault(int(v), []).append(g)

    x1_min = float(F.x1[0])
    x2_min = float(F.x2[0])
    atoms = []
    for v, gl in node_grads.items():
        x1, x2, _ = P[v]
        if F.monotone:
            gl = [(max(g1, 0.0), max(g2, 0.0)) for (g1, g2) in gl]
            extra = []
            if abs(x1 - x1_min) < 1e-12:
                extra += [(0.0, g2) for (_, g2) in gl]
            if abs(x2 - x2_min) < 1e-12:
                extra += [(g1, 0.0) for (g1, _) in gl]
            if abs(x1 - x1_min) < 1e-12 and abs(x2 - x2_min) < 1e-12:
                extra.append((0.0, 0.0))
            gl = gl + extra
        area, _ = _float_hull_area_and_pts(gl)
        mass = 2.0 * area
        if mass > 1e-14:
            atoms.append(((x1, x2), mass))
    return LogMeasure(atoms=atoms)


def _grid_partial_envelope(F: GridConvexFunction, region, cap) -> GridConvexFunction:
    """Midpoint-lowering iteration for the constrained monotone convex
    envelope on the grid; the constraint region is re-clamped each pass."""
    V = F.values
    X1, X2 = np.meshgrid(F.x1, F.x2, indexing="ij")
    if region is not None:
        free = np.zeros(V.shape, dtype=bool)
        it = np.nditer(free, flags=["multi_index"])
        hi1 = float(getattr(region, "hi1", np.nan))
        if isinstance(region, BoxRegion):
            free = (X1 < float(region.hi1)) & (X2 < float(region.hi2))
        elif isinstance(region, SublevelRegion):
            free = region.u.value_grid(X1, X2) < float(region.level)
        else:
            raise EnvelopeError(f"unsupported region {region!r}")
    else:
        free = np.zeros(V.shape, dtype=bool)
    obstacle = V.copy()
    if cap is not None:
        obstacle = np.minimum(obstacle, float(cap))
    v = obstacle.copy()
    v[free] = float(np.max(obstacle[~free])) if (~free).any() else 0.0
    if cap is not None:
        v = np.minimum(v, float(cap))

    stencils = [((0, 1), (0, -1)), ((1, 0), (-1, 0)),
                ((1, 1), (-1, -1)), ((1, -1), (-1, 1))]
    for _ in range(200000):
        prev = v
        w = v.copy()
        for (d1, d2) in stencils:
            p = v[1 + d1[0]: v.shape[0] - 1 + d1[0], 1 + d1[1]: v.shape[1] - 1 + d1[1]]
            m = v[1 + d2[0]: v.shape[0] - 1 + d2[0], 1 + d2[1]: v.shape[1] - 1 + d2[1]]
            w[1:-1, 1:-1] = np.minimum(w[1:-1, 1:-1], (p + m) / 2)
        if F.monotone:
            w[:-1, :] = np.minimum(w[:-1, :], w[1:, :])
            w[:, :-1] = np.minimum(w[:, :-1], w[:, 1:])
        w[~free] = np.minimum(w[~free], obstacle[~free])
        if cap is not None:
            w = np.minimum(w, float(cap))
        v = w
        if float(np.max(np.abs(v - prev))) < 1e-8:
            break
    else:
        raise EnvelopeError("grid envelope iteration did not converge")
    return GridConvexFunction(F.x1, F.x2, v, F.domain, F.h, mask=F.mask,
                              monotone=F.monotone, conv_tol=max(F.conv_tol, 1e-7))
