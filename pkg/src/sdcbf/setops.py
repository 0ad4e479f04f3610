"""Axis-aligned box arithmetic and plain interval arithmetic.

Boxes carry state-uncertainty sets and one-step reachable sets; intervals
carry enclosures of scalar expressions evaluated over boxes.  All enclosures
are inclusion-isotone: f(x) is inside interval_eval(f, X) for every x in X.

The arithmetic is deliberately plain (no affine forms).  `square` is provided
as a dependency-aware primitive so expressions like 1 - 4*square(p) do not pay
the x*x decorrelation penalty.  Functions meant to be evaluated over boxes
should be written against the dispatching helpers in this module (`sin`,
`cos`, `square`, ...) so the same code runs on floats, numpy batches, and
intervals.

Everything here is immutable by convention and safe for concurrent use.
"""

from __future__ import annotations

import math

import numpy as np

_HALF_PI = math.pi / 2.0
_TWO_PI = 2.0 * math.pi


class Interval:
    """A closed scalar interval [lo, hi] with inclusion-monotone arithmetic."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = float(lo)
        hi = lo if hi is None else float(hi)
        if not (lo <= hi):
            raise ValueError(f"invalid interval: lo={lo} > hi={hi}")
        self.lo = lo
        self.hi = hi

    # -- queries ----------------------------------------------------------

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack

    def hull(self, other: "Interval") -> "Interval":
        other = as_interval(other)
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def sample(self, rng: np.random.Generator) -> float:
        return self.lo + (self.hi - self.lo) * rng.random()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o = as_interval(other)
        return Interval(self.lo + o.lo, self.hi + o.hi)

    __radd__ = __add__

    def __sub__(self, other):
        o = as_interval(other)
        return Interval(self.lo - o.hi, self.hi - o.lo)

    def __rsub__(self, other):
        return as_interval(other) - self

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        o = as_interval(other)
        c = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return Interval(min(c), max(c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_interval(other)
        if o.lo <= 0.0 <= o.hi:
            raise ZeroDivisionError(f"interval division by {o} containing 0")
        return self * Interval(1.0 / o.hi, 1.0 / o.lo)

    def __rtruediv__(self, other):
        return as_interval(other) / self

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("interval powers support nonnegative integers only")
        if k == 0:
            return Interval(1.0, 1.0)
        if k % 2 == 0:
            return square(self) ** (k // 2) if k > 2 else square(self)
        return self * (self ** (k - 1))

    def __eq__(self, other):
        return isinstance(other, Interval) and self.lo == other.lo and self.hi == other.hi

    def __hash__(self):
        return hash((self.lo, self.hi))

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"


def as_interval(x) -> Interval:
    """Coerce a scalar to a degenerate interval; pass intervals through."""
    if isinstance(x, Interval):
        return x
    return Interval(float(x))


def square(x):
    """Dependency-aware x**2: the enclosure never dips below 0."""
    if isinstance(x, Interval):
        if x.lo >= 0.0:
            return Interval(x.lo * x.lo, x.hi * x.hi)
        if x.hi <= 0.0:
            return Interval(x.hi * x.hi, x.lo * x.lo)
        return Interval(0.0, max(x.lo * x.lo, x.hi * x.hi))
    return np.square(x)


def sin(x):
    if isinstance(x, Interval):
        if x.hi - x.lo >= _TWO_PI:
            return Interval(-1.0, 1.0)
        lo, hi = math.sin(x.lo), math.sin(x.hi)
        vlo, vhi = min(lo, hi), max(lo, hi)
        # peaks at pi/2 + 2k*pi, troughs at -pi/2 + 2k*pi inside [x.lo, x.hi]
        if math.floor((x.hi - _HALF_PI) / _TWO_PI) >= math.ceil((x.lo - _HALF_PI) / _TWO_PI):
            vhi = 1.0
        if math.floor((x.hi + _HALF_PI) / _TWO_PI) >= math.ceil((x.lo + _HALF_PI) / _TWO_PI):
            vlo = -1.0
        return Interval(vlo, vhi)
    return np.sin(x)


def cos(x):
    if isinstance(x, Interval):
        return sin(Interval(x.lo + _HALF_PI, x.hi + _HALF_PI))
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Interval):
        if x.lo < 0.0:
            raise ValueError(f"sqrt of interval {x} reaching below 0")
        return Interval(math.sqrt(x.lo), math.sqrt(x.hi))
    return np.sqrt(x)


def iv_lo(x) -> float:
    return x.lo if isinstance(x, Interval) else float(x)


def iv_hi(x) -> float:
    return x.hi if isinstance(x, Interval) else float(x)


def iv_mid(x) -> float:
    return x.mid if isinstance(x, Interval) else float(x)


def iv_rad(x) -> float:
    return x.rad if isinstance(x, Interval) else 0.0


def component(x, i):
    """i-th state component of a batch array (..., n) or a sequence of scalars/Intervals."""
    if isinstance(x, np.ndarray):
        return x[..., i]
    return x[i]


def join_like(parts, like):
    """Assemble scalar components into the same structure as `like`.

    Batch arrays come back as (..., n) float arrays; interval/scalar sequences
    come back as plain lists.
    """
    if isinstance(like, np.ndarray):
        shape = like.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(p, dtype=float), shape)
                         for p in parts], axis=-1)
    return list(parts)


def iv_dot(row, vec) -> Interval:
    """Interval-aware dot product of two 1-D sequences (entries float or Interval)."""
    acc = as_interval(0.0)
    for a, b in zip(row, vec):
        if isinstance(a, Interval) or isinstance(b, Interval):
            acc = acc + as_interval(a) * as_interval(b)
        else:
            acc = acc + float(a) * float(b)
    return acc


def iv_matvec(mat, vec) -> list:
    """Matrix @ vector with float or Interval entries; returns list of Interval."""
    return [iv_dot(row, vec) for row in mat]


def iv_vecmat(vec, mat) -> list:
    """Row-vector @ matrix with float or Interval entries."""
    ncols = len(mat[0])
    return [iv_dot(vec, [row[j] for row in mat]) for j in range(ncols)]


class Box:
    """Axis-aligned interval vector: {x : lo <= x <= hi componentwise}."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise ValueError(f"box bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi componentwise")
        self.lo = lo
        self.hi = hi
        self.lo.flags.writeable = False
        self.hi.flags.writeable = False

    @classmethod
    def point(cls, x) -> "Box":
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    @classmethod
    def from_radius(cls, center, radius) -> "Box":
        center = np.asarray(center, dtype=float)
        radius = np.broadcast_to(np.asarray(radius, dtype=float), center.shape)
        if np.any(radius < 0):
            raise ValueError("box radius must be nonnegative")
        return cls(center - radius, center + radius)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def contains(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack))

    def contains_box(self, other: "Box", slack: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - slack) and np.all(other.hi <= self.hi + slack))

    def translate(self, v) -> "Box":
        v = np.asarray(v, dtype=float)
        return Box(self.lo + v, self.hi + v)

    def inflate(self, factor: float = 1.0, margin: float = 0.0) -> "Box":
        rad = self.rad * factor + margin
        return Box.from_radius(self.mid, rad)

    def intervals(self) -> list:
        return [Interval(float(l), float(h)) for l, h in zip(self.lo, self.hi)]

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.dim,) if n is None else (n, self.dim)
        return self.lo + (self.hi - self.lo) * rng.random(shape)

    def vertices(self) -> np.ndarray:
        """All 2^d corner points (rows). Degenerate axes collapse duplicates."""
        cols = [np.array([l, h]) if h > l else np.array([l]) for l, h in zip(self.lo, self.hi)]
        grids = np.meshgrid(*cols, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def box_sum(a: Box, b: Box) -> Box:
    """Minkowski sum of two boxes."""
    if a.dim != b.dim:
        raise ValueError(f"box dimension mismatch: {a.dim} vs {b.dim}")
    return Box(a.lo + b.lo, a.hi + b.hi)


def interval_eval(fn, x_box: Box):
    """Enclose fn over a box by running fn on the box's interval components.

    fn must be written against this module's dispatching primitives
    (+, -, *, /, square, sin, cos, ...).  Returns whatever structure fn
    returns, with Interval (or degenerate float) entries.
    """
    return fn(x_box.intervals())


def hull_with_zero(iv: Interval) -> Interval:
    return Interval(min(0.0, iv.lo), max(0.0, iv.hi))


def ellipsoid_box(P: np.ndarray, level: float) -> Box:
    """Tightest axis-aligned box around the ellipsoid {x : x^T P x <= level}.

    Half-width along axis i is sqrt(level * (P^-1)_ii).
    """
    if level < 0:
        raise ValueError("ellipsoid level must be nonnegative")
    Pinv = np.linalg.inv(P)
    rad = np.sqrt(np.maximum(level * np.diag(Pinv), 0.0))
    return Box(-rad, rad)


class EnclosureError(RuntimeError):
    """Raised when the one-step reachability fixpoint fails to contract."""


def reachable_box(
    model,
    x0,
    dt: float,
    u_box: Box | None = None,
    inflation: float = 1.1,
    margin: float = 1e-9,
    max_iter: int = 20,
) -> Box:
    """Over-approximate all states reachable from x0 within [0, dt] under any
    admissible input.

    Picard-style bootstrap: starting from the point box at x0, repeatedly
    enclose the derivative f(X) + g(X)*U over an inflated candidate box X and
    take R = x0 + hull({0}, dt*D).  Once R lands inside the candidate it was
    computed from, R is a sound enclosure (and contains x0 itself, the tau=0
    state).
    """
    x0 = np.asarray(x0, dtype=float)
    if u_box is None:
        u_box = Box(-model.u_max, model.u_max)
    u_ivs = u_box.intervals()

    def deriv_hull(cand: Box) -> list:
        xs = cand.intervals()
        f_iv = model.f(xs)
        g_iv = model.g(xs)
        return [as_interval(fi) + iv_dot(gi, u_ivs) for fi, gi in zip(f_iv, g_iv)]

    current = Box.point(x0)
    for _ in range(max_iter):
        candidate = current.inflate(inflation, margin)
        d = deriv_hull(candidate)
        stretched = [hull_with_zero(as_interval(di) * dt) for di in d]
        new = Box(
            x0 + np.array([s.lo for s in stretched]),
            x0 + np.array([s.hi for s in stretched]),
        )
        if candidate.contains_box(new):
            return new
        current = new
    raise EnclosureError(
        f"reachable-set fixpoint did not contract in {max_iter} iterations "
        f"(dt={dt} too large for the local dynamics?)"
    )
