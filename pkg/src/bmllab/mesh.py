"""Exact dyadic geometry: cubes, shifted grids, mesh functions and overlaps.

Coordinates are exact ``Fraction`` objects.  A shifted grid at scale ``k``
with offset ``a`` in {0, 1, 2}^n has edges ``2^-k [m + a/3, m + a/3 + 1)``,
so every endpoint that ever appears has denominator dividing ``3 * 2^k``.

Mesh functions live on the origin-centred box ``[-2^L, 2^L)^n`` and are
constant on the cells of side ``2^-J``.  Internally each axis is measured in
*thirds of a cell*, which turns every overlap between a cell and a shifted
cube into an integer.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DyadicCube",
    "ShiftedCube",
    "Region",
    "MeshFunction",
    "cube_geometry",
    "cover_cube",
    "overlap_measure",
    "synthesize",
    "indicator",
    "dyadic_indicator",
    "random_step",
    "sampled_profile",
    "shifted_indicators",
    "axis_cover",
    "region_weights",
    "inside_mask",
    "all_offsets",
    "load_mesh",
    "dump_mesh",
]


def _pow2(e: int) -> Fraction:
    return Fraction(2) ** e


@dataclass(frozen=True)
class DyadicCube:
    j: int
    m: tuple

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def side(self) -> Fraction:
        return _pow2(-self.j)

    @property
    def volume(self) -> Fraction:
        return self.side ** self.n

    def region(self) -> "Region":
        s = self.side
        return Region(tuple(s * v for v in self.m), tuple(s * (v + 1) for v in self.m))

    def contains(self, other: "DyadicCube") -> bool:
        if other.j < self.j:
            return False
        shift = other.j - self.j
        return all((mo >> shift) == ms for mo, ms in zip(other.m, self.m))

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.j - 1, tuple(v >> 1 for v in self.m))


@dataclass(frozen=True)
class ShiftedCube:
    k: int
    m: tuple
    a: tuple

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "a", tuple(int(v) for v in self.a))
        if any(v not in (0, 1, 2) for v in self.a):
            raise ValueError("offset entries must lie in {0, 1, 2}")

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def side(self) -> Fraction:
        return _pow2(-self.k)

    @property
    def volume(self) -> Fraction:
        return self.side ** self.n

    def region(self) -> "Region":
        s = self.side
        lo = tuple(s * (mi + Fraction(ai, 3)) for mi, ai in zip(self.m, self.a))
        return Region(lo, tuple(x + s for x in lo))


@dataclass(frozen=True)
class Region:
    """Half-open box with rational corners."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(Fraction(v) for v in self.lo)
        hi = tuple(Fraction(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("corner dimensions differ")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("empty region")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def measure(self) -> Fraction:
        out = Fraction(1)
        for a, b in zip(self.lo, self.hi):
            out *= b - a
        return out

    @property
    def is_cube(self) -> bool:
        sides = {b - a for a, b in zip(self.lo, self.hi)}
        return len(sides) == 1

    @property
    def side(self) -> Fraction:
        if not self.is_cube:
            raise ValueError("region is not a cube")
        return self.hi[0] - self.lo[0]

    @property
    def center(self) -> tuple:
        return tuple((a + b) / 2 for a, b in zip(self.lo, self.hi))

    def contains(self, other: "Region") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def contains_point(self, x: Sequence) -> bool:
        return all(a <= Fraction(v) < b for a, b, v in zip(self.lo, self.hi, x))

    @classmethod
    def cube(cls, center: Sequence, side) -> "Region":
        half = Fraction(side) / 2
        return cls(tuple(Fraction(c) - half for c in center), tuple(Fraction(c) + half for c in center))


def cube_geometry(c: DyadicCube):
    """Return ``(corner, side, volume)`` of a dyadic cube as exact rationals."""
    s = c.side
    return tuple(s * v for v in c.m), s, c.volume


def _floor_div(x: Fraction, y: Fraction) -> int:
    return math.floor(x / y)


def cover_cube(Q: Region, n: int | None = None):
    """Find a shifted-grid cube R with Q inside R and |R| <= 6^n |Q|.

    The scale is fixed by 2ell < 2^-k <= 4ell; along each axis one of the three
    thirds-offsets always leaves Q strictly inside a single interval, so a
    per-axis search is exhaustive.
    """
    if not Q.is_cube:
        raise ValueError("cover_cube needs an axis-aligned cube")
    n = Q.n if n is None else n
    ell = Q.side
    k = -math.floor(math.log2(ell * 4))
    while _pow2(-k) > 4 * ell:
        k += 1
    while _pow2(-k) <= 2 * ell:
        k -= 1
    side = _pow2(-k)
    offs, ms = [], []
    for lo, hi in zip(Q.lo, Q.hi):
        for a in (0, 1, 2):
            shift = side * Fraction(a, 3)
            m = _floor_div(lo - shift, side)
            if hi <= side * (m + 1) + shift:
                offs.append(a)
                ms.append(m)
                break
        else:  # pragma: no cover - excluded by the covering argument
            raise RuntimeError("no shifted interval covers the cube")
    return tuple(offs), ShiftedCube(k, tuple(ms), tuple(offs))


def overlap_measure(R: Region, cell: Region) -> Fraction:
    """Exact Lebesgue measure of the intersection of two boxes."""
    out = Fraction(1)
    for a, b, c, d in zip(R.lo, R.hi, cell.lo, cell.hi):
        w = min(b, d) - max(a, c)
        if w <= 0:
            return Fraction(0)
        out *= w
    return out


class MeshFunction:
    """Piecewise constant function on the cells of side 2^-J in [-2^L, 2^L)^n."""

    __slots__ = ("n", "L", "J", "values")

    def __init__(self, n: int, L: int, J: int, values):
        if n not in (1, 2):
            raise ValueError("only n = 1 and n = 2 are supported")
        if J < -L:
            raise ValueError("need J >= -L")
        N = 2 ** (L + J + 1)
        arr = np.array(values, dtype=float)
        if arr.size != N ** n:
            raise ValueError(f"expected {N ** n} values, got {arr.size}")
        arr = arr.reshape((N,) * n)
        if not np.all(np.isfinite(arr)):
            raise ValueError("mesh values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "L", int(L))
        object.__setattr__(self, "J", int(J))
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("MeshFunction is immutable")

    def __repr__(self):
        return f"MeshFunction(n={self.n}, L={self.L}, J={self.J}, nnz={int(np.count_nonzero(self.values))})"

    @property
    def N(self) -> int:
        return 2 ** (self.L + self.J + 1)

    @property
    def h(self) -> Fraction:
        return _pow2(-self.J)

    @property
    def cell_volume(self) -> Fraction:
        return self.h ** self.n

    @property
    def domain(self) -> Region:
        e = _pow2(self.L)
        return Region((-e,) * self.n, (e,) * self.n)

    def cell_region(self, idx: Sequence[int]) -> Region:
        h, e = self.h, _pow2(self.L)
        lo = tuple(-e + h * i for i in idx)
        return Region(lo, tuple(x + h for x in lo))

    def cell_centers(self) -> np.ndarray:
        """Centers along one axis (float)."""
        h = 2.0 ** -self.J
        return -(2.0 ** self.L) + h * (np.arange(self.N) + 0.5)

    def cell_edges(self) -> list:
        """Exact cell edges along one axis."""
        h, e = self.h, _pow2(self.L)
        return [-e + h * i for i in range(self.N + 1)]

    def cell_index(self, x) -> int:
        """Index along one axis of the cell containing the coordinate x."""
        i = math.floor((Fraction(x) + _pow2(self.L)) / self.h)
        if not 0 <= i < self.N:
            raise ValueError("point outside domain")
        return i

    def with_values(self, values) -> "MeshFunction":
        return MeshFunction(self.n, self.L, self.J, values)

    def zeros_like(self) -> "MeshFunction":
        return self.with_values(np.zeros_like(self.values))

    def same_mesh(self, other: "MeshFunction") -> bool:
        return (self.n, self.L, self.J) == (other.n, other.L, other.J)

    def __add__(self, other):
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        if isinstance(c, MeshFunction):
            _check_same(self, c)
            return self.with_values(self.values * c.values)
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def abs(self) -> "MeshFunction":
        return self.with_values(np.abs(self.values))

    def integral(self) -> float:
        return float(math.fsum(self.values.ravel())) * float(self.cell_volume)

    def l1(self) -> float:
        return float(math.fsum(np.abs(self.values).ravel())) * float(self.cell_volume)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def support_mask(self) -> np.ndarray:
        return self.values != 0

    def restrict(self, R: Region) -> "MeshFunction":
        """Zero outside the cells lying inside R (R must be mesh aligned)."""
        mask = np.ones(self.values.shape, dtype=bool)
        for ax in range(self.n):
            w = _axis_overlap_thirds(self, R.lo[ax], R.hi[ax])
            if np.any((w != 0) & (w != 3)):
                raise ValueError("region is not aligned with the mesh")
            shape = [1] * self.n
            shape[ax] = self.N
            mask = mask & (w == 3).reshape(shape)
        return self.with_values(np.where(mask, self.values, 0.0))

    def refine(self, extra: int) -> "MeshFunction":
        """Same function on a mesh 2^extra times finer."""
        v = self.values
        for ax in range(self.n):
            v = np.repeat(v, 2 ** extra, axis=ax)
        return MeshFunction(self.n, self.L, self.J + extra, v)

    def enlarge(self, extra: int) -> "MeshFunction":
        """Same function on a domain 2^extra times wider."""
        pad = (self.N * (2 ** extra - 1)) // 2
        v = np.pad(self.values, [(pad, pad)] * self.n)
        return MeshFunction(self.n, self.L + extra, self.J, v)

    def to_dict(self) -> dict:
        return {"n": self.n, "L": self.L, "J": self.J, "values": [float(v) for v in self.values.ravel()]}

    @classmethod
    def from_dict(cls, d: dict) -> "MeshFunction":
        try:
            return cls(int(d["n"]), int(d["L"]), int(d["J"]), d["values"])
        except KeyError as exc:
            raise ValueError(f"missing field {exc}") from None

    def __eq__(self, other):
        return isinstance(other, MeshFunction) and self.same_mesh(other) and np.array_equal(self.values, other.values)

    __hash__ = None


def _check_same(f: MeshFunction, g: MeshFunction):
    if not f.same_mesh(g):
        raise ValueError("mesh functions live on different meshes")


def load_mesh(path) -> MeshFunction:
    with open(path) as fh:
        return MeshFunction.from_dict(json.load(fh))


def dump_mesh(f: MeshFunction, path) -> None:
    with open(path, "w") as fh:
        json.dump(f.to_dict(), fh)


# -- exact axis bookkeeping in thirds of a cell ---------------------------------


def _to_thirds(f: MeshFunction, x) -> Fraction:
    return 3 * (Fraction(x) + _pow2(f.L)) / f.h


def _axis_overlap_thirds(f: MeshFunction, lo, hi) -> np.ndarray:
    """Per-cell overlap with [lo, hi) along one axis, in thirds of a cell."""
    u0, u1 = _to_thirds(f, lo), _to_thirds(f, hi)
    # scale by the common denominator so the clipping is integer arithmetic
    D = u0.denominator * u1.denominator // math.gcd(u0.denominator, u1.denominator)
    a, b = int(u0 * D), int(u1 * D)
    starts = 3 * D * np.arange(f.N, dtype=object if D > 2 ** 20 else np.int64)
    w = np.minimum(b, starts + 3 * D) - np.maximum(a, starts)
    w = np.maximum(w, 0)
    if D == 1:
        return w.astype(np.int64)
    return np.array([float(Fraction(int(v), D)) for v in w])


def region_weights(f: MeshFunction, R: Region) -> list:
    """Per-axis exact overlap length of every cell with R."""
    out = []
    for ax in range(f.n):
        u0, u1 = _to_thirds(f, R.lo[ax]), _to_thirds(f, R.hi[ax])
        D = u0.denominator * u1.denominator // math.gcd(u0.denominator, u1.denominator)
        a, b = int(u0 * D), int(u1 * D)
        unit = f.h / (3 * D)
        row = [Fraction(0)] * f.N
        # only cells meeting [u0, u1) need exact arithmetic
        first = max(0, a // (3 * D))
        last = min(f.N, -(-b // (3 * D)))
        for i in range(first, last):
            w = min(b, 3 * D * (i + 1)) - max(a, 3 * D * i)
            if w > 0:
                row[i] = w * unit
        out.append(row)
    return out


def inside_mask(f: MeshFunction, R: Region) -> np.ndarray:
    """Cells lying entirely inside R."""
    masks = []
    for ax in range(f.n):
        w = _axis_overlap_thirds(f, R.lo[ax], R.hi[ax])
        masks.append(w == 3)
    if f.n == 1:
        return masks[0]
    return masks[0][:, None] & masks[1][None, :]


def axis_cover(N: int, L: int, J: int, k: int, a: int):
    """Cells met by the grid intervals of scale k <= J and offset a along one axis.

    Returns ``(m, idx, wt)``: interval indices, cell indices (padded with 0)
    and overlaps in thirds of a cell (0 on padding).  All integers.
    """
    if k > J:
        raise ValueError("axis_cover is for scales at or above the mesh")
    s = 2 ** (J - k)
    base = 3 * 2 ** (L + J)
    lo = (-base - s * (a + 3)) // (3 * s) - 1
    hi = (base - s * a) // (3 * s) + 1
    m = np.arange(lo, hi + 1, dtype=np.int64)
    u0 = s * (3 * m + a) + base
    u1 = u0 + 3 * s
    keep = (u1 > 0) & (u0 < 3 * N)
    m, u0, u1 = m[keep], u0[keep], u1[keep]
    W = s if a == 0 else s + 1
    first = np.floor_divide(u0, 3)
    idx = first[:, None] + np.arange(W)[None, :]
    wt = np.minimum(u1[:, None], 3 * idx + 3) - np.maximum(u0[:, None], 3 * idx)
    inside = (idx >= 0) & (idx < N) & (wt > 0)
    wt = np.where(inside, wt, 0)
    idx = np.where(inside, idx, 0)
    return m, idx, wt


# -- generators -----------------------------------------------------------------


def indicator(R: Region, n: int, L: int, J: int, value: float = 1.0) -> MeshFunction:
    """value * chi_R on the mesh; R must be mesh aligned and inside the domain."""
    base = MeshFunction(n, L, J, np.full((2 ** (L + J + 1),) * n, float(value)))
    if not base.domain.contains(R):
        raise ValueError("region outside domain")
    return base.restrict(R)


def dyadic_indicator(j: int, m: Sequence[int], n: int, L: int, J: int, value: float = 1.0) -> MeshFunction:
    if j > J:
        raise ValueError("cube finer than the mesh")
    return indicator(DyadicCube(j, tuple(m)).region(), n, L, J, value)


def random_step(seed: int, n: int, L: int, J: int, low: float = -1.0, high: float = 1.0,
                density: float = 1.0, support: Region | None = None, levels: int | None = None) -> MeshFunction:
    """Seeded random step function.

    ``levels`` draws values from a small set so level sets carry ties;
    ``density`` is the fraction of cells that are nonzero.
    """
    if not (math.isfinite(low) and math.isfinite(high)):
        raise ValueError("non-finite value range")
    rng = np.random.default_rng(seed)
    shape = (2 ** (L + J + 1),) * n
    if levels:
        pool = rng.uniform(low, high, size=levels)
        vals = rng.choice(pool, size=shape)
    else:
        vals = rng.uniform(low, high, size=shape)
    if density < 1.0:
        vals = np.where(rng.random(shape) < density, vals, 0.0)
    f = MeshFunction(n, L, J, vals)
    return f.restrict(support) if support is not None else f


def sampled_profile(fn: Callable, n: int, L: int, J: int, support: Region | None = None) -> MeshFunction:
    """Sample a closure at cell centres, e.g. a Gaussian bump."""
    c = MeshFunction(n, L, J, np.zeros((2 ** (L + J + 1),) * n)).cell_centers()
    grids = np.meshgrid(*([c] * n), indexing="ij")
    vals = np.asarray(fn(*grids), dtype=float)
    f = MeshFunction(n, L, J, vals)
    return f.restrict(support) if support is not None else f


def shifted_indicators(offsets: Sequence[Sequence[int]], coefficients: Sequence[float],
                       n: int, L: int, J: int, j: int = 0) -> MeshFunction:
    """Sum of c_i * chi_{Q_{j, m_i}} for integer index vectors m_i."""
    vals = np.zeros((2 ** (L + J + 1),) * n)
    for m, c in zip(offsets, coefficients):
        vals = vals + dyadic_indicator(j, m, n, L, J, c).values
    return MeshFunction(n, L, J, vals)


def synthesize(spec: dict, n: int, L: int, J: int) -> MeshFunction:
    """Build a mesh function from a descriptor dict with a ``kind`` key."""
    kind = spec.get("kind")
    if kind == "indicator":
        return indicator(Region(spec["lo"], spec["hi"]), n, L, J, spec.get("value", 1.0))
    if kind == "dyadic":
        return dyadic_indicator(spec["j"], spec["m"], n, L, J, spec.get("value", 1.0))
    if kind == "random":
        sup = spec.get("support")
        return random_step(spec["seed"], n, L, J, spec.get("low", -1.0), spec.get("high", 1.0),
                           spec.get("density", 1.0), Region(*sup) if sup else None, spec.get("levels"))
    if kind == "gaussian":
        width = float(spec.get("width", 1.0))
        return sampled_profile(lambda *xs: np.exp(-sum(x * x for x in xs) / (2 * width ** 2)), n, L, J)
    if kind == "shifted":
        return shifted_indicators(spec["offsets"], spec["coefficients"], n, L, J, spec.get("j", 0))
    raise ValueError(f"unknown generator kind {kind!r}")


def all_offsets(n: int):
    return list(itertools.product((0, 1, 2), repeat=n))
