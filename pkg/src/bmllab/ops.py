"""Maximal operators, fractional integrals, the Hilbert transform and commutators.

Maximal functions are evaluated at cell centres as suprema over the cubes of
the 3^n thirds-shifted dyadic grids; every shifted cube is a cube, and every
cube sits in a shifted cube at most 6^n times larger, which brackets the true
cube maximal function between ``lower`` and ``6^n * lower``.

One-dimensional singular and fractional integrals use exact antiderivatives of
the kernel over each cell, so no singular quadrature is ever performed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bml import BMLExponents, bml_norm
from .mesh import MeshFunction, Region, axis_cover, all_offsets, region_weights

__all__ = [
    "KernelDescriptor",
    "HILBERT",
    "OperatorSample",
    "maximal_dyadic",
    "maximal_sandwich",
    "powered_maximal",
    "fractional_maximal",
    "sharp_maximal",
    "fractional_integral",
    "fractional_at",
    "hilbert_transform",
    "hilbert_at",
    "hilbert_adjoint",
    "truncated_transform",
    "maximal_transform",
    "commutator",
    "pairing",
    "bmo_norm",
    "median_value",
    "cmo_profile",
    "cotlar_ratio",
    "commutator_sharp_ratio",
    "pointwise_fractional_ratio",
]


@dataclass(frozen=True)
class KernelDescriptor:
    """Kernel constants: size |K| <= A/|x-y|^n, regularity with (delta, A_reg)."""

    kind: str = "hilbert"
    delta: float = 1.0
    A: float = 1.0 / math.pi
    A_reg: float = 4.5 / math.pi

    def __call__(self, x, y):
        return 1.0 / (math.pi * (np.asarray(x) - np.asarray(y)))

    def certify(self, samples: int = 10_000, seed: int = 0) -> dict:
        """Spot-check size and both regularity conditions on random admissible triples."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-10, 10, samples)
        y = x + rng.choice([-1, 1], samples) * rng.uniform(1e-3, 10, samples)
        d = np.abs(x - y)
        size = np.max(np.abs(self(x, y)) * d / self.A)
        # move x by at most half the distance, so max(|x-y|,|x'-y|)/2 bounds it
        xp = x + rng.uniform(-0.5, 0.5, samples) * d
        ok = np.abs(x - xp) <= np.maximum(d, np.abs(xp - y)) / 2
        lhs = np.abs(self(x, y) - self(xp, y))[ok]
        rhs = (self.A_reg * np.abs(x - xp) ** self.delta / (d + np.abs(xp - y)) ** (1 + self.delta))[ok]
        reg_x = np.max(lhs / rhs)
        yp = y + rng.uniform(-0.25, 0.25, samples) * d
        ok = np.abs(y - yp) <= np.maximum(d, np.abs(x - yp)) / 4
        lhs = np.abs(self(x, y) - self(x, yp))[ok]
        rhs = (self.A_reg * np.abs(y - yp) ** self.delta / (d + np.abs(x - yp)) ** (1 + self.delta))[ok]
        reg_y = np.max(lhs / rhs)
        return {"size": float(size), "regularity_x": float(reg_x), "regularity_y": float(reg_y),
                "ok": bool(size <= 1 + 1e-12 and reg_x <= 1 + 1e-12 and reg_y <= 1 + 1e-12)}


HILBERT = KernelDescriptor()


@dataclass(frozen=True)
class OperatorSample:
    values: MeshFunction
    exact: bool
    note: str = "cell-centre values"

    def to_dict(self) -> dict:
        d = self.values.to_dict()
        d["exact"] = self.exact
        d["note"] = self.note
        return d


# -- grid cube bookkeeping ------------------------------------------------------------


def _k_lo(f: MeshFunction) -> int:
    return -f.L - 2


def _centre_positions(f: MeshFunction, k: int, a: int, m: np.ndarray) -> np.ndarray:
    """Row in the axis_cover output of the interval containing each cell centre."""
    s = 2 ** (f.J - k)
    base = 3 * 2 ** (f.L + f.J)
    i = np.arange(f.N, dtype=np.int64)
    mm = np.floor_divide(6 * i + 3 - 2 * base - 2 * s * a, 6 * s)
    return mm - m[0]


def _gather(f: MeshFunction, vals: np.ndarray, a: Sequence[int], k: int):
    """Values and overlap weights (thirds) of every grid cube at scale k <= J.

    Returns (v, w, positions, unit, cube_units) where v, w have shape
    (cubes, entries) and positions maps cells to cube rows per axis.
    """
    covers = [axis_cover(f.N, f.L, f.J, k, ai) for ai in a]
    pos = [_centre_positions(f, k, ai, cov[0]) for ai, cov in zip(a, covers)]
    unit = (2.0 ** -f.J / 3.0) ** f.n
    cube_units = float((3 * 2 ** (f.J - k)) ** f.n)
    if f.n == 1:
        _, idx, wt = covers[0]
        return vals[idx], wt, pos, unit, cube_units
    (_, i0, w0), (_, i1, w1) = covers
    v = vals[i0[:, None, :, None], i1[None, :, None, :]].reshape(i0.shape[0] * i1.shape[0], -1)
    w = (w0[:, None, :, None] * w1[None, :, None, :]).reshape(v.shape)
    return v, w, pos, unit, cube_units


def _cube_field(f: MeshFunction, per_cube: np.ndarray, pos, covers_shape) -> np.ndarray:
    if f.n == 1:
        return per_cube[pos[0]]
    grid = per_cube.reshape(covers_shape)
    return grid[pos[0][:, None], pos[1][None, :]]


def _shape(f: MeshFunction, a, k):
    return tuple(axis_cover(f.N, f.L, f.J, k, ai)[0].size for ai in a)


def _grid_sup(f: MeshFunction, a: Sequence[int], stat) -> np.ndarray:
    """max over scales k_lo..J of stat(v, w, unit, cube_units, k) mapped to cell centres."""
    out = np.zeros(f.values.shape)
    for k in range(_k_lo(f), f.J + 1):
        v, w, pos, unit, cu = _gather(f, stat.source, a, k)
        per = stat(v, w, unit, cu, k)
        out = np.maximum(out, _cube_field(f, per, pos, _shape(f, a, k)))
    return out


class _Average:
    def __init__(self, src):
        self.source = src

    def __call__(self, v, w, unit, cu, k):
        return (v * w).sum(axis=1) / cu


def maximal_dyadic(f: MeshFunction, a: Sequence[int] | None = None) -> MeshFunction:
    """M_{D_a} f at cell centres, exact.

    Scales coarser than k_lo only average over larger cubes holding the same
    mass, and cubes finer than the mesh that contain a centre lie inside its
    cell, so scales k_lo..J together with |f| itself attain the supremum.
    """
    a = (0,) * f.n if a is None else tuple(a)
    absf = np.abs(f.values)
    out = _grid_sup(f, a, _Average(absf))
    return f.with_values(np.maximum(out, absf))


def maximal_sandwich(f: MeshFunction):
    """(lower, upper) with lower <= M f <= upper at every cell centre."""
    lower = np.zeros(f.values.shape)
    for a in all_offsets(f.n):
        lower = np.maximum(lower, maximal_dyadic(f, a).values)
    return f.with_values(lower), f.with_values(lower * 6.0 ** f.n)


def powered_maximal(f: MeshFunction, eta: float, a: Sequence[int] | None = None) -> MeshFunction:
    """M(|f|^eta)^{1/eta}; over one grid when a is given, else over all 3^n grids."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    g = f.with_values(np.abs(f.values) ** eta)
    m = maximal_dyadic(g, a) if a is not None else maximal_sandwich(g)[0]
    return f.with_values(m.values ** (1.0 / eta))


class _FracAverage:
    def __init__(self, src, alpha, n):
        self.source = src
        self.alpha = alpha
        self.n = n

    def __call__(self, v, w, unit, cu, k):
        vol = 2.0 ** (-k * self.n)
        return (v * w).sum(axis=1) * unit * vol ** (self.alpha / self.n - 1.0)


def fractional_maximal(f: MeshFunction, alpha: float, a: Sequence[int] | None = None) -> MeshFunction:
    """sup over grid cubes containing the centre of |Q|^{alpha/n - 1} int_Q |f|."""
    if not 0 < alpha < f.n:
        raise ValueError("need 0 < alpha < n")
    offsets = [tuple(a)] if a is not None else all_offsets(f.n)
    absf = np.abs(f.values)
    out = np.zeros(f.values.shape)
    for off in offsets:
        out = np.maximum(out, _grid_sup(f, off, _FracAverage(absf, alpha, f.n)))
        # the sub-mesh cube through the centre lies in the cell
        out = np.maximum(out, absf * 2.0 ** (-(f.J + 1) * alpha))
    return f.with_values(out)


def _oscillation(v, w, cu):
    mass = (v * w).sum(axis=1)
    mean = mass / cu
    outside = cu - w.sum(axis=1)
    dev = (np.abs(v - mean[:, None]) * w).sum(axis=1) + outside * np.abs(mean)
    return dev / cu


class _Osc:
    def __init__(self, src):
        self.source = src

    def __call__(self, v, w, unit, cu, k):
        return _oscillation(v, w, cu)


def sharp_maximal(f: MeshFunction) -> MeshFunction:
    """Sup over all shifted-grid cubes through the centre of the mean oscillation."""
    out = np.zeros(f.values.shape)
    for a in all_offsets(f.n):
        out = np.maximum(out, _grid_sup(f, a, _Osc(f.values)))
    return f.with_values(out)


# -- one-dimensional integral operators -------------------------------------------------


def _need_1d(f: MeshFunction):
    if f.n != 1:
        raise ValueError("exact quadrature is implemented for n = 1")


def _hilbert_kernel(N: int) -> np.ndarray:
    """K[d] for d = -(N-1)..N-1: (1/pi) ln|(d + 1/2)/(d - 1/2)|."""
    d = np.arange(-(N - 1), N, dtype=float)
    out = np.zeros_like(d)
    nz = d != 0
    out[nz] = np.sign(d[nz]) * np.log1p(1.0 / (np.abs(d[nz]) - 0.5)) / math.pi
    return out


def _toeplitz_apply(vals: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """out[i] = sum_j vals[j] kern[i - j + N - 1]."""
    N = vals.size
    nz = np.flatnonzero(vals)
    if nz.size == 0:
        return np.zeros(N)
    if nz.size * N <= 5e7:
        out = np.zeros(N)
        i = np.arange(N)
        for j in nz:
            out += vals[j] * kern[i - j + N - 1]
        return out
    return np.convolve(vals, kern)[N - 1:2 * N - 1]


def hilbert_transform(f: MeshFunction) -> OperatorSample:
    """Tf at cell centres; the self-cell principal value vanishes by symmetry."""
    _need_1d(f)
    out = _toeplitz_apply(f.values, _hilbert_kernel(f.N))
    return OperatorSample(f.with_values(out), True, "cell-centre values, exact log antiderivatives")


def hilbert_adjoint(f: MeshFunction) -> OperatorSample:
    """T* = -T for the odd Hilbert kernel."""
    s = hilbert_transform(f)
    return OperatorSample(-s.values, True, s.note)


def hilbert_at(f: MeshFunction, x) -> float:
    """Tf(x) = (1/pi) sum over edges e of (f_right - f_left) ln|x - e|."""
    _need_1d(f)
    v = np.concatenate([[0.0], f.values, [0.0]])
    jump = np.diff(v)                       # f(e+) - f(e-) at each edge
    edges = [Fraction(e) for e in f.cell_edges()]
    xf = Fraction(x)
    terms = []
    for e, c in zip(edges, jump):
        if c == 0:
            continue
        if e == xf:
            raise ValueError("evaluation at a jump point of f")
        terms.append(c * math.log(abs(float(xf - e))))
    return math.fsum(terms) / math.pi


def _frac_kernel(N: int, alpha: float) -> np.ndarray:
    """k[d] = int over a unit cell at offset d of |1/2 - y|^{alpha-1} dy."""
    d = np.abs(np.arange(-(N - 1), N, dtype=float))
    out = ((d + 0.5) ** alpha - np.abs(d - 0.5) ** alpha) / alpha
    out[d == 0] = 2 * 0.5 ** alpha / alpha
    return out


def fractional_integral(f: MeshFunction, alpha: float) -> OperatorSample:
    """I_alpha f(x) = int |x-y|^{alpha-n} f(y) dy at cell centres.

    n = 1 is exact; n = 2 uses the midpoint rule off the diagonal and an exact
    polar integral on the self cell, and is flagged inexact.
    """
    if not 0 < alpha < f.n:
        raise ValueError("need 0 < alpha < n")
    h = 2.0 ** -f.J
    if f.n == 1:
        out = _toeplitz_apply(f.values, _frac_kernel(f.N, alpha)) * h ** alpha
        return OperatorSample(f.with_values(out), True, "cell-centre values, exact antiderivatives")
    N = f.N
    d = np.arange(-(N - 1), N, dtype=float)
    r = np.hypot(d[:, None], d[None, :]) * h
    with np.errstate(divide="ignore"):
        kern = np.where(r > 0, r ** (alpha - 2) * h * h, 0.0)
    nodes, weights = np.polynomial.legendre.leggauss(32)
    theta = (nodes + 1) * math.pi / 8
    self_cell = 8 / alpha * (h / 2) ** alpha * float(np.sum(weights * np.cos(theta) ** (-alpha)) * math.pi / 8)
    kern[N - 1, N - 1] = self_cell
    F = f.values
    out = np.zeros_like(F)
    for i, j in zip(*np.nonzero(F)):
        out += F[i, j] * kern[N - 1 - i:2 * N - 1 - i, N - 1 - j:2 * N - 1 - j]
    return OperatorSample(f.with_values(out), False, "midpoint quadrature off the self cell")


def fractional_at(f: MeshFunction, x, alpha: float) -> float:
    """I_alpha f(x) for n = 1 at any point, by exact antiderivatives."""
    _need_1d(f)
    xf = float(x)
    edges = np.array([float(e) for e in f.cell_edges()])
    a, b = edges[:-1], edges[1:]
    da, db = np.abs(xf - a), np.abs(xf - b)
    left = np.where(xf >= b, (da ** alpha - db ** alpha) / alpha, 0.0)
    right = np.where(xf <= a, (db ** alpha - da ** alpha) / alpha, 0.0)
    inside = (xf > a) & (xf < b)
    mid = np.where(inside, (da ** alpha + db ** alpha) / alpha, 0.0)
    return math.fsum(f.values * (left + right + mid))


def _trunc_kernel(N: int, z: float) -> np.ndarray:
    """Kernel indexed by x - y in cells, restricted to |x - y| > z (cell units)."""
    d = -np.arange(-(N - 1), N, dtype=float)   # y - x of the source cell
    a = d - 0.5          # cell [a, b) relative to the centre
    b = d + 0.5
    out = np.zeros_like(d)
    # part left of the centre: y in [a, min(b, -z)], kernel 1/(0 - y) = 1/|y|
    lo, hi = a, np.minimum(b, -z)
    m = hi > lo
    out[m] += np.log(-lo[m]) - np.log(-hi[m])
    # part right of the centre: y in [max(a, z), b], kernel -1/y
    lo, hi = np.maximum(a, z), b
    m = hi > lo
    out[m] -= np.log(hi[m]) - np.log(lo[m])
    return out / math.pi


def truncated_transform(f: MeshFunction, zeta: float) -> OperatorSample:
    """T_zeta f at centres: the kernel integrated over |x - y| > zeta only."""
    _need_1d(f)
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    z = float(zeta) * 2.0 ** f.J
    out = _toeplitz_apply(f.values, _trunc_kernel(f.N, z))
    return OperatorSample(f.with_values(out), True, "cell-centre values, exact log antiderivatives")


def maximal_transform(f: MeshFunction) -> MeshFunction:
    """max over zeta in {2^-J, ..., 2^{L+1}} of |T_zeta f|."""
    _need_1d(f)
    out = np.zeros(f.N)
    for e in range(-f.J, f.L + 2):
        out = np.maximum(out, np.abs(truncated_transform(f, 2.0 ** e).values.values))
    return f.with_values(out)


def commutator(b: MeshFunction, f: MeshFunction) -> OperatorSample:
    """[b, T] f = b T f - T(b f) at cell centres."""
    _need_1d(f)
    tf = hilbert_transform(f).values.values
    tbf = hilbert_transform(b * f).values.values
    return OperatorSample(f.with_values(b.values * tf - tbf), True, "cell-centre values")


def pairing(f: MeshFunction, g: MeshFunction) -> float:
    """int f g with centre values of operator outputs treated as cell values."""
    if not f.same_mesh(g):
        raise ValueError("mesh mismatch")
    return math.fsum((f.values * g.values).ravel()) * float(f.cell_volume)


# -- BMO, medians, CMO ------------------------------------------------------------------


def _grid_oscillations(b: MeshFunction, a, k) -> np.ndarray:
    v, w, pos, unit, cu = _gather(b, b.values, a, k)
    return _oscillation(v, w, cu)


def _straddle_osc(b: MeshFunction, a) -> float:
    """Largest oscillation of a sub-mesh cube straddling cell boundaries (scale free)."""
    best = 0.0
    n, N = b.n, b.N
    movable = [ax for ax in range(n) if a[ax] != 0]
    for size in range(1, len(movable) + 1):
        for S in itertools.combinations(movable, size):
            P = np.pad(b.values, [(1, 1) if ax in S else (0, 0) for ax in range(n)])
            pieces, weights = [], []
            for sigma in itertools.product((0, 1), repeat=len(S)):
                sl, wgt = [], 1
                for ax in range(n):
                    if ax in S:
                        side = sigma[S.index(ax)]
                        sl.append(slice(side, side + N + 1))
                        wgt *= (3 - a[ax]) if side == 0 else a[ax]
                    else:
                        sl.append(slice(None))
                pieces.append(P[tuple(sl)])
                weights.append(wgt)
            v = np.stack(pieces, axis=-1).reshape(-1, len(pieces))
            w = np.broadcast_to(np.array(weights, dtype=float), v.shape)
            best = max(best, float(_oscillation(v, w, float(3 ** len(S))).max(initial=0.0)))
    return best


def bmo_norm(b: MeshFunction):
    """(lower, upper) for the BMO seminorm.

    lower: sup of mean oscillation over shifted-grid cubes with side between
    2^-J and 2^{L+2}.  upper: 2 * 6^n times the sup over every grid cube (sub-
    mesh straddling cubes and the closed-form coarse bound included), by the
    covering lemma and |b - b_Q| averaging.
    """
    lower = 0.0
    every = 0.0
    for a in all_offsets(b.n):
        for k in range(_k_lo(b), b.J + 1):
            lower = max(lower, float(_grid_oscillations(b, a, k).max(initial=0.0)))
        every = max(every, _straddle_osc(b, a))
    coarse = 2.0 * b.l1() * 2.0 ** ((_k_lo(b) - 1) * b.n)
    every = max(every, lower, coarse)
    return lower, 2.0 * 6.0 ** b.n * every


def median_value(b: MeshFunction, R: Region) -> float:
    """Weighted lower median of b over R (ties go to the smaller value)."""
    w = region_weights(b, R)
    if b.n == 1:
        meas = w[0]
    else:
        meas = [x * y for x in w[0] for y in w[1]]
    pairs = sorted((float(v), m) for v, m in zip(b.values.ravel(), meas) if m > 0)
    if not pairs:
        raise ValueError("empty region")
    total = sum((m for _, m in pairs), Fraction(0))
    acc = Fraction(0)
    for v, m in pairs:
        acc += m
        if 2 * acc >= total:
            return v
    return pairs[-1][0]  # pragma: no cover


def cmo_profile(b: MeshFunction, sides: Sequence, radii: Sequence | None = None) -> dict:
    """The three vanishing-oscillation functionals restricted to the grid family.

    For each side s: ``large[s]`` = sup over cubes with side >= s, ``small[s]``
    = sup over cubes with side <= s (sub-mesh straddles included).  For each
    radius R: ``far[R]`` = sup over cubes missing the box [-R, R)^n.
    """
    per_scale: dict = {}
    far_src = []
    for a in all_offsets(b.n):
        for k in range(_k_lo(b), b.J + 1):
            osc = _grid_oscillations(b, a, k)
            per_scale[k] = max(per_scale.get(k, 0.0), float(osc.max(initial=0.0)))
            covers = [axis_cover(b.N, b.L, b.J, k, ai) for ai in a]
            # distance of each cube from the origin in sup norm (thirds units)
            dists = []
            s = 2 ** (b.J - k)
            for ai, (m, _, _) in zip(a, covers):
                u0 = s * (3 * m + ai)
                u1 = u0 + 3 * s
                dists.append(np.where(u0 >= 0, u0, np.where(u1 <= 0, -u1, 0)))
            if b.n == 1:
                d = dists[0]
            else:
                d = np.maximum(dists[0][:, None], dists[1][None, :]).ravel()
            far_src.append((d, osc))
        per_scale[b.J + 1] = max(per_scale.get(b.J + 1, 0.0), _straddle_osc(b, a))
    scales = sorted(per_scale)
    out = {"large": [], "small": [], "far": []}
    for s in sides:
        k_s = -math.log2(float(s))
        out["large"].append(max([per_scale[k] for k in scales if k <= k_s + 1e-9], default=0.0))
        out["small"].append(max([per_scale[k] for k in scales if k >= k_s - 1e-9], default=0.0))
    unit = 2.0 ** -b.J / 3.0
    for R in radii or []:
        best = 0.0
        for d, osc in far_src:
            sel = d * unit >= float(R)
            if np.any(sel):
                best = max(best, float(osc[sel].max()))
        out["far"].append(best)
    return out


# -- empirical constants ------------------------------------------------------------------


def cotlar_ratio(f: MeshFunction, ell: float = 2.0) -> float:
    """max over cells of T_max f / (M_ell(Tf) + M f), lower grids."""
    tmax = maximal_transform(f).values
    tf = hilbert_transform(f).values
    rhs = powered_maximal(tf, ell).values + maximal_sandwich(f)[0].values
    sel = rhs > 0
    return float(np.max(tmax[sel] / rhs[sel])) if np.any(sel) else 0.0


def commutator_sharp_ratio(b: MeshFunction, f: MeshFunction, eta1: float = 2.0, eta2: float = 2.0) -> float:
    """max of M#([b,T]f) / (||b||_BMO-lower (M_eta1(Tf) + M_eta2 f))."""
    lhs = sharp_maximal(commutator(b, f).values).values
    bmo = bmo_norm(b)[0]
    tf = hilbert_transform(f).values
    rhs = bmo * (powered_maximal(tf, eta1).values + powered_maximal(f, eta2).values)
    sel = rhs > 0
    return float(np.max(lhs[sel] / rhs[sel])) if np.any(sel) else 0.0


def pointwise_fractional_ratio(f: MeshFunction, alpha: float, t: float) -> float:
    """max of I_alpha|f| / (||f||_{M^{t,inf}_{1,1}}^{t alpha/n} (M f)^{1 - t alpha/n})."""
    theta = t * alpha / f.n
    if not 0 < theta < 1:
        raise ValueError("need 0 < t alpha / n < 1")
    lhs = fractional_integral(f.abs(), alpha).values.values
    morrey = bml_norm(f, BMLExponents(1.0, 1.0, t, math.inf)).total
    mf = maximal_sandwich(f)[0].values
    rhs = morrey ** theta * mf ** (1 - theta)
    sel = rhs > 0
    return float(np.max(lhs[sel] / rhs[sel])) if np.any(sel) else 0.0
