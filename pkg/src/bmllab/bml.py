"""Exact Bourgain-Morrey-Lorentz norms over the whole dyadic lattice.

The sum over every dyadic cube splits into three zones:

* coarse scales, where each orthant piece of the domain sits in one cube and
  the restricted Lorentz norm no longer changes, giving a geometric series;
* the scales between the domain and the mesh, enumerated cube by cube;
* sub-mesh scales, where each cube sees at most two values per axis, again a
  geometric series per local configuration.

Shifted grids use the same engine with cell overlaps measured in thirds.
Divergence is decided from the exponents alone before any summation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Sequence

import numpy as np

from .lorentz import INF, conjugate, lorentz_constant, lorentz_rows
from .mesh import DyadicCube, MeshFunction, Region, axis_cover, shifted_indicators

__all__ = [
    "BMLExponents",
    "NormBreakdown",
    "DivergenceError",
    "nontrivial",
    "divergence_reason",
    "bml_norm",
    "bml_norm_on_grid",
    "bml_norm_truncated",
    "scale_contribution",
    "scale_norms",
    "translate",
    "dilate_dyadic",
    "convolve",
    "tail_norm",
    "translation_modulus",
    "separation_offset",
    "embed_sequence",
]

# rounding allowance for certified tails: a few hundred ulps of the total
_ROUND = 256 * np.finfo(float).eps


class DivergenceError(ArithmeticError):
    """The cube series diverges for these exponents (the space is trivial)."""


@dataclass(frozen=True)
class BMLExponents:
    p: float
    q: float
    t: float
    r: float

    def __post_init__(self):
        for name in ("p", "q", "t", "r"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, v)
        if not (math.isfinite(self.p) and math.isfinite(self.t)):
            raise ValueError("p and t must be finite")

    @classmethod
    def parse(cls, text: str) -> "BMLExponents":
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 4:
            raise ValueError("expected p,q,t,r")
        return cls(*(INF if s.lower() in ("inf", "oo", "infinity") else float(s) for s in parts))

    @property
    def nontrivial(self) -> bool:
        return nontrivial(self)

    def dual(self):
        """(p', q', t', r') for the block side."""
        return conjugate(self.p), conjugate(self.q), conjugate(self.t), conjugate(self.r)

    def as_tuple(self):
        return (self.p, self.q, self.t, self.r)


def nontrivial(e: BMLExponents) -> bool:
    if e.r == INF:
        return 0 < e.p <= e.t
    return 0 < e.p < e.t < e.r


def divergence_reason(e: BMLExponents, n: int = 1) -> str | None:
    """Symbolic ratio test on the two geometric tails; None when both converge."""
    if e.r == INF:
        # weights |Q|^{1/t - 1/p} grow toward coarse scales iff p > t
        if e.p > e.t:
            return "coarse-scale weights grow (p > t)"
        return None
    fine_exp = n * (1.0 - e.r / e.t)           # log2 of the sub-mesh ratio
    coarse_exp = -n * e.r * (1.0 / e.p - 1.0 / e.t)  # log2 of the coarse ratio
    if fine_exp >= 0:
        return f"fine-scale ratio 2^{fine_exp:g} >= 1 (r <= t)"
    if coarse_exp >= 0:
        return f"coarse-scale ratio 2^{coarse_exp:g} >= 1 (p >= t)"
    return None


@dataclass(frozen=True)
class NormBreakdown:
    coarse_tail: float
    middle: float
    fine_tail: float
    total: float
    r: float
    offset: tuple = field(default=())

    def to_dict(self) -> dict:
        return {"coarse_tail": self.coarse_tail, "middle": self.middle, "fine_tail": self.fine_tail,
                "total": self.total, "r": self.r}


def _k_lo(f: MeshFunction) -> int:
    # at this scale every grid (any offset) has stabilised on the domain
    return -f.L - 2


def _weight(e: BMLExponents, n: int, k: int) -> float:
    return 2.0 ** (-k * n * (1.0 / e.t - 1.0 / e.p))


def scale_norms(f: MeshFunction, e: BMLExponents, a: Sequence[int], k: int) -> np.ndarray:
    """Unweighted ||f||_{L^{p,q}(Q)} for all cubes Q of D_a at scale k <= J meeting the domain."""
    absf = np.abs(f.values)
    covers = [axis_cover(f.N, f.L, f.J, k, ai) for ai in a]
    unit = 2.0 ** (-f.J) / 3.0
    if f.n == 1:
        _, idx, wt = covers[0]
        vals, wts = absf[idx], wt
    else:
        (_, i0, w0), (_, i1, w1) = covers
        vals = absf[i0[:, None, :, None], i1[None, :, None, :]]
        wts = w0[:, None, :, None] * w1[None, :, None, :]
        vals = vals.reshape(i0.shape[0] * i1.shape[0], -1)
        wts = wts.reshape(vals.shape)
        unit = unit * unit
    live = vals.max(axis=1) > 0
    out = np.zeros(vals.shape[0])
    if np.any(live):
        out[live] = lorentz_rows(vals[live], wts[live], unit, e.p, e.q)
    return out


def _fine_configs(f: MeshFunction, e: BMLExponents, a: Sequence[int]):
    """Yield (d0, d1, norms) for every straddle pattern of sub-mesh cubes.

    norms are Lorentz norms of a unit-volume cube's local configuration; d0
    and d1 count the non-straddling axes with zero and nonzero offset.
    """
    absf = np.abs(f.values)
    n, N = f.n, f.N
    movable = [ax for ax in range(n) if a[ax] != 0]
    for size in range(len(movable) + 1):
        for S in itertools.combinations(movable, size):
            pad = [(1, 1) if ax in S else (0, 0) for ax in range(n)]
            P = np.pad(absf, pad)
            pieces, weights = [], []
            for sigma in itertools.product((0, 1), repeat=len(S)):
                sl, w = [], 1
                for ax in range(n):
                    if ax in S:
                        side = sigma[S.index(ax)]
                        sl.append(slice(side, side + N + 1))
                        w *= (3 - a[ax]) if side == 0 else a[ax]
                    else:
                        sl.append(slice(None))
                pieces.append(P[tuple(sl)])
                weights.append(w)
            vals = np.stack(pieces, axis=-1).reshape(-1, len(pieces))
            live = vals.max(axis=1) > 0
            norms = np.zeros(0)
            if np.any(live):
                norms = lorentz_rows(vals[live], np.array(weights, dtype=np.int64), 3.0 ** (-len(S)), e.p, e.q)
            d1 = sum(1 for ax in range(n) if ax not in S and a[ax] != 0)
            d0 = sum(1 for ax in range(n) if a[ax] == 0)
            yield d0, d1, norms


def _fine_series(e: BMLExponents, n: int, J: int, d0: int, d1: int, u_start: int = 1) -> float:
    """sum_{u >= u_start} 2^{-(J+u) n r/t} (2^u - 1)^{d1} 2^{u d0} in closed form."""
    out = []
    for k in range(d1 + 1):
        rho = 2.0 ** (k + d0 - n * e.r / e.t)
        out.append(comb(d1, k) * (-1) ** (d1 - k) * rho ** u_start / (1.0 - rho))
    return 2.0 ** (-J * n * e.r / e.t) * math.fsum(out)


def _fine_count(J: int, k: int, d0: int, d1: int) -> float:
    u = k - J
    return float((2 ** u - 1) ** d1 * 2 ** (u * d0))


def scale_contribution(f: MeshFunction, e: BMLExponents, a: Sequence[int], k: int) -> float:
    """Sum over cubes of scale k of (weight * norm)^r, or the max when r = inf."""
    n = f.n
    if k > f.J:
        vals = []
        for d0, d1, norms in _fine_configs(f, e, a):
            if norms.size == 0:
                continue
            cnt = _fine_count(f.J, k, d0, d1)
            if e.r == INF:
                if cnt > 0:
                    vals.append(2.0 ** (-k * n / e.t) * float(norms.max()))
            else:
                vals.append(cnt * 2.0 ** (-k * n * e.r / e.t) * math.fsum(norms ** e.r))
        if e.r == INF:
            return max(vals, default=0.0)
        return math.fsum(vals)
    kk = max(k, _k_lo(f))
    norms = scale_norms(f, e, a, kk) * _weight(e, n, k)
    if e.r == INF:
        return float(norms.max(initial=0.0))
    return math.fsum(norms ** e.r)


def _engine(f: MeshFunction, e: BMLExponents, a: Sequence[int]) -> NormBreakdown:
    a = tuple(int(v) for v in a)
    if len(a) != f.n:
        raise ValueError("offset dimension mismatch")
    if not np.any(f.values):
        return NormBreakdown(0.0, 0.0, 0.0, 0.0, e.r, a)
    reason = divergence_reason(e, f.n)
    if reason is not None:
        raise DivergenceError(f"divergent by nontriviality theorem: {reason}")
    n, J, klo = f.n, f.J, _k_lo(f)
    middle = [scale_contribution(f, e, a, k) for k in range(klo, J + 1)]
    base = scale_norms(f, e, a, klo)
    if e.r == INF:
        coarse = float(base.max()) * _weight(e, n, klo - 1)
        fine = scale_contribution(f, e, a, J + 1)
        mid = max(middle)
        return NormBreakdown(coarse, mid, fine, max(coarse, mid, fine), e.r, a)
    beta = n * e.r * (1.0 / e.p - 1.0 / e.t)
    coarse = math.fsum(base ** e.r) * 2.0 ** ((klo - 1) * beta) / (1.0 - 2.0 ** (-beta))
    fine_terms = []
    for d0, d1, norms in _fine_configs(f, e, a):
        if norms.size:
            fine_terms.append(math.fsum(norms ** e.r) * _fine_series(e, n, J, d0, d1))
    fine = math.fsum(fine_terms)
    mid = math.fsum(middle)
    total = math.fsum([coarse, mid, fine]) ** (1.0 / e.r)
    return NormBreakdown(coarse, mid, fine, total, e.r, a)


def bml_norm(f: MeshFunction, e: BMLExponents) -> NormBreakdown:
    """Exact norm over the standard dyadic lattice, split by zone."""
    return _engine(f, e, (0,) * f.n)


def bml_norm_on_grid(f: MeshFunction, e: BMLExponents, a: Sequence[int]) -> float:
    """Exact norm over the shifted lattice D_a."""
    return _engine(f, e, a).total


def bml_norm_truncated(f: MeshFunction, e: BMLExponents, j_min: int, j_max: int,
                       a: Sequence[int] | None = None):
    """Scales j_min..j_max only; returns (value, tail_bound).

    For r < inf the tail bound is the closed-form sum of every omitted scale
    (plus a rounding allowance), so exact^r - value^r lies in [0, tail_bound].
    For r = inf it is the largest omitted term.
    """
    if j_min > j_max:
        raise ValueError("need j_min <= j_max")
    a = (0,) * f.n if a is None else tuple(a)
    if not np.any(f.values):
        return 0.0, 0.0
    reason = divergence_reason(e, f.n)
    if reason is not None:
        raise DivergenceError(f"divergent by nontriviality theorem: {reason}")
    n, J, klo = f.n, f.J, _k_lo(f)
    inside = [scale_contribution(f, e, a, k) for k in range(j_min, j_max + 1)]
    # omitted explicit scales between the two closed-form tails
    explicit_out = [scale_contribution(f, e, a, k)
                    for k in range(klo, J + 2) if k < j_min or k > j_max]
    if e.r == INF:
        value = max(inside)
        base = scale_norms(f, e, a, klo)
        tails = list(explicit_out)
        if j_max > J:
            tails.append(scale_contribution(f, e, a, j_max + 1))
        if j_min <= klo:
            tails.append(float(base.max()) * _weight(e, n, j_min - 1))
        else:
            tails.append(float(base.max()) * _weight(e, n, klo - 1))
        return value, max(tails, default=0.0)
    value_r = math.fsum(inside)
    tail = list(explicit_out)
    base_r = math.fsum(scale_norms(f, e, a, klo) ** e.r)
    beta = n * e.r * (1.0 / e.p - 1.0 / e.t)
    top = min(j_min, klo) - 1
    tail.append(base_r * 2.0 ** (top * beta) / (1.0 - 2.0 ** (-beta)))
    start = max(j_max, J + 1) + 1
    for d0, d1, norms in _fine_configs(f, e, a):
        if norms.size:
            tail.append(math.fsum(norms ** e.r) * _fine_series(e, n, J, d0, d1, start - J))
    tail_r = math.fsum(tail)
    allowance = _ROUND * (value_r + tail_r)
    return value_r ** (1.0 / e.r), tail_r + allowance


# -- structural operations ----------------------------------------------------------


def translate(f: MeshFunction, y: Sequence) -> MeshFunction:
    """(tau_y f)(x) = f(x - y) for a mesh-aligned y; the support must stay inside."""
    shifts = []
    for v in y:
        s = Fraction(v) / f.h
        if s.denominator != 1:
            raise ValueError("translation must be a multiple of the cell side")
        shifts.append(int(s))
    if len(shifts) != f.n:
        raise ValueError("translation dimension mismatch")
    vals = f.values
    out = np.zeros_like(vals)
    src, dst = [], []
    for s in shifts:
        if abs(s) >= f.N:
            src.append(slice(0, 0))
            dst.append(slice(0, 0))
        elif s >= 0:
            src.append(slice(0, f.N - s))
            dst.append(slice(s, f.N))
        else:
            src.append(slice(-s, f.N))
            dst.append(slice(0, f.N + s))
    out[tuple(dst)] = vals[tuple(src)]
    if np.count_nonzero(out) != np.count_nonzero(vals):
        raise ValueError("translated support escapes the domain; enlarge L")
    return f.with_values(out)


def dilate_dyadic(f: MeshFunction, m: int) -> MeshFunction:
    """x -> f(2^m x): the same cell values on a mesh rescaled by 2^-m."""
    return MeshFunction(f.n, f.L - m, f.J + m, f.values)


def convolve(f: MeshFunction, g: MeshFunction) -> MeshFunction:
    """Cell averages of g * f on the common mesh (n = 1).

    The convolution of two cell indicators is a tent of width two cells whose
    average on each of its two cells is h/2, so the averages come from one
    discrete convolution.
    """
    if f.n != 1 or g.n != 1:
        raise ValueError("convolution is implemented for n = 1")
    if not f.same_mesh(g):
        raise ValueError("mesh mismatch")
    N = f.N
    h = 2.0 ** (-f.J)
    D = np.convolve(g.values, f.values)            # index i + j, length 2N - 1
    D = np.concatenate([D, [0.0]])                 # length 2N
    avg = 0.5 * h * (D + np.concatenate([[0.0], D[:-1]]))
    # cell c of the result collects index c + N/2
    off = N // 2
    out = avg[off:off + N]
    spill = np.abs(np.concatenate([avg[:off], avg[off + N:]]))
    if np.any(spill > 0):
        raise ValueError("convolution support escapes the domain; enlarge L")
    return f.with_values(out)


def _box_mask(f: MeshFunction, R) -> np.ndarray:
    s = Fraction(R) / f.h
    if s.denominator != 1:
        raise ValueError("radius must be a multiple of the cell side")
    s = int(s)
    c = f.N // 2
    lo, hi = max(c - s, 0), min(c + s, f.N)
    inside = np.zeros(f.N, dtype=bool)
    inside[lo:hi] = True
    mask = inside
    if f.n == 2:
        mask = inside[:, None] & inside[None, :]
    return mask


def tail_norm(f: MeshFunction, e: BMLExponents, R) -> float:
    """Norm of f outside the box [-R, R)^n (sup-norm ball; exact on the mesh)."""
    g = f.with_values(np.where(_box_mask(f, R), 0.0, f.values))
    return bml_norm(g, e).total


def translation_modulus(f: MeshFunction, e: BMLExponents, b) -> float:
    """max over mesh-aligned |y|_inf <= b of ||f - tau_y f||."""
    s = Fraction(b) / f.h
    if s.denominator != 1:
        raise ValueError("b must be a multiple of the cell side")
    s = int(s)
    best = 0.0
    for y in itertools.product(range(-s, s + 1), repeat=f.n):
        if not any(y):
            continue
        g = translate(f, [Fraction(v) * f.h for v in y])
        best = max(best, bml_norm(f - g, e).total)
    return best


def _enclosing_dyadic(f: MeshFunction, mask: np.ndarray) -> DyadicCube:
    idx = np.argwhere(mask)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    half = 2 ** (f.L + f.J)
    cells = [DyadicCube(f.J, tuple(int(v) - half for v in lo)), DyadicCube(f.J, tuple(int(v) - half for v in hi))]
    Q = cells[0]
    while not Q.contains(cells[1]):
        Q = Q.parent()
        if Q.j < -f.L - 1:
            raise ValueError("supports do not share a dyadic cube")
    return Q


def separation_offset(f: MeshFunction, g: MeshFunction, e: BMLExponents, eps: float):
    """Smallest doubling offset y = 2^i ell(Q) e_1 with ||tau_y f + g|| <= (1+eps) (||f||^r + ||g||^r)^{1/r}.

    Returns (y, lhs, rhs).  Raises ValueError reporting the needed L when the
    domain is too small.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    nf, ng = bml_norm(f, e).total, bml_norm(g, e).total
    rhs = (1 + eps) * (max(nf, ng) if e.r == INF else (nf ** e.r + ng ** e.r) ** (1.0 / e.r))
    if ng == 0 or nf == 0:
        lhs = bml_norm(f + g, e).total
        if lhs <= rhs:
            return (Fraction(0),) * f.n, lhs, rhs
    mask = (f.values != 0) | (g.values != 0)
    Q = _enclosing_dyadic(f, mask)
    step = Q.side
    while True:
        y = (step,) + (Fraction(0),) * (f.n - 1)
        hi = Q.region().hi[0] + step
        if hi > Fraction(2) ** f.L:
            need = math.ceil(math.log2(float(hi)))
            raise ValueError(f"domain too small for the separation; need L >= {need}")
        lhs = bml_norm(translate(f, y) + g, e).total
        if lhs <= rhs:
            return y, lhs, rhs
        step *= 2


def embed_sequence(coeffs: Sequence[float], n: int, L: int, J: int, spacing: int = 4) -> MeshFunction:
    """Phi(a) = sum a_i chi of unit cubes at indices spacing^i along e_1."""
    offs = [(spacing ** i,) + (0,) * (n - 1) for i in range(len(coeffs))]
    return shifted_indicators(offs, coeffs, n, L, J)
