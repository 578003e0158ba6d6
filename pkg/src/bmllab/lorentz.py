"""Lorentz quasi-norms of step functions.

The decreasing rearrangement of a step function is itself a step function,
so every norm here is a finite closed-form sum over its breakpoints.  The
distribution-function route is kept as an independent second formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .mesh import MeshFunction, Region, region_weights

__all__ = [
    "StepProfile",
    "distribution",
    "rearrangement",
    "lorentz_norm",
    "lorentz_norm_via_distribution",
    "lorentz_norm_of",
    "power_identity_check",
    "holder_pair",
    "conjugate",
    "lorentz_rows",
    "lorentz_constant",
]

INF = math.inf


@dataclass(frozen=True)
class StepProfile:
    """Breakpoints ``(v_k, t_k)`` of f*: f*(t) = v_k on [t_{k-1}, t_k)."""

    breakpoints: tuple

    def __post_init__(self):
        prev_v, prev_t = INF, Fraction(0)
        for v, t in self.breakpoints:
            if not (v < prev_v and t > prev_t and v > 0):
                raise ValueError("profile must have strictly decreasing positive values and increasing measures")
            prev_v, prev_t = v, t

    @property
    def support_measure(self) -> Fraction:
        return self.breakpoints[-1][1] if self.breakpoints else Fraction(0)

    def __len__(self):
        return len(self.breakpoints)

    def to_json(self) -> list:
        return [[float(v), t.numerator, t.denominator] for v, t in self.breakpoints]

    @classmethod
    def from_json(cls, data) -> "StepProfile":
        return cls(tuple((float(v), Fraction(int(a), int(b))) for v, a, b in data))


def _cell_measures(f: MeshFunction, R: Region | None):
    """Flat |values| and exact measures of their overlap with R."""
    vals = np.abs(f.values).ravel()
    if R is None:
        meas = [f.cell_volume] * vals.size
        return vals, meas
    w = region_weights(f, R)
    if f.n == 1:
        meas = list(w[0])
    else:
        meas = [a * b for a in w[0] for b in w[1]]
    return vals, meas


def distribution(f: MeshFunction, alpha: float, R: Region | None = None) -> Fraction:
    """Exact measure of {x in R : |f(x)| > alpha}."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    vals, meas = _cell_measures(f, R)
    total = Fraction(0)
    for v, m in zip(vals, meas):
        if v > alpha:
            total += m
    return total


def rearrangement(f: MeshFunction, R: Region | None = None) -> StepProfile:
    """Sort the distinct nonzero |values| downward and accumulate exact measure."""
    vals, meas = _cell_measures(f, R)
    acc: dict = {}
    for v, m in zip(vals, meas):
        if v > 0 and m > 0:
            acc[float(v)] = acc.get(float(v), Fraction(0)) + m
    pts, t = [], Fraction(0)
    for v in sorted(acc, reverse=True):
        t += acc[v]
        pts.append((v, t))
    return StepProfile(tuple(pts))


def _check_exponents(p, q):
    if not (p > 0 and q > 0):
        raise ValueError("Lorentz exponents must be positive")
    if p == INF and q != INF:
        raise ValueError("p = inf is only supported with q = inf")


def lorentz_constant(p: float, q: float) -> float:
    """Norm of the indicator of a unit-measure set."""
    return 1.0 if q == INF else (p / q) ** (1.0 / q)


def lorentz_norm(prof: StepProfile, p: float, q: float) -> float:
    _check_exponents(p, q)
    if not prof.breakpoints:
        return 0.0
    if p == INF:
        return prof.breakpoints[0][0]
    if q == INF:
        return max(v * float(t) ** (1.0 / p) for v, t in prof.breakpoints)
    # log-space sum: t^{q/p} overflows for large q/p even when the norm is moderate
    logs, prev = [], None
    for v, t in prof.breakpoints:
        lt = _log_fraction(t)
        gap = 0.0 if prev is None else math.log(-math.expm1((q / p) * (prev - lt)))
        logs.append(q * math.log(v) + (q / p) * lt + gap)
        prev = lt
    return math.exp((_logsumexp(logs) + math.log(p / q)) / q)


def _log_fraction(t: Fraction) -> float:
    return math.log(t.numerator) - math.log(t.denominator)


def _logsumexp(logs) -> float:
    m = max(logs)
    return m + math.log(math.fsum(math.exp(x - m) for x in logs))


def lorentz_norm_via_distribution(f: MeshFunction, p: float, q: float, R: Region | None = None) -> float:
    """p^{1/q} (int_0^inf (s d_f(s)^{1/p})^q ds/s)^{1/q}, integrated level by level.

    d_f is constant on [u_{k+1}, u_k) between consecutive distinct values, so
    the integral is the sum of d^{q/p} (u_k^q - u_{k+1}^q) / q.
    """
    _check_exponents(p, q)
    if p == INF:
        raise ValueError("distribution formula needs p < inf")
    vals = np.abs(f.values).ravel()
    levels = sorted({float(v) for v in vals if v > 0}, reverse=True)
    if not levels:
        return 0.0
    if q == INF:
        # the sup of s d(s)^{1/p} is approached at the left end of each step
        best = 0.0
        for k, u in enumerate(levels):
            d = distribution(f, levels[k + 1] if k + 1 < len(levels) else 0.0, R)
            best = max(best, u * float(d) ** (1.0 / p))
        return best
    logs = []
    for k, u in enumerate(levels):
        below = levels[k + 1] if k + 1 < len(levels) else 0.0
        d = distribution(f, below, R)
        # d^{q/p} (u^q - below^q) / q, kept in logs
        drop = math.log(-math.expm1(q * math.log(below / u))) if below > 0 else 0.0
        logs.append((q / p) * _log_fraction(d) + q * math.log(u) + drop)
    return math.exp((_logsumexp(logs) + math.log(p / q)) / q)


def lorentz_norm_of(f: MeshFunction, p: float, q: float, R: Region | None = None) -> float:
    return lorentz_norm(rearrangement(f, R), p, q)


def power_identity_check(f: MeshFunction, s: float, p: float, q: float):
    """(|| |f|^s ||_{p,q}, ||f||_{ps,qs}^s)."""
    if min(s, p, q) <= 0 or INF in (s, p, q):
        raise ValueError("s, p, q must be finite and positive")
    lhs = lorentz_norm_of(f.with_values(np.abs(f.values) ** s), p, q)
    rhs = lorentz_norm_of(f, p * s, q * s) ** s
    return lhs, rhs


def conjugate(p: float) -> float:
    if p == 1:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def holder_pair(f: MeshFunction, g: MeshFunction, p: float, q: float):
    """(int |fg|, ||f||_{p,q} ||g||_{p',q'}) for 1 <= p, q <= inf."""
    if not (1 <= p <= INF and 1 <= q <= INF):
        raise ValueError("need 1 <= p, q <= inf")
    if not f.same_mesh(g):
        raise ValueError("mesh mismatch")
    lhs = math.fsum(np.abs(f.values * g.values).ravel()) * float(f.cell_volume)
    pc, qc = conjugate(p), conjugate(q)
    nf = _norm_any(f, p, q)
    ng = _norm_any(g, pc, qc)
    return lhs, nf * ng


def _norm_any(f: MeshFunction, p: float, q: float) -> float:
    # L^{1,inf} and L^{inf,1} appear as conjugates; handle them directly.
    prof = rearrangement(f)
    if p == INF:
        if q == INF:
            return prof.breakpoints[0][0] if prof.breakpoints else 0.0
        # ||f||_{inf,q} = (int (f*)^q dt/t)^{1/q} is infinite unless f = 0
        return 0.0 if not prof.breakpoints else INF
    return lorentz_norm(prof, p, q)


def lorentz_rows(vals: np.ndarray, weights: np.ndarray, unit: float, p: float, q: float) -> np.ndarray:
    """Row-wise Lorentz norms of many small step functions at once.

    ``vals`` holds |values| (rows are independent functions), ``weights`` the
    integer measure of each entry in multiples of ``unit``.  Ties need no
    merging: the closed form telescopes across equal values.
    """
    if vals.shape[-1] == 0:
        return np.zeros(vals.shape[:-1])
    weights = np.broadcast_to(weights, vals.shape)
    order = np.argsort(-vals, axis=-1, kind="stable")
    v = np.take_along_axis(vals, order, axis=-1)
    w = np.take_along_axis(weights, order, axis=-1)
    t = np.cumsum(w, axis=-1, dtype=np.float64) * unit
    if q == INF:
        return np.max(v * t ** (1.0 / p), axis=-1)
    with np.errstate(divide="ignore"):
        lt = np.log(t)
        lv = np.log(v)
    prev = np.concatenate([np.full(lt.shape[:-1] + (1,), -np.inf), lt[..., :-1]], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.log(-np.expm1((q / p) * (prev - lt)))
        a = q * lv + (q / p) * lt + gap
    # zero values or zero measure contribute nothing
    a = np.where((v > 0) & (w > 0), a, -np.inf)
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    total = np.sum(np.exp(a - m), axis=-1)
    with np.errstate(divide="ignore"):
        out = np.exp((np.log(total) + m[..., 0] + math.log(p / q)) / q)
    return np.where(total > 0, out, 0.0)
