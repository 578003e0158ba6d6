"""Blocks, block-space norm brackets, and the block decompositions of M(b) and T(b).

The block-space norm is an infimum over decompositions, so it is only ever
bracketed: constructive decompositions give upper bounds, and pairing against
test functions gives lower bounds through the Lorentz Hoelder inequality.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bml import BMLExponents, bml_norm
from .lorentz import INF, lorentz_constant, lorentz_norm_of
from .mesh import DyadicCube, MeshFunction, Region, inside_mask, random_step
from .ops import hilbert_transform, maximal_dyadic

__all__ = [
    "Block",
    "BlockDecomposition",
    "validate_block",
    "canonical_decomposition",
    "block_norm_upper",
    "block_norm_lower",
    "default_test_family",
    "decompose_maximal_of_block",
    "decompose_T_of_block",
    "truncate_decomposition",
    "normalized_indicator_block",
]

_TOL = 1e-12


def _lp(x: np.ndarray, r: float) -> float:
    x = np.abs(np.asarray(x, dtype=float))
    if x.size == 0:
        return 0.0
    if r == INF:
        return float(x.max())
    return math.fsum(x ** r) ** (1.0 / r)


@dataclass(frozen=True)
class Block:
    cube: Region
    payload: MeshFunction
    exps: BMLExponents          # primal exponents; the block uses their conjugates
    dyadic: DyadicCube | None = None

    def bound(self) -> float:
        pd, _, td, _ = self.exps.dual()
        return float(self.cube.measure) ** (1.0 / pd - 1.0 / td)

    def to_dict(self) -> dict:
        cube = ({"j": self.dyadic.j, "m": list(self.dyadic.m)} if self.dyadic is not None
                else {"lo": [str(v) for v in self.cube.lo], "hi": [str(v) for v in self.cube.hi]})
        return {"cube": cube, "payload": self.payload.to_dict()}


def validate_block(b: Block):
    """(ok, slack): support inside the cube and ||b||_{p',q'} <= |Q|^{1/p' - 1/t'}."""
    pd, qd, _, _ = b.exps.dual()
    inside = inside_mask(b.payload, b.cube)
    support_ok = not np.any((b.payload.values != 0) & ~inside)
    lhs = lorentz_norm_of(b.payload, pd, qd)
    rhs = b.bound()
    slack = rhs - lhs
    ok = support_ok and lhs <= rhs * (1 + _TOL)
    return ok, slack


def normalized_indicator_block(R: Region, f_like: MeshFunction, e: BMLExponents,
                               dyadic: DyadicCube | None = None) -> Block:
    """|Q|^{1/p'-1/t'} chi_Q / ||chi_Q||_{p',q'}: a block with zero slack."""
    pd, qd, td, _ = e.dual()
    ind = f_like.with_values(inside_mask(f_like, R).astype(float))
    norm = lorentz_norm_of(ind, pd, qd)
    scale = float(R.measure) ** (1.0 / pd - 1.0 / td) / norm
    return Block(R, ind * scale, e, dyadic)


@dataclass
class BlockDecomposition:
    terms: list
    r_dual: float
    tail: float = 0.0                     # l^{r'} mass of terms not listed (closed form)
    meta: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.terms], dtype=float)

    @property
    def cost(self) -> float:
        listed = _lp(self.lambdas, self.r_dual)
        if self.tail == 0:
            return listed
        if self.r_dual == INF:
            return max(listed, self.tail)
        return (listed ** self.r_dual + self.tail ** self.r_dual) ** (1.0 / self.r_dual)

    def reconstruct(self, like: MeshFunction) -> MeshFunction:
        acc = np.zeros(like.values.shape)
        for lam, blk in self.terms:
            acc = acc + lam * blk.payload.values
        return like.with_values(acc)

    def validation(self) -> list:
        return [validate_block(b) for _, b in self.terms]

    def to_dict(self) -> dict:
        report = self.validation()
        pd = qd = td = None
        if self.terms:
            pd, qd, td, _ = self.terms[0][1].exps.dual()
        return {
            "terms": [dict(lam=float(lam), **blk.to_dict()) for lam, blk in self.terms],
            "cost": self.cost,
            "validation": {
                "all_ok": all(ok for ok, _ in report),
                "min_slack": min((s for _, s in report), default=0.0),
                "block_exponent": None if pd is None else 1.0 / pd - 1.0 / td,
                "lambda_exponent": None if pd is None else 1.0 / td - 1.0 / pd,
            },
            "meta": self.meta,
        }


def canonical_decomposition(g: MeshFunction, j: int, e: BMLExponents) -> BlockDecomposition:
    """Partition supp g by dyadic cubes of scale j; lambda_i = |Q_i|^{1/t'-1/p'} ||g chi_i||."""
    if not -g.L <= j <= g.J:
        raise ValueError("scale must lie between the domain and the mesh")
    pd, qd, td, rd = e.dual()
    per = 2 ** (g.J - j)                  # cells per cube edge
    half = 2 ** (g.L + j)                 # cube index offset
    nb = g.N // per
    terms = []
    for idx in np.ndindex(*(nb,) * g.n):
        sl = tuple(slice(i * per, (i + 1) * per) for i in idx)
        if not np.any(g.values[sl]):
            continue
        vals = np.zeros(g.values.shape)
        vals[sl] = g.values[sl]
        piece = g.with_values(vals)
        Q = DyadicCube(j, tuple(i - half for i in idx))
        R = Q.region()
        lam = float(R.measure) ** (1.0 / td - 1.0 / pd) * lorentz_norm_of(piece, pd, qd)
        terms.append((lam, Block(R, piece * (1.0 / lam), e, Q)))
    return BlockDecomposition(terms, rd, meta={"scale": j})


def block_norm_upper(g: MeshFunction, e: BMLExponents, return_best: bool = False):
    """Min canonical cost over every dyadic scale between the domain and the mesh."""
    if not np.any(g.values):
        return (0.0, BlockDecomposition([], e.dual()[3])) if return_best else 0.0
    best, best_d = INF, None
    for j in range(-g.L, g.J + 1):
        d = canonical_decomposition(g, j, e)
        if d.cost < best:
            best, best_d = d.cost, d
    return (best, best_d) if return_best else best


def default_test_family(g: MeshFunction, seed: int = 0, randoms: int = 50) -> list:
    """Dyadic indicators (plain and times sign g) meeting supp g, plus seeded random steps."""
    fam = []
    sign = np.sign(g.values)
    for j in range(-g.L, g.J + 1):
        per = 2 ** (g.J - j)
        nb = g.N // per
        for idx in np.ndindex(*(nb,) * g.n):
            sl = tuple(slice(i * per, (i + 1) * per) for i in idx)
            if not np.any(g.values[sl]):
                continue
            ind = np.zeros(g.values.shape)
            ind[sl] = 1.0
            fam.append(g.with_values(ind))
            fam.append(g.with_values(ind * sign))
    for s in range(randoms):
        fam.append(random_step(seed * 1000 + s, g.n, g.L, g.J))
    return fam


def block_norm_lower(g: MeshFunction, e: BMLExponents, test_family: Sequence[MeshFunction] | None = None) -> float:
    """max over the family of |int f g| / ||f||_M, a certified lower bound for ||g||_H."""
    if test_family is None:
        test_family = default_test_family(g)
    if len(test_family) == 0:
        raise ValueError("empty test family")
    if not np.any(g.values):
        return 0.0
    best = 0.0
    vol = float(g.cell_volume)
    for f in test_family:
        nf = bml_norm(f, e).total
        if nf > 0:
            best = max(best, abs(math.fsum((f.values * g.values).ravel()) * vol) / nf)
    return best


def decompose_maximal_of_block(b: Block) -> BlockDecomposition:
    """M_D(b) as sum_k c 2^{-kn/t} m_k over the ancestor rings of a dyadic Q.

    Ring k >= 1 is Q^{(k)} minus Q^{(k-1)}: 2^n - 1 dyadic siblings of side
    2^k ell(Q) on which M_D b equals ||b||_1 / |Q^{(k)}|.  Ring 0 is Q itself.
    One constant c covers all rings so every m_k is a valid block.  Rings
    beyond the domain are summed in closed form into ``tail``.
    """
    if b.dyadic is None:
        raise ValueError("the maximal decomposition needs a dyadic cube")
    e, f = b.exps, b.payload
    pd, qd, td, rd = e.dual()
    n, Q = f.n, b.dyadic
    mb = maximal_dyadic(f)
    l1 = f.l1()
    vol_q = float(Q.volume)
    # needed coefficient on ring 0, and the exact ring-k value c_k with c from ring 1 onward
    ring0 = mb.restrict(Q.region())
    need0 = vol_q ** (1.0 / td - 1.0 / pd) * lorentz_norm_of(ring0, pd, qd)
    c_rings = lorentz_constant(pd, qd) * l1 * vol_q ** (-1.0 / e.t)
    c = max(need0, c_rings)
    terms = [(c, Block(Q.region(), ring0 * (1.0 / c), e, Q))]
    envelope = []
    anc, k = Q, 0
    while anc.j > -f.L:
        prev, anc, k = anc, anc.parent(), k + 1
        lam = c * 2.0 ** (-k * n / e.t)
        bound = l1 / float(anc.volume)
        for child in _children(anc):
            if child == prev:
                continue
            piece = mb.restrict(child.region())
            envelope.append(float(piece.values.max()) / bound if bound > 0 else 0.0)
            terms.append((lam, Block(child.region(), piece * (1.0 / lam), e, child)))
    kmax = k
    rho = 2.0 ** (-n * rd / e.t) if rd != INF else 0.0
    tail = 0.0
    if rd != INF and c > 0:
        tail = c * ((2 ** n - 1) * rho ** (kmax + 1) / (1 - rho)) ** (1.0 / rd)
    closed = _ring_closed_form(c, n, e.t, rd, kmax, 2 ** n - 1)
    return BlockDecomposition(terms, rd, tail, meta={
        "c": c, "rings": kmax, "closed_form_listed": closed,
        "envelope_ratio_max": max(envelope, default=0.0),
    })


def _children(Q: DyadicCube):
    for bits in itertools.product((0, 1), repeat=Q.n):
        yield DyadicCube(Q.j + 1, tuple(2 * m + bt for m, bt in zip(Q.m, bits)))


def _ring_closed_form(c: float, n: int, t: float, rd: float, K: int, per_ring: int) -> float:
    """(c^{r'} (1 + per_ring sum_{k=1}^K rho^k))^{1/r'} with rho = 2^{-n r'/t}."""
    if rd == INF:
        return c
    rho = 2.0 ** (-n * rd / t)
    geo = rho * (1 - rho ** K) / (1 - rho)
    return c * (1 + per_ring * geo) ** (1.0 / rd)


def decompose_T_of_block(b: Block) -> BlockDecomposition:
    """T b = chi_{2Q} T b + sum_k chi_{2^{k+1}Q minus 2^k Q} T b (n = 1).

    Each ring is two intervals of length 2^{k-1} ell.  The pointwise envelope
    |T b| <~ 2^{-kn} |Q|^{1/t - 1} is measured per ring; after block
    normalisation on a ring of measure 2^{kn}|Q| that decay becomes
    2^{-kn/t}, so the coefficient is C 2^{-kn/t} with one C that makes every
    piece a valid block.
    Rings are kept while 2^{k+1}Q fits in the domain; T b beyond them is
    reported as ``outside_l1``.
    """
    f, e = b.payload, b.exps
    if f.n != 1:
        raise ValueError("the transform decomposition is implemented for n = 1")
    pd, qd, td, rd = e.dual()
    Q = b.cube
    ell = Q.side
    if Fraction(ell, 2) < f.h:
        raise ValueError("cube must span at least two cells")
    c0 = Q.center[0]
    tb = hilbert_transform(f).values
    dom = f.domain
    pieces = []           # (k, region)
    near = Region((c0 - ell,), (c0 + ell,))
    if not dom.contains(near):
        raise ValueError("2Q leaves the domain")
    pieces.append((0, near))
    k = 1
    while True:
        outer = Region((c0 - 2 ** k * ell,), (c0 + 2 ** k * ell,))
        if not dom.contains(outer):
            break
        inner_lo, inner_hi = c0 - 2 ** (k - 1) * ell, c0 + 2 ** (k - 1) * ell
        pieces.append((k, Region((outer.lo[0],), (inner_lo,))))
        pieces.append((k, Region((inner_hi,), (outer.hi[0],))))
        k += 1
    kmax = k - 1
    vol_q = float(Q.measure)
    raw, needs, env = [], [], []
    for kk, R in pieces:
        piece = tb.restrict(R)
        raw.append((kk, R, piece))
        need = float(R.measure) ** (1.0 / td - 1.0 / pd) * lorentz_norm_of(piece, pd, qd)
        needs.append(need * 2.0 ** (kk / e.t))
        if kk >= 1:
            bound = 2.0 ** (-kk) / vol_q * vol_q ** (1.0 / e.t)
            env.append(float(np.abs(piece.values).max()) / bound)
    C = max(needs)
    terms = [(C * 2.0 ** (-kk / e.t), Block(R, piece * (1.0 / (C * 2.0 ** (-kk / e.t))), e)) for kk, R, piece in raw]
    covered = np.zeros(f.N, dtype=bool)
    for _, R, _ in raw:
        covered |= inside_mask(f, R)
    outside = math.fsum(np.abs(tb.values[~covered])) * float(f.h)
    near_norm = lorentz_norm_of(raw[0][2], pd, qd) / vol_q ** (1.0 / pd - 1.0 / td)
    tail = 0.0
    if rd != INF:
        rho = 2.0 ** (-rd / e.t)
        tail = C * (2 * rho ** (kmax + 1) / (1 - rho)) ** (1.0 / rd)
    closed = _ring_closed_form(C, 1, e.t, rd, kmax, 2)
    return BlockDecomposition(terms, rd, tail, meta={
        "C": C, "rings": kmax, "closed_form_listed": closed,
        "envelope_constant": max(env, default=0.0), "near_constant": near_norm,
        "outside_l1": outside,
    })


def truncate_decomposition(d: BlockDecomposition, N: int, like: MeshFunction):
    """Keep the N largest |lambda| terms; return (f_N, tail) with tail the l^{r'} norm of the rest."""
    order = sorted(range(len(d.terms)), key=lambda i: -abs(d.terms[i][0]))
    keep, drop = order[:N], order[N:]
    f_n = BlockDecomposition([d.terms[i] for i in keep], d.r_dual).reconstruct(like)
    tail = _lp([d.terms[i][0] for i in drop], d.r_dual)
    return f_n, tail
