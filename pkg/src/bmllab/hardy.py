"""L^inf atoms, certified H^1 upper bounds and weak factorization through the Hilbert transform.

True H^1 norms are never computed.  Every bound reported here is an atomic
sum over atoms that pass ``validate_atom``, so it is a genuine upper bound.

One factorization step takes an atom ``a`` on Q (side ell, centre c), puts
``g`` on the cube of the same side centred at ``y0 = c + M ell / 2`` and sets
``h = -a / Tg(c)``.  Since T* = -T,

    a = (g T*h - h Tg) + F,    F = a + g Th + h Tg,

and F is small on both cubes and has zero integral.  The residual of each
atom is re-atomized as one atom on the interval hull of the two cubes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bml import BMLExponents, bml_norm
from .lorentz import lorentz_norm_of
from .mesh import MeshFunction, Region, indicator, inside_mask
from .ops import bmo_norm, hilbert_adjoint, hilbert_at, hilbert_transform, pairing

__all__ = [
    "Atom",
    "validate_atom",
    "h1_upper",
    "canonical_atom",
    "EnvelopeCertificate",
    "envelope_certificate",
    "homogeneity_constant",
    "homogeneity_profile",
    "StepResult",
    "factorization_step",
    "reatomize",
    "RoundRecord",
    "FactorizationState",
    "factorize",
    "search_separation",
    "envelope_slope",
    "commutator_lower_diagnostic",
    "DEFAULT_EXPS",
]

DEFAULT_EXPS = BMLExponents(2.0, 2.0, 3.0, 4.0)
MEAN_TOL = 1e-9          # relative to ||payload||_1
SUP_TOL = 1e-12


@dataclass(frozen=True)
class Atom:
    cube: Region
    payload: MeshFunction

    def to_dict(self) -> dict:
        return {"lo": [str(v) for v in self.cube.lo], "hi": [str(v) for v in self.cube.hi],
                "payload": self.payload.to_dict()}


def validate_atom(a: Atom):
    """(ok, mean_defect, sup_slack) for support, zero mean and the sup bound."""
    f = a.payload
    inside = inside_mask(f, a.cube)
    support_ok = not np.any((f.values != 0) & ~inside)
    mean_defect = abs(f.integral())
    bound = 1.0 / float(a.cube.measure)
    sup_slack = bound - f.sup()
    ok = (a.cube.is_cube and support_ok
          and mean_defect <= MEAN_TOL * max(f.l1(), 1e-300)
          and sup_slack >= -SUP_TOL * bound)
    return ok, mean_defect, sup_slack


def h1_upper(d: Sequence) -> float:
    """sum |lambda| over a decomposition into valid atoms."""
    for _, a in d:
        ok, defect, slack = validate_atom(a)
        if not ok:
            raise ValueError(f"invalid atom (mean defect {defect:.3g}, sup slack {slack:.3g})")
    return math.fsum(abs(lam) for lam, _ in d)


def canonical_atom(cube: Region, n: int, L: int, J: int) -> Atom:
    """|Q|^{-1} on the left half minus |Q|^{-1} on the right half (n = 1)."""
    if n != 1:
        raise ValueError("canonical_atom is one-dimensional")
    lo, hi = cube.lo[0], cube.hi[0]
    mid = (lo + hi) / 2
    v = 1.0 / float(cube.measure)
    left = indicator(Region((lo,), (mid,)), n, L, J, v)
    right = indicator(Region((mid,), (hi,)), n, L, J, v)
    return Atom(cube, left - right)


# -- envelope certificates ------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeCertificate:
    x0: tuple
    y0: tuple
    R: Fraction
    M: Fraction
    mean_zero_defect: float
    envelope_constant: float
    # the H^1 constant of the two-bump estimate is dimensional and unspecified;
    # certificates carry envelope_constant * log M and leave the factor open
    lemma_constant: float | None = None

    @property
    def issued(self) -> bool:
        return math.isfinite(self.envelope_constant) and self.mean_zero_defect <= 1e-9

    @property
    def log_bound(self) -> float:
        """envelope_constant * log M; times the dimensional constant it bounds ||F||_{H^1}."""
        if not self.issued:
            return math.inf
        out = self.envelope_constant * math.log(float(self.M))
        return out if self.lemma_constant is None else self.lemma_constant * out

    def to_dict(self) -> dict:
        return {
            "x0": [float(v) for v in self.x0],
            "y0": [float(v) for v in self.y0],
            "R": float(self.R),
            "M": float(self.M),
            "mean_zero_defect": self.mean_zero_defect,
            "envelope_constant": self.envelope_constant,
            "issued": self.issued,
            "log_bound": self.log_bound,
            "label": "empirical constant",
        }


def _in_ball_mask(f: MeshFunction, centre, R: Fraction) -> np.ndarray:
    """Cells whose closure lies in the closed Euclidean ball B(centre, R)."""
    e = f.cell_edges()
    lo = np.array([float(v) for v in e[:-1]])
    hi = np.array([float(v) for v in e[1:]])
    r2 = float(R) ** 2
    far = [np.maximum(np.abs(lo - float(c)), np.abs(hi - float(c))) ** 2 for c in centre]
    if f.n == 1:
        return far[0] <= r2 * (1 + 1e-15)
    return far[0][:, None] + far[1][None, :] <= r2 * (1 + 1e-15)


def envelope_certificate(F: MeshFunction, x0, y0, R) -> EnvelopeCertificate:
    """Smallest C with |F| <= C R^{-n} (chi_B(x0,R) + chi_B(y0,R)), cell by cell."""
    x0 = tuple(Fraction(v) for v in x0)
    y0 = tuple(Fraction(v) for v in y0)
    R = Fraction(R)
    if R <= 0:
        raise ValueError("radius must be positive")
    dist = math.sqrt(sum(float(a - b) ** 2 for a, b in zip(x0, y0)))
    M = Fraction(dist) / R
    if M <= 10:
        raise ValueError(f"M must exceed 10 (got {float(M):.4g})")
    env = _in_ball_mask(F, x0, R).astype(float) + _in_ball_mask(F, y0, R).astype(float)
    absF = np.abs(F.values)
    if np.any((absF > 0) & (env == 0)):
        const = math.inf
    elif not np.any(absF):
        const = 0.0
    else:
        nz = env > 0
        const = float(np.max(absF[nz] / env[nz])) * float(R) ** F.n
    return EnvelopeCertificate(x0, y0, R, M, abs(F.integral()), const)


# -- homogeneity ----------------------------------------------------------------


def _as_indicator(omega, like: MeshFunction) -> MeshFunction:
    if isinstance(omega, MeshFunction):
        return omega.with_values((omega.values != 0).astype(float))
    return indicator(omega, like.n, like.L, like.J)


def homogeneity_profile(Q: Region, omega, M, like: MeshFunction | None = None, samples: int = 16) -> dict:
    """Homogeneity constant at x = c_Q +- M ell / 2 and sign constancy of T chi_Omega nearby.

    ``omega`` is a Region or a mesh function whose support is Omega.
    """
    if Q.n != 1:
        raise ValueError("homogeneity is measured for n = 1")
    if M <= 10:
        raise ValueError("M must exceed 10")
    if like is None and not isinstance(omega, MeshFunction):
        raise ValueError("a mesh is needed to represent Omega")
    ind = _as_indicator(omega, omega if isinstance(omega, MeshFunction) else like)
    if np.any((ind.values != 0) & ~inside_mask(ind, Q)):
        raise ValueError("Omega must lie inside Q")
    vol = ind.integral()
    if vol == 0:
        raise ValueError("Omega is empty")
    c, ell = Q.center[0], Q.side
    shift = Fraction(M) * ell / 2
    scale = float(M) ** Q.n * float(Q.measure) / vol
    values, signs = [], []
    for x in (c + shift, c - shift):
        values.append(abs(hilbert_at(ind, x)) * scale)
        # T chi_Omega on B(x, ell/2): the kernel has one sign away from Q
        pts = [x - ell / 2 + ell * Fraction(i, samples) for i in range(samples + 1)]
        s = {math.copysign(1.0, hilbert_at(ind, p)) for p in pts}
        signs.append(len(s) == 1)
    return {"c": min(values), "per_point": values, "sign_constant": all(signs)}


def homogeneity_constant(Q: Region, omega, M, like: MeshFunction | None = None) -> float:
    return homogeneity_profile(Q, omega, M, like)["c"]


# -- one factorization step -----------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    g: MeshFunction
    h: MeshFunction
    F: MeshFunction
    cert: EnvelopeCertificate
    product_cost: float | None
    g_cube: Region

    def term(self) -> MeshFunction:
        """g T*h - h Tg."""
        tsh = hilbert_adjoint(self.h).values
        tg = hilbert_transform(self.g).values
        return self.g * tsh - self.h * tg


def _fit_domain(f: MeshFunction, hi: Fraction) -> MeshFunction:
    extra = 0
    while hi > Fraction(2) ** (f.L + extra):
        extra += 1
    if extra:
        warnings.warn(f"domain enlarged to L = {f.L + extra} to fit the partner cube", stacklevel=3)
        return f.enlarge(extra)
    return f


def factorization_step(a: Atom, M, exps: BMLExponents | None = DEFAULT_EXPS,
                       enlarge: bool = False) -> StepResult:
    """Split an atom as g T*h - h Tg plus a small residual F.

    ``exps`` selects the Morrey norm of h for ``product_cost``; pass None to
    skip it.  With ``enlarge`` the domain grows to fit y0 (with a warning),
    otherwise a partner cube outside the domain is an error.
    """
    f = a.payload
    if f.n != 1:
        raise ValueError("factorization is implemented for n = 1")
    if M <= 10:
        raise ValueError("M must exceed 10")
    ok, defect, slack = validate_atom(a)
    if not ok:
        raise ValueError(f"invalid atom (mean defect {defect:.3g}, sup slack {slack:.3g})")
    Q = a.cube
    ell, cq = Q.side, Q.center[0]
    y0 = cq + Fraction(M) * ell / 2
    g_cube = Region((y0 - ell / 2,), (y0 + ell / 2,))
    if g_cube.hi[0] > Fraction(2) ** f.L:
        if not enlarge:
            need = math.ceil(math.log2(float(g_cube.hi[0])))
            raise ValueError(f"partner cube leaves the domain; need L >= {need}")
        f = _fit_domain(f, g_cube.hi[0])
        a = Atom(a.cube, f)
    g = indicator(g_cube, 1, f.L, f.J)
    tg_c = hilbert_at(g, cq)
    floor = 0.2 / float(M)
    if abs(tg_c) < floor:
        raise ValueError(f"|Tg(c_Q)| = {tg_c:.3g} below the positivity floor {floor:.3g}")
    h = f * (-1.0 / tg_c)
    th = hilbert_transform(h).values
    tg = hilbert_transform(g).values
    F = f + g * th + h * tg
    cert = envelope_certificate(F, (cq,), (y0,), ell / 2)
    cost = None
    if exps is not None:
        pd, qd, td, _ = exps.dual()
        g_block = lorentz_norm_of(g, pd, qd) * float(g_cube.measure) ** (1.0 / td - 1.0 / pd)
        cost = g_block * bml_norm(h, exps).total
    return StepResult(g, h, F, cert, cost, g_cube)


def reatomize(F: MeshFunction, hull: Region):
    """(lambda, atom) with F = lambda * atom on the hull; None when F vanishes."""
    sup = F.sup()
    if sup == 0:
        return None
    lam = sup * float(hull.measure)
    atom = Atom(hull, F * (1.0 / lam))
    ok, defect, slack = validate_atom(atom)
    if not ok:
        raise ValueError(f"re-atomization failed (mean defect {defect:.3g}, sup slack {slack:.3g})")
    return lam, atom


# -- iteration ------------------------------------------------------------------


@dataclass
class RoundRecord:
    terms: list                     # (lambda, g, h)
    residual: MeshFunction
    residual_l1: float
    certificates: list
    atoms: list                     # re-atomized residual: (lambda, Atom)
    certified_bound: float
    reconstruction_error: float

    def to_dict(self) -> dict:
        return {
            "lambdas": [lam for lam, _, _ in self.terms],
            "residual_l1": self.residual_l1,
            "certified_bound": self.certified_bound,
            "reconstruction_error": self.reconstruction_error,
            "certificates": [c.to_dict() for c in self.certificates],
            "atom_cubes": [[float(a.cube.lo[0]), float(a.cube.hi[0])] for _, a in self.atoms],
        }


@dataclass
class FactorizationState:
    f: MeshFunction | None
    M: int
    initial_bound: float
    rounds: list = field(default_factory=list)

    @property
    def bounds(self) -> list:
        return [self.initial_bound] + [r.certified_bound for r in self.rounds]

    @property
    def ratios(self) -> list:
        b = self.bounds
        return [b[i + 1] / b[i] for i in range(len(b) - 1) if b[i] > 0]

    def reconstruct(self) -> MeshFunction:
        """sum of all lambda (g T*h - h Tg) plus the final residual."""
        if self.f is None:
            raise ValueError("empty state")
        acc = self.rounds[-1].residual if self.rounds else self.f
        for r in self.rounds:
            for lam, g, h in r.terms:
                acc = acc + _term(g, h) * lam
        return acc

    def reconstruction_error(self) -> float:
        if self.f is None:
            return 0.0
        return float(np.max(np.abs((self.f - self.reconstruct()).values)))

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "initial_bound": self.initial_bound,
            "ratios": self.ratios,
            "total_reconstruction_error": self.reconstruction_error(),
            "rounds": [r.to_dict() for r in self.rounds],
        }


def _term(g: MeshFunction, h: MeshFunction) -> MeshFunction:
    return g * hilbert_adjoint(h).values - h * hilbert_transform(g).values


def factorize(d: Sequence, M: int = 256, rounds: int = 3, enlarge: bool = False) -> FactorizationState:
    """Iterate factorization steps, re-atomizing each residual on the hull of its two cubes."""
    if M <= 10:
        raise ValueError("M must exceed 10")
    d = [(float(lam), a) for lam, a in d if lam != 0 and np.any(a.payload.values)]
    if not d:
        return FactorizationState(None, M, 0.0)
    bound0 = h1_upper(d)
    f = d[0][1].payload.zeros_like()
    for lam, a in d:
        f = f + a.payload * lam
    state = FactorizationState(f, M, bound0)
    current, cur_f = d, f
    for _ in range(rounds):
        terms, certs, atoms = [], [], []
        residual = None
        for lam, a in current:
            step = factorization_step(a, M, exps=None, enlarge=enlarge)
            if residual is None:
                residual = step.F.zeros_like()
            elif not residual.same_mesh(step.F):
                residual = _fit_domain(residual, Fraction(2) ** step.F.L)
            terms.append((lam, step.g, step.h))
            certs.append(step.cert)
            residual = residual + step.F * lam
            lo = min(a.cube.lo[0], step.g_cube.lo[0])
            hi = max(a.cube.hi[0], step.g_cube.hi[0])
            piece = reatomize(step.F, Region((lo,), (hi,)))
            if piece is not None:
                atoms.append((lam * piece[0], piece[1]))
        if not cur_f.same_mesh(residual):
            cur_f = _fit_domain(cur_f, Fraction(2) ** residual.L)
        explained = residual
        for lam, g, h in terms:
            explained = explained + _term(g, h) * lam
        err = float(np.max(np.abs((cur_f - explained).values)))
        state.rounds.append(RoundRecord(terms, residual, residual.l1(), certs, atoms,
                                        h1_upper(atoms), err))
        if state.f is not None and not state.f.same_mesh(residual):
            state.f = _fit_domain(state.f, Fraction(2) ** residual.L)
        current, cur_f = atoms, residual
        if not current:
            break
    return state


def search_separation(d: Sequence, rounds: int = 3, target: float = 0.75,
                      candidates: Sequence[int] = tuple(2 ** k for k in range(4, 11))):
    """Smallest M whose measured per-round ratios all stay at or below ``target``.

    Returns ``(M, state, table)``; M is None when no candidate fits the domain
    and meets the target.  ``table`` maps each tried M to its worst ratio.
    """
    table = {}
    for M in candidates:
        try:
            state = factorize(d, M, rounds)
        except ValueError as exc:
            table[M] = str(exc)
            continue
        worst = max(state.ratios) if state.ratios else 0.0
        table[M] = worst
        if worst <= target:
            return M, state, table
    return None, None, table


def envelope_slope(a: Atom, Ms: Sequence[int] = (16, 64, 256)):
    """Least-squares slope of log envelope_constant against log M, and the constants."""
    consts = [factorization_step(a, M, exps=None).cert.envelope_constant for M in Ms]
    x = np.log(np.asarray(Ms, dtype=float))
    y = np.log(np.asarray(consts))
    slope = float(np.polyfit(x, y, 1)[0])
    return slope, consts


def commutator_lower_diagnostic(b: MeshFunction, atoms: Sequence[Atom], M: int = 16,
                                exps: BMLExponents = DEFAULT_EXPS) -> dict:
    """max over test atoms of |int b (g T*h - h Tg)| / (||g||_H ||h||_M), next to the BMO lower bound."""
    if b.n != 1:
        raise ValueError("n = 1 only")
    best = 0.0
    for a in atoms:
        step = factorization_step(a, M, exps=exps)
        if not b.same_mesh(step.g):
            raise ValueError("b and the atoms must share the mesh")
        val = abs(pairing(b, step.term()))
        if step.product_cost:
            best = max(best, val / step.product_cost)
    lower = bmo_norm(b)[0]
    return {"diagnostic": best, "bmo_lower": lower,
            "ratio": lower / best if best > 0 else math.inf}
