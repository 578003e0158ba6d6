import math
from fractions import Fraction as Fr

import numpy as np
import pytest

from bmllab import lorentz, mesh
from bmllab.lorentz import StepProfile
from bmllab.mesh import Region

INF = math.inf


@pytest.fixture
def two_level():
    # 3 on [0,1), 1 on [1,3)
    f = mesh.indicator(Region((0,), (1,)), 1, 2, 0, 3.0)
    return f + mesh.indicator(Region((1,), (3,)), 1, 2, 0, 1.0)


def test_distribution_examples(two_level):
    assert lorentz.distribution(two_level, 2) == 1
    assert lorentz.distribution(two_level, 0.5) == 3
    assert lorentz.distribution(two_level, 3) == 0
    with pytest.raises(ValueError):
        lorentz.distribution(two_level, -1)


def test_distribution_monotone():
    f = mesh.random_step(2, 1, 2, 2)
    levels = np.linspace(0, 1.1, 40)
    d = [lorentz.distribution(f, a) for a in levels]
    assert all(x >= y for x, y in zip(d, d[1:]))


def test_rearrangement_examples(two_level):
    assert lorentz.rearrangement(two_level).breakpoints == ((3.0, Fr(1)), (1.0, Fr(3)))
    ind = mesh.indicator(Region((0,), (Fr(3, 4),)), 1, 1, 2)
    assert lorentz.rearrangement(ind).breakpoints == ((1.0, Fr(3, 4)),)
    assert len(lorentz.rearrangement(ind.zeros_like())) == 0


def test_rearrangement_on_region():
    f = mesh.indicator(Region((0,), (1,)), 1, 1, 2)
    prof = lorentz.rearrangement(f, Region((Fr(1, 3),), (2,)))
    assert prof.breakpoints == ((1.0, Fr(2, 3)),)


def test_profile_invariants_and_json():
    with pytest.raises(ValueError):
        StepProfile(((1.0, Fr(1)), (2.0, Fr(2))))
    p = StepProfile(((2.0, Fr(1, 3)), (0.5, Fr(7, 3))))
    assert StepProfile.from_json(p.to_json()) == p


@pytest.mark.parametrize("j,n,p,q", [(0, 1, 2, 2), (1, 1, 3, 1.5), (-1, 2, 1.5, 4), (2, 2, 2, INF)])
def test_indicator_norm(j, n, p, q):
    f = mesh.dyadic_indicator(j, (0,) * n, n, max(1, -j), max(j, 0))
    want = 2.0 ** (-j * n / p) * (1.0 if q == INF else (p / q) ** (1 / q))
    assert math.isclose(lorentz.lorentz_norm_of(f, p, q), want, rel_tol=1e-13)


def test_two_level_l1(two_level):
    assert math.isclose(lorentz.lorentz_norm_of(two_level, 1, 1), 5.0, rel_tol=1e-14)


def test_distribution_formula_spot():
    f = mesh.dyadic_indicator(0, (0,), 1, 1, 0)
    assert math.isclose(lorentz.lorentz_norm_via_distribution(f, 2, 1), 2.0, rel_tol=1e-14)
    assert math.isclose(lorentz.lorentz_norm_of(f, 2, 1), 2.0, rel_tol=1e-14)
    assert lorentz.lorentz_norm_via_distribution(f.zeros_like(), 2, 1) == 0.0


def test_formulas_agree_on_regions():
    rng = np.random.default_rng(0)
    for i in range(30):
        f = mesh.random_step(50 + i, 1, 2, 2, levels=3)
        R = Region((Fr(int(rng.integers(-12, 0)), 3),), (Fr(int(rng.integers(1, 12)), 3),))
        p, q = rng.uniform(0.5, 4), rng.uniform(0.5, 4)
        a = lorentz.lorentz_norm_of(f, p, q, R)
        b = lorentz.lorentz_norm_via_distribution(f, p, q, R)
        assert math.isclose(a, b, rel_tol=1e-12)


def test_power_identity_spot():
    f = mesh.indicator(Region((0,), (2,)), 1, 1, 0)
    lhs, rhs = lorentz.power_identity_check(f, 2, 1, 1)
    assert math.isclose(lhs, 2) and math.isclose(rhs, 2)
    g = mesh.random_step(9, 1, 1, 2)
    lhs, rhs = lorentz.power_identity_check(g, 1, 1.7, 0.8)
    assert math.isclose(lhs, rhs, rel_tol=1e-14)
    with pytest.raises(ValueError):
        lorentz.power_identity_check(g, 0, 1, 1)


def test_holder_examples():
    a = mesh.dyadic_indicator(0, (0,), 1, 2, 0)
    b = mesh.dyadic_indicator(0, (2,), 1, 2, 0)
    lhs, rhs = lorentz.holder_pair(a, a, 2, 2)
    assert math.isclose(lhs, 1) and math.isclose(rhs, 1)
    lhs, rhs = lorentz.holder_pair(a, b, 2, 2)
    assert lhs == 0 and rhs > 0
    with pytest.raises(ValueError):
        lorentz.holder_pair(a, b, 0.5, 2)


def test_holder_endpoint_exponents():
    f = mesh.random_step(11, 1, 2, 2)
    g = mesh.random_step(12, 1, 2, 2)
    for p, q in [(1, 1), (INF, INF), (1, INF), (2, 1)]:
        lhs, rhs = lorentz.holder_pair(f, g, p, q)
        assert lhs <= rhs * (1 + 1e-12)


def test_large_exponent_is_finite():
    f = mesh.random_step(13, 1, 2, 2)
    val = lorentz.lorentz_norm_of(f, 2.1, 1.5e5)
    assert math.isfinite(val) and val > 0


def test_rejects_bad_exponents():
    f = mesh.random_step(1, 1, 1, 1)
    with pytest.raises(ValueError):
        lorentz.lorentz_norm_of(f, INF, 2)
    with pytest.raises(ValueError):
        lorentz.lorentz_norm_of(f, -1, 2)


def test_rearrangement_invariance():
    f = mesh.random_step(21, 1, 2, 2)
    perm = np.random.default_rng(1).permutation(f.values)
    g = f.with_values(perm)
    for p, q in [(1, 1), (2, 3), (3, INF)]:
        assert math.isclose(lorentz.lorentz_norm_of(f, p, q), lorentz.lorentz_norm_of(g, p, q), rel_tol=1e-14)


def test_monotonicity_and_finite_measure_embedding():
    rng = np.random.default_rng(2)
    for i in range(50):
        f = mesh.random_step(100 + i, 1, 1, 2)
        g = f.with_values(np.abs(f.values) + rng.uniform(0, 0.5, f.values.shape))
        p, q = rng.uniform(0.5, 4), rng.uniform(0.5, 4)
        assert lorentz.lorentz_norm_of(f, p, q) <= lorentz.lorentz_norm_of(g, p, q) * (1 + 1e-14)
        # support in [-2, 2): |X| = 4
        p1, p2 = sorted(rng.uniform(0.5, 4, 2))
        lhs = lorentz.lorentz_norm_of(f, p1, q)
        rhs = 4 ** (1 / p1 - 1 / p2) * lorentz.lorentz_norm_of(f, p2, q)
        assert lhs <= rhs * (1 + 1e-12)


def test_lorentz_rows_matches_profile():
    rng = np.random.default_rng(3)
    vals = np.abs(rng.normal(size=(5, 6)))
    vals[0, :3] = vals[0, 3]          # ties
    vals[1, 2] = 0.0
    w = rng.integers(1, 4, size=6)
    for p, q in [(2, 2), (1.5, 0.7), (3, INF)]:
        got = lorentz.lorentz_rows(vals, w, 0.25, p, q)
        for row, val in zip(vals, got):
            acc = {}
            for v, k in zip(row, w):
                if v > 0:
                    acc[v] = acc.get(v, Fr(0)) + Fr(int(k), 4)
            pts, t = [], Fr(0)
            for v in sorted(acc, reverse=True):
                t += acc[v]
                pts.append((float(v), t))
            assert math.isclose(val, lorentz.lorentz_norm(StepProfile(tuple(pts)), p, q), rel_tol=1e-12)
