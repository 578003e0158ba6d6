import math
from fractions import Fraction as Fr

import numpy as np
import pytest

from bmllab import bml, mesh
from bmllab.bml import BMLExponents, DivergenceError
from bmllab.mesh import Region

INF = math.inf
E = BMLExponents(2, 2, 3, 4)


def chi(j=0, m=0, L=1, J=None):
    return mesh.dyadic_indicator(j, (m,), 1, L, max(j, 0) if J is None else J)


def test_indicator_spot_value():
    # frozen from the two geometric series summed by hand (see the acceptance oracle)
    fine = 1 / (1 - 2 ** (1 - 4 / 3))
    coarse = 2 ** (-2 / 3) / (1 - 2 ** (-2 / 3))
    assert math.isclose((fine + coarse) ** 0.25, 1.5997641376570748, rel_tol=1e-15)
    b = bml.bml_norm(chi(), E)
    assert math.isclose(b.total, 1.5997641376570748, rel_tol=1e-13)
    assert math.isclose(b.coarse_tail + b.middle + b.fine_tail, b.total ** 4, rel_tol=1e-13)


def test_mesh_independence():
    vals = [bml.bml_norm(chi(L=L, J=J), E).total for L, J in [(1, 0), (2, 1), (3, 3)]]
    assert max(vals) - min(vals) <= 1e-13 * vals[0]


def test_exponent_parsing():
    e = BMLExponents.parse("2, 2, 3, inf")
    assert e.r == INF and e.as_tuple() == (2.0, 2.0, 3.0, INF)
    with pytest.raises(ValueError):
        BMLExponents.parse("2,2,3")
    with pytest.raises(ValueError):
        BMLExponents(-1, 2, 3, 4)
    assert E.dual() == (2.0, 2.0, 1.5, 4 / 3)


@pytest.mark.parametrize("e,ok", [((2, 2, 3, 4), True), ((2, 2, 3, 3), False), ((2, 2, 2, INF), True),
                                  ((3, 2, 2, INF), False), ((2, 2, 3, 2), False), ((3, 2, 2, 4), False)])
def test_nontrivial(e, ok):
    ex = BMLExponents(*e)
    assert ex.nontrivial is ok
    assert (bml.divergence_reason(ex) is None) is ok


def test_divergence_marker():
    with pytest.raises(DivergenceError, match="divergent by nontriviality theorem"):
        bml.bml_norm(chi(), BMLExponents(2, 2, 3, 3))


def test_zero_function():
    z = chi().zeros_like()
    assert bml.bml_norm(z, E).total == 0.0
    assert bml.bml_norm(z, BMLExponents(2, 2, 3, 3)).total == 0.0


def test_r_infinity_is_max_term():
    # Morrey-Lorentz: the sup is attained by the support cube itself for p <= t
    e = BMLExponents(2, 2, 3, INF)
    assert math.isclose(bml.bml_norm(chi(), e).total, 1.0, rel_tol=1e-14)


def test_truncation_single_scale():
    e = E
    val, tail = bml.bml_norm_truncated(chi(), e, 0, 0)
    assert math.isclose(val ** e.r, 1.0, rel_tol=1e-14)   # C_{2,2}^r with one cube
    exact = bml.bml_norm(chi(), e).total
    assert 0 <= exact ** 4 - val ** 4 <= tail


def test_truncation_wide_window_and_monotone():
    f = mesh.random_step(3, 1, 2, 2)
    exact = bml.bml_norm(f, E).total
    prev = 0.0
    for w in range(0, 22, 3):
        val, tail = bml.bml_norm_truncated(f, E, -w, f.J + w)
        assert val >= prev - 1e-15
        assert exact ** 4 - val ** 4 <= tail
        prev = val
    # the fine tail only decays like 2^{-k(r/t - 1)}, so wide windows converge slowly
    val, tail = bml.bml_norm_truncated(f, E, -60, f.J + 60)
    assert exact ** 4 - val ** 4 <= tail <= 1e-6 * exact ** 4


def test_shifted_grid_zero_offset():
    f = mesh.random_step(4, 2, 1, 1)
    assert bml.bml_norm_on_grid(f, E, (0, 0)) == bml.bml_norm(f, E).total


def shifted_unit_brute(a: int, p, t, r, kmin=-300, kmax=300) -> float:
    """Norm of chi_[0,1) over the grid 2^-k [m + a/3, m + a/3 + 1), scale by scale.

    At each scale the intervals meeting [0,1) are: some fully inside (counted)
    and at most two partial ones (exact overlaps).  C_{p,q} = 1 for q = p.
    """
    total = []
    for k in range(kmin, kmax + 1):
        side = Fr(2) ** -k
        shift = side * Fr(a, 3)
        m0 = math.floor((0 - shift) / side)
        m1 = math.floor((1 - shift) / side)
        if (1 - shift) / side == m1:
            m1 -= 1
        inside = 0
        for m in {m0, m1}:
            lo, hi = side * m + shift, side * (m + 1) + shift
            w = min(hi, Fr(1)) - max(lo, Fr(0))
            if w <= 0:
                continue
            if w == side:
                continue
            total.append((float(side) ** (1 / t - 1 / p) * float(w) ** (1 / p)) ** r)
        full = max(0, m1 - m0 + 1 - len({m0, m1}))
        # intervals strictly between the two ends, plus ends that are full
        for m in {m0, m1}:
            lo, hi = side * m + shift, side * (m + 1) + shift
            if min(hi, Fr(1)) - max(lo, Fr(0)) == side:
                full += 1
        if full:
            total.append(full * float(side) ** (r / t))
    return math.fsum(total) ** (1 / r)


@pytest.mark.parametrize("a", [0, 1, 2])
def test_shifted_grid_against_brute_sum(a):
    want = shifted_unit_brute(a, 2, 3, 4)
    assert math.isclose(bml.bml_norm_on_grid(chi(), E, (a,)), want, rel_tol=1e-12)


def test_lattice_property():
    rng = np.random.default_rng(0)
    for i in range(30):
        f = mesh.random_step(20 + i, 1, 2, 2)
        g = f.with_values(np.abs(f.values) + rng.uniform(0, 1, f.values.shape))
        assert bml.bml_norm(f, E).total <= bml.bml_norm(g, E).total * (1 + 1e-13)


def test_monotone_family():
    f = mesh.random_step(5, 1, 2, 2, low=0.0)
    vals = [bml.bml_norm(f * s, E).total for s in np.linspace(0.1, 1, 10)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_r_embedding():
    for i in range(20):
        f = mesh.random_step(40 + i, 1, 2, 2)
        small = bml.bml_norm(f, BMLExponents(2, 2, 3, 4)).total
        large = bml.bml_norm(f, BMLExponents(2, 2, 3, 8)).total
        assert large <= small * (1 + 1e-13)


def test_translate():
    f = chi(L=2)
    g = bml.translate(f, (1,))
    assert g == chi(0, 1, L=2)
    assert bml.translate(f, (0,)) == f
    with pytest.raises(ValueError):
        bml.translate(f, (Fr(1, 3),))
    with pytest.raises(ValueError):
        bml.translate(f, (4,))


def test_dilation_scaling():
    for i in range(10):
        f = mesh.random_step(60 + i, 1 + i % 2, 1, 1)
        for m in (-1, 1, 2):
            g = bml.dilate_dyadic(f, m)
            ratio = bml.bml_norm(g, E).total / bml.bml_norm(f, E).total
            assert math.isclose(ratio, 2.0 ** (-m * f.n / E.t), rel_tol=1e-12)
    assert bml.dilate_dyadic(chi(L=2), 1) == mesh.dyadic_indicator(1, (0,), 1, 1, 1)


def test_convolution_tent():
    f = mesh.dyadic_indicator(0, (0,), 1, 2, 2)
    c = bml.convolve(f, f)
    assert math.isclose(c.integral(), 1.0, rel_tol=1e-14)
    # tent on [0,2) peaking at 1: averages over cells of side 1/4
    x = c.cell_centers()
    tent = np.clip(1 - np.abs(x - 1), 0, None)
    assert np.allclose(c.values, tent, atol=1e-14)
    assert not np.any(bml.convolve(f.zeros_like(), f).values)


def test_convolution_with_narrow_bump():
    f = mesh.random_step(7, 1, 2, 2, support=Region((-1,), (1,)))
    cell = mesh.dyadic_indicator(2, (0,), 1, 2, 2) * 4.0
    c = bml.convolve(f, cell)
    # averaging over one cell: mean of neighbouring values
    v = f.values
    expect = 0.5 * (v + np.concatenate([[0.0], v[:-1]]))
    assert np.allclose(c.values, expect, atol=1e-14)


def test_tail_and_modulus():
    f = chi(L=2, J=1)
    assert bml.tail_norm(f, E, 2) == 0.0
    half = bml.tail_norm(f, E, Fr(1, 2))
    assert math.isclose(half, bml.bml_norm(mesh.indicator(Region((Fr(1, 2),), (1,)), 1, 2, 1), E).total)
    assert bml.translation_modulus(f, E, 0) == 0.0
    assert bml.translation_modulus(f, E, Fr(1, 2)) > 0


def test_separation_offset():
    f = chi(L=4)
    y, lhs, rhs = bml.separation_offset(f, f, E, 0.1)
    assert lhs <= rhs and y[0] >= 1
    y0, lhs0, rhs0 = bml.separation_offset(f, f.zeros_like(), E, 0.1)
    assert y0 == (0,) and lhs0 <= rhs0
    with pytest.raises(ValueError, match="need L"):
        bml.separation_offset(chi(L=1), chi(L=1), E, 1e-9)


def test_embed_sequence_layout():
    f = bml.embed_sequence([1.0, -2.0, 0.5], 1, 5, 0)
    idx = np.flatnonzero(f.values)
    assert (f.cell_centers()[idx] - 0.5).tolist() == [1.0, 4.0, 16.0]
    assert f.values[idx].tolist() == [1.0, -2.0, 0.5]
