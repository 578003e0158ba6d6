import json
import math
from fractions import Fraction as Fr

import numpy as np
import pytest

from bmllab import mesh
from bmllab.mesh import DyadicCube, MeshFunction, Region


@pytest.mark.parametrize("j,m,corner,side,vol", [
    (0, (0,), (0,), 1, 1),
    (1, (3,), (Fr(3, 2),), Fr(1, 2), Fr(1, 2)),
    (-2, (-1, 0), (-4, 0), 4, 16),
])
def test_cube_geometry(j, m, corner, side, vol):
    c, s, v = mesh.cube_geometry(DyadicCube(j, m))
    assert c == corner and s == side and v == vol


def test_nesting_trichotomy():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a = DyadicCube(int(rng.integers(-2, 4)), (int(rng.integers(-4, 4)),))
        b = DyadicCube(int(rng.integers(-2, 4)), (int(rng.integers(-4, 4)),))
        ra, rb = a.region(), b.region()
        disjoint = mesh.overlap_measure(ra, rb) == 0
        states = [disjoint, a.contains(b), b.contains(a)]
        if a == b:
            assert states == [False, True, True]
        else:
            assert sum(states) == 1


def test_parent_contains_child():
    c = DyadicCube(3, (5, -2))
    assert c.parent().contains(c) and c.parent() == DyadicCube(2, (2, -1))


def test_cover_cube_spot():
    a, R = mesh.cover_cube(Region((Fr(3, 10),), (Fr(4, 5),)))
    assert a == (0,) and R.k == -1 and R.region() == Region((0,), (2,))


def test_cover_cube_unit():
    a, R = mesh.cover_cube(Region((0,), (1,)))
    reg = R.region()
    assert reg.contains(Region((0,), (1,))) and reg.measure <= 6
    assert 2 < R.side <= 4


def test_cover_cube_property():
    rng = np.random.default_rng(1)
    for i in range(1000):
        n = 1 + i % 2
        side = Fr(int(rng.integers(1, 50)), int(rng.integers(1, 30)))
        lo = tuple(Fr(int(rng.integers(-100, 100)), int(rng.integers(1, 40))) for _ in range(n))
        Q = Region(lo, tuple(x + side for x in lo))
        _, R = mesh.cover_cube(Q)
        assert R.region().contains(Q)
        assert R.volume <= 6 ** n * Q.measure


def test_shifted_cube_denominators():
    R = mesh.ShiftedCube(2, (1, -3), (1, 2)).region()
    assert all((3 * 4) % Fr(v).denominator == 0 for v in R.lo + R.hi)
    with pytest.raises(ValueError):
        mesh.ShiftedCube(0, (0,), (3,))


def test_overlap_measure():
    cell = Region((0,), (1,))
    assert mesh.overlap_measure(Region((Fr(1, 3),), (Fr(4, 3),)), cell) == Fr(2, 3)
    assert mesh.overlap_measure(Region((2,), (3,)), cell) == 0
    assert mesh.overlap_measure(Region((-1,), (5,)), cell) == 1


def test_overlap_additive_over_cells():
    f = mesh.MeshFunction(2, 1, 1, np.zeros(64))
    R = Region((Fr(-5, 3), Fr(1, 7)), (Fr(2, 3), Fr(9, 5)))
    total = sum(mesh.overlap_measure(R, f.cell_region((i, j))) for i in range(8) for j in range(8))
    assert total == R.measure
    w = mesh.region_weights(f, R)
    assert sum(w[0]) * sum(w[1]) == R.measure


def test_region_weights_match_overlap():
    f = mesh.MeshFunction(1, 2, 2, np.zeros(32))
    R = Region((Fr(-1, 3),), (Fr(5, 7),))
    w = mesh.region_weights(f, R)[0]
    assert w == [mesh.overlap_measure(R, f.cell_region((i,))) for i in range(32)]


def test_inside_mask():
    f = mesh.MeshFunction(1, 1, 1, np.zeros(8))
    m = mesh.inside_mask(f, Region((Fr(-1, 4),), (1,)))
    assert m.tolist() == [False, False, False, False, True, True, False, False]


def test_axis_cover_weights_are_full_cells():
    N, L, J = 32, 2, 2
    for k in range(-L - 2, J + 1):
        for a in (0, 1, 2):
            _, idx, wt = mesh.axis_cover(N, L, J, k, a)
            per_cell = np.zeros(N, dtype=np.int64)
            np.add.at(per_cell, idx.ravel(), wt.ravel())
            assert np.all(per_cell == 3)


def test_indicator_generator():
    f = mesh.synthesize({"kind": "indicator", "lo": [0], "hi": [1]}, 1, 2, 4)
    assert np.count_nonzero(f.values) == 16 and f.values.max() == 1.0
    with pytest.raises(ValueError):
        mesh.indicator(Region((0,), (8,)), 1, 2, 0)


def test_random_step_deterministic():
    a = mesh.synthesize({"kind": "random", "seed": 7}, 1, 2, 2)
    b = mesh.synthesize({"kind": "random", "seed": 7}, 1, 2, 2)
    assert a == b
    assert a != mesh.synthesize({"kind": "random", "seed": 8}, 1, 2, 2)


def test_shifted_indicators_two_far_cubes():
    f = mesh.synthesize({"kind": "shifted", "offsets": [[1], [4]], "coefficients": [1, 1]}, 1, 3, 0)
    cells = np.flatnonzero(f.values)
    centres = f.cell_centers()[cells]
    assert centres.tolist() == [1.5, 4.5]


def test_unknown_generator():
    with pytest.raises(ValueError):
        mesh.synthesize({"kind": "nope"}, 1, 1, 1)


def test_mesh_validation_and_immutability():
    with pytest.raises(ValueError):
        MeshFunction(1, 1, 1, np.zeros(5))
    with pytest.raises(ValueError):
        MeshFunction(1, 1, 1, [np.nan] * 8)
    with pytest.raises(ValueError):
        MeshFunction(3, 1, 1, np.zeros(512))
    f = MeshFunction(1, 1, 1, np.zeros(8))
    with pytest.raises(AttributeError):
        f.L = 3
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_json_roundtrip(tmp_path):
    f = mesh.random_step(3, 2, 1, 1)
    path = tmp_path / "f.json"
    mesh.dump_mesh(f, path)
    assert mesh.load_mesh(path) == f
    path.write_text(json.dumps({"n": 1, "L": 1, "J": 1, "values": [0.0] * 7}))
    with pytest.raises(ValueError):
        mesh.load_mesh(path)


def test_refine_enlarge_preserve_integral():
    f = mesh.random_step(4, 1, 2, 1)
    assert math.isclose(f.refine(2).integral(), f.integral(), rel_tol=1e-14, abs_tol=1e-14)
    g = f.enlarge(1)
    assert g.L == 3 and math.isclose(g.integral(), f.integral(), rel_tol=1e-14, abs_tol=1e-14)


def test_restrict_requires_alignment():
    f = mesh.random_step(5, 1, 1, 1)
    with pytest.raises(ValueError):
        f.restrict(Region((Fr(1, 3),), (1,)))
    g = f.restrict(Region((0,), (1,)))
    assert np.all(g.values[:4] == 0)
