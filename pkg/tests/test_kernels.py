import math

import numpy as np
import pytest

from fractalwalk.augtree import build, plain_tree
from fractalwalk.chain import ChainSpec, ConductanceTable
from fractalwalk.ifs import builtin
from fractalwalk.kernels import (
    FitError,
    ancona_check,
    expected_slope,
    fit_exponents,
    h_transform,
    martin_band,
    martin_kernel,
    martin_vertex,
    naim_boundary,
    naim_kernel,
    naim_vertex,
    naim_vertex_from_F,
    tree_closed_form,
    xi_process_concentration,
)
from fractalwalk.metric import boundary_point, random_boundary_point


@pytest.fixture(scope="module")
def g8():
    return ConductanceTable(build(builtin("gasket2"), max_level=8), ChainSpec(1 / 3))


def test_martin_kernel_at_root_and_diagonal(g8):
    ts = g8.truncated(6)
    for y in (1, 7, 30, 100):
        assert martin_vertex(ts, 0, y) == pytest.approx(1.0)
        assert martin_vertex(ts, y, y) >= 1.0
    s = martin_kernel(g8, "12", "12")
    assert s.value >= 1
    assert s.trace[-1] < s.trace[0]


def test_martin_kernel_boundary_target(g8):
    xi = boundary_point(g8.tree.ifs, "12", "3")
    s = martin_kernel(g8, "", xi)
    assert s.value == pytest.approx(1.0)
    s = martin_kernel(g8, "1", xi)
    assert s.value > 1


def test_naim_symmetry(g8):
    ts = g8.truncated(8)
    rng = np.random.default_rng(0)
    n = g8.tree.n_upto(5)
    for _ in range(100):
        x, y = (int(v) for v in rng.integers(1, n, 2))
        a, b = naim_vertex(ts, x, y), naim_vertex(ts, y, x)
        assert a == pytest.approx(b, rel=1e-8)
        assert a > 0


def test_naim_from_hitting_probabilities(g8):
    ts = g8.truncated(7)
    for x, y in ((1, 5), (7, 30), (40, 12), (3, 3)):
        assert naim_vertex_from_F(ts, x, y) == pytest.approx(naim_vertex(ts, x, y), rel=1e-9)


def test_naim_bounded_for_far_pairs(g8):
    vals = []
    for n in (2, 3, 4):
        s = naim_kernel(g8, "1" * n, "2" * n)
        assert s.gromov_product <= 0.5
        vals.append(s.value)
    assert max(vals) / min(vals) < 2


def test_naim_boundary_symmetric(g8):
    xi = boundary_point(g8.tree.ifs, "12", "1")
    eta = boundary_point(g8.tree.ifs, "13", "1")
    a = naim_boundary(g8, xi, eta, tol=1e-3)
    b = naim_boundary(g8, eta, xi, tol=1e-3)
    assert a.value == pytest.approx(b.value, rel=1e-3)
    with pytest.raises(ValueError):
        naim_boundary(g8, xi, xi)


def test_interval_growth_per_gromov_unit():
    t = ConductanceTable(build(builtin("interval"), max_level=14), ChainSpec(0.5))
    vals = []
    for g in range(1, 5):
        xi = boundary_point(t.tree.ifs, "1" * g + "1", "12")
        eta = boundary_point(t.tree.ifs, "1" * g + "2", "21")
        vals.append(naim_boundary(t, xi, eta, tol=1e-3).value)
    growth = [b / a for a, b in zip(vals, vals[1:])]
    assert all(3.0 < q < 5.0 for q in growth)


def test_tree_closed_form():
    assert tree_closed_form(2, 0.5, 0) == 0.5
    first = tree_closed_form(3, 0.4, 0) - (tree_closed_form(3, 0.4, 1) - tree_closed_form(3, 0.4, 0)) / (3 / 0.4 - 1)
    for g in range(5):
        sec = tree_closed_form(3, 0.4, g) - first
        sec1 = tree_closed_form(3, 0.4, g + 1) - first
        assert sec1 / sec == pytest.approx(3 / 0.4, rel=1e-12)
    with pytest.raises(ValueError):
        tree_closed_form(1, 0.5, 0)


def test_plain_tree_matches_closed_form():
    tree = plain_tree(builtin("interval"), max_level=14)
    t = ConductanceTable(tree, ChainSpec(0.5))
    for g in range(5):
        xi = boundary_point(tree.ifs, "1" * (g + 1), "1")
        eta = boundary_point(tree.ifs, "1" * g + "2", "2")
        v = naim_boundary(t, xi, eta, tol=1e-6).value
        assert v / tree_closed_form(2, 0.5, g) == pytest.approx(1.0, abs=0.02)


def test_h_transform_plain_tree_drift():
    tree = plain_tree(builtin("gasket2"), max_level=8)
    t = ConductanceTable(tree, ChainSpec(1 / 3))
    xi = boundary_point(tree.ifs, "", "1")
    ht = h_transform(t, xi, 5)
    assert ht.row_defect.max() < 1e-10
    for n in range(5):
        x = tree.idx("1" * n)
        y = tree.idx("1" * (n + 1))
        assert ht.P[x, y] > t.P[x, y]


def test_h_transform_rows(g8):
    xi = boundary_point(g8.tree.ifs, "1", "123")
    for m in (6, 8):
        ht = h_transform(g8, xi, 4, m)
        assert ht.row_defect.max() < 1e-10
        assert len(ht.flagged) == 0


def test_xi_process_concentrates(g8):
    xi = boundary_point(g8.tree.ifs, "1", "123")
    rep = xi_process_concentration(g8, xi, 2, 8, 10_000, seed=1)
    assert rep.n_paths == 10_000
    assert rep.hit_neighbourhood > 0.95
    assert rep.max_end_distance < 4 * 0.5 ** 8 * math.sqrt(2)


def test_fit_exponents_synthetic():
    x = np.geomspace(1e-3, 1, 50)
    exact = fit_exponents(np.c_[x, 7 * x ** -2.5])
    assert exact.slope == pytest.approx(-2.5, abs=1e-12)
    assert exact.band == pytest.approx(1.0)
    flat = fit_exponents(np.c_[x, np.full_like(x, 3.0)])
    assert flat.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(FitError):
        fit_exponents(np.c_[x[:5], x[:5]])


def test_expected_slopes():
    g = builtin("gasket2")
    assert expected_slope(g, 0.25) == pytest.approx(-(math.log(3) / math.log(2) + 2))
    assert expected_slope(g, 1 / 3) == pytest.approx(-2 * math.log(3) / math.log(2))
    assert expected_slope(builtin("interval"), 0.5) == pytest.approx(-2.0)
    assert expected_slope(builtin("interval"), 0.5, "gromov") == pytest.approx(math.log(4))


def test_martin_band_bounded(g8):
    rng = np.random.default_rng(1)
    pts = [random_boundary_point(g8.tree.ifs, rng, 5) for _ in range(10)]
    band = martin_band(g8, pts, list(range(1, 11)))
    assert len(band.ratios) == 100
    assert 1 <= band.band < 20


def test_ancona_lower_bound(g8):
    rep = ancona_check(g8, level=3)
    assert rep.lower_violations == 0
    assert rep.n_triples > 0 and rep.C >= 1
