from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalwalk.augtree import build, plain_tree
from fractalwalk.ifs import builtin
from fractalwalk.metric import (
    NoStabilizationError,
    boundary_gromov_product,
    boundary_point,
    canonical_geodesic,
    delta_estimate,
    delta_exhaustive,
    distance_by_levels,
    distance_rows,
    graph_distance,
    gromov_product,
    horizontal_geodesic_bound,
    ray_vertex,
)


def test_distance_basics(gasket_tree):
    t = gasket_tree
    assert graph_distance(t, "12", "12") == 0
    for w in ("1", "23", "312", "1213"):
        assert graph_distance(t, "", w) == len(w)
    assert graph_distance(t, "12", "21") == 1


def test_gromov_product_examples(gasket_tree):
    t = gasket_tree
    assert gromov_product(t, "12", "21") == Fraction(3, 2)
    assert gromov_product(t, "123", "123") == 3
    assert gromov_product(t, "", "123") == 0


def _check_path(tree, g):
    adj = tree.adjacency()
    assert g.path[0] == tree.idx(g.x) and g.path[-1] == tree.idx(g.y)
    assert len(g.path) - 1 == g.length
    for a, b in zip(g.path, g.path[1:]):
        assert adj[a, b]


def test_canonical_geodesic_examples(gasket_tree):
    t = gasket_tree
    g = canonical_geodesic(t, "12", "21")
    assert (g.u, g.v, g.ell, g.h) == (t.idx("12"), t.idx("21"), 2, 1)
    assert g.gromov_product == Fraction(3, 2)
    _check_path(t, g)
    same = canonical_geodesic(t, "12", "12")
    assert same.h == 0 and same.ell == 2 and same.length == 0


def test_canonical_geodesic_interval(interval_tree):
    g = canonical_geodesic(interval_tree, "111", "222")
    assert (g.ell, g.h) == (1, 1)
    assert g.gromov_product == Fraction(1, 2)
    _check_path(interval_tree, g)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_geodesic_and_level_distance_match_bfs(gasket_tree, a, b):
    t = gasket_tree
    x, y = a % t.n_vertices, b % t.n_vertices
    d = graph_distance(t, x, y)
    assert distance_by_levels(t, x, y) == d
    g = canonical_geodesic(t, x, y)
    assert g.length == d
    assert g.gromov_product == Fraction(int(t.level[x] + t.level[y]) - d, 2)
    _check_path(t, g)


def test_level_distance_matches_bfs_on_carpet():
    t = build(builtin("carpet"), max_level=3)
    rng = np.random.default_rng(0)
    src = rng.choice(t.n_vertices, 20, replace=False)
    D = distance_rows(t, src)
    for i, s in enumerate(src):
        for y in rng.choice(t.n_vertices, 20, replace=False):
            assert distance_by_levels(t, int(s), int(y)) == D[i, y]


def test_horizontal_geodesic_bound():
    M, per = horizontal_geodesic_bound(build(builtin("interval"), max_level=8))
    assert M == 5 and per[-3:] == [5, 5, 5]
    M, per = horizontal_geodesic_bound(build(builtin("gasket2"), max_level=8))
    assert M == per[-1] == per[-2]
    assert horizontal_geodesic_bound(plain_tree(builtin("gasket2"), max_level=4))[0] == 0


def test_delta():
    assert delta_estimate(plain_tree(builtin("gasket2"), max_level=5), 2000, seed=1) == 0
    one = build(builtin("gasket2"), max_level=1)
    assert delta_exhaustive(one) <= Fraction(1, 2)
    g = build(builtin("gasket2"), max_level=6)
    M, _ = horizontal_geodesic_bound(g)
    d = delta_estimate(g, 10_000, seed=3)
    assert 0 <= d <= M


def test_boundary_points():
    g = builtin("gasket2")
    xi = boundary_point(g, "", "2")
    assert np.allclose(xi.geometric_point, [1.0, 0.0])
    eta = boundary_point(g, "12", "3")
    assert eta.symbols(5) == bytes([1, 2, 3, 3, 3])
    t = build(g, max_level=4)
    assert t.words[ray_vertex(t, eta, 3)] == bytes([1, 2, 3])


def test_boundary_gromov_product():
    iv = build(builtin("interval"), max_level=8)
    bp = boundary_gromov_product(iv, boundary_point(iv.ifs, "", "1"), boundary_point(iv.ifs, "", "2"))
    assert bp.value == Fraction(1, 2)
    g = build(builtin("gasket2"), max_level=8)
    bp = boundary_gromov_product(g, boundary_point(g.ifs, "", "2"), boundary_point(g.ifs, "", "3"))
    assert bp.value == Fraction(1, 2)


def test_boundary_product_rejects_equal_points():
    iv = build(builtin("interval"), max_level=6)
    xi = boundary_point(iv.ifs, "1", "2")
    eta = boundary_point(iv.ifs, "2", "1")
    with pytest.raises(ValueError):
        boundary_gromov_product(iv, xi, eta)
    with pytest.raises(ValueError):
        boundary_gromov_product(iv, xi, xi)


def test_no_stabilization_on_shallow_tree():
    t = build(builtin("gasket2"), max_level=2)
    xi = boundary_point(t.ifs, "1111", "2")
    eta = boundary_point(t.ifs, "1112", "3")
    with pytest.raises(NoStabilizationError):
        boundary_gromov_product(t, xi, eta)
