import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalwalk.ifs import (
    IfsError,
    Similitude,
    as_word,
    builtin,
    cell_point_cloud,
    frontier_count_bounds,
    hausdorff_dim,
    level_frontier,
    parse_weights,
    word_str,
)


@pytest.mark.parametrize("ratios, expected", [
    ([0.5, 0.5], 1.0),
    ([0.5, 0.5, 0.5], math.log(3) / math.log(2)),
    ([0.5, 0.25], math.log(2 / (math.sqrt(5) - 1)) / math.log(2)),
])
def test_hausdorff_dim_examples(ratios, expected):
    assert hausdorff_dim(ratios) == pytest.approx(expected, abs=1e-10)


def test_nonhom_dimension_golden_ratio():
    a = hausdorff_dim([0.5, 0.25])
    t = 0.5 ** a
    assert t + t * t == pytest.approx(1.0, abs=1e-12)
    assert a == pytest.approx(0.6942, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 0.6), min_size=2, max_size=6))
def test_moran_equation(ratios):
    a = hausdorff_dim(ratios)
    assert sum(r ** a for r in ratios) == pytest.approx(1.0, abs=1e-10)


def test_similitude_validation():
    with pytest.raises(IfsError):
        Similitude(1.0, np.eye(2), np.zeros(2))
    with pytest.raises(IfsError):
        Similitude(0.5, np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))


def test_similitude_compose_and_fixed_point():
    s = Similitude.homothety(0.5, [1.0, 0.0])
    assert np.allclose(s.fixed_point(), [1.0, 0.0])
    ss = s.compose(s)
    assert ss.ratio == pytest.approx(0.25)
    z = np.array([0.3, 0.7])
    assert np.allclose(ss(z), s(s(z)))


def test_frontier_examples():
    g = builtin("gasket2")
    assert len(level_frontier(g, 2)) == 9
    assert all(len(w) == 2 for w in level_frontier(g, 2))
    nh = builtin("nonhom-line")
    assert sorted(word_str(w) for w in level_frontier(nh, 1)) == ["11", "12", "2"]
    for name in ("interval", "gasket2", "carpet", "nonhom-line"):
        assert level_frontier(builtin(name), 0) == [b""]


def test_frontier_partitions_mass():
    nh = builtin("nonhom-line")
    w = nh.natural_weights()
    for n in range(5):
        assert sum(w.of(x) for x in level_frontier(nh, n)) == pytest.approx(1.0, abs=1e-12)


def test_frontier_level_rule():
    nh = builtin("nonhom-line")
    r = nh.min_ratio
    for n in range(1, 6):
        for x in level_frontier(nh, n):
            assert nh.ratio_of(x) <= r ** n + 1e-15 < nh.ratio_of(x[:-1])


@pytest.mark.parametrize("name, n, lo, hi, count", [
    ("gasket2", 3, 27, 81, 27),
    ("interval", 5, 32, 64, 32),
])
def test_frontier_count_bounds(name, n, lo, hi, count):
    ifs = builtin(name)
    b = frontier_count_bounds(ifs, n)
    assert b == pytest.approx((lo, hi))
    assert b[0] <= len(level_frontier(ifs, n)) == count < b[1]


def test_frontier_count_bounds_nonhom():
    lo, hi = frontier_count_bounds(builtin("nonhom-line"), 1)
    assert lo == pytest.approx(2.62, abs=0.01)
    assert hi == pytest.approx(6.85, abs=0.01)
    assert lo <= 3 < hi


def test_point_clouds():
    iv = builtin("interval")
    c = cell_point_cloud(iv, "", 1)
    assert len(c) == 2
    assert sorted(np.ravel(c) < 0.5) == [False, True]
    g = builtin("gasket2")
    one = cell_point_cloud(g, "1", 0)
    assert len(one) == 1
    p = one[0]
    assert p.min() >= 0 and p.sum() <= 0.5 + 1e-12
    c3 = cell_point_cloud(g, "", 3)
    assert len(c3) == 27
    assert len(np.unique(np.round(c3, 12), axis=0)) == 27


def test_attractor_diameter_dominates_clouds():
    for name in ("gasket2", "carpet", "nonhom-line"):
        ifs = builtin(name)
        c = ifs.root_cloud(4)
        d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1)).max()
        assert ifs.attractor_diameter >= d


def test_weights():
    g = builtin("gasket2")
    w = g.natural_weights()
    assert sum(w.p) == pytest.approx(1.0, abs=1e-12)
    assert w.kind == "natural"
    assert parse_weights(g, "0.2,0.3,0.5").kind == "custom"
    with pytest.raises(IfsError):
        parse_weights(g, "0.5,0.5")
    with pytest.raises(IfsError):
        parse_weights(g, [0.5, 0.6, -0.1])


def test_word_round_trip():
    assert as_word("123") == bytes([1, 2, 3])
    assert word_str(as_word("123")) == "123"
    assert word_str(b"") == "ϑ"
    assert as_word("10.2") == bytes([10, 2])


def test_unknown_builtin():
    with pytest.raises(IfsError):
        builtin("koch")
