import numpy as np
import pytest

from fractalwalk.augtree import build
from fractalwalk.boundary import cell_hitting, hitting_distribution, touching_pair_count, vertex_projection
from fractalwalk.chain import ChainSpec, ConductanceTable
from fractalwalk.ifs import Weights, builtin, cell_point_cloud, level_frontier

T = (np.sqrt(5) - 1) / 2


@pytest.fixture(scope="module")
def nonhom():
    return ConductanceTable(build(builtin("nonhom-line"), max_level=4), ChainSpec(0.5))


def test_vertex_projection_examples():
    iv = builtin("interval")
    assert vertex_projection(iv, "1") == pytest.approx([0.25])
    assert vertex_projection(iv, "") == pytest.approx(iv.representative)


def test_gasket_projection_inside_open_cell():
    g = builtin("gasket2")
    for n in range(1, 4):
        words = level_frontier(g, n)
        clouds = {w: cell_point_cloud(g, w, 3) for w in words}
        for x in words:
            p = vertex_projection(g, x)
            d = min(np.linalg.norm(clouds[y] - p, axis=1).min() for y in words if y != x)
            assert d > 0.1 * 0.5 ** n


def test_hitting_gasket(gasket_tree):
    t = ConductanceTable(gasket_tree, ChainSpec(1 / 3))
    rep = hitting_distribution(t, 2)
    assert np.allclose(rep.exact, 1 / 9, atol=1e-12)
    assert rep.tv_distance <= 1e-12
    assert rep.exact.sum() == pytest.approx(1, abs=1e-10)
    assert rep.target.sum() == pytest.approx(1, abs=1e-10)


def test_hitting_nonhom(nonhom):
    rep = hitting_distribution(nonhom, 1)
    assert [str(w) for w in rep.words] == [str(bytes([1, 1])), str(bytes([1, 2])), str(bytes([2]))]
    assert rep.exact == pytest.approx([T ** 2, T * (1 - T), 1 - T], abs=1e-12)
    assert rep.exact == pytest.approx([0.382, 0.236, 0.382], abs=1e-3)


def test_hitting_carpet_custom_weights():
    w = Weights((0.1, 0.2, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1), "custom")
    t = ConductanceTable(build(builtin("carpet"), w, max_level=3), ChainSpec(0.5))
    rep = hitting_distribution(t, 2)
    assert rep.tv_distance <= 1e-12
    assert len(set(np.round(rep.exact, 12))) > 1


def test_hitting_level_range(gasket_tree):
    t = ConductanceTable(gasket_tree, ChainSpec(1 / 3))
    with pytest.raises(ValueError):
        hitting_distribution(t, gasket_tree.max_level)


def test_hitting_with_monte_carlo(gasket_tree):
    t = ConductanceTable(gasket_tree, ChainSpec(1 / 3))
    rep = hitting_distribution(t, 2, with_mc=True, n_paths=20_000, seed=2)
    assert rep.mc.n_paths == 20_000
    assert rep.max_mc_zscore < 4.5


def test_cell_hitting(gasket_tree, nonhom):
    t = ConductanceTable(gasket_tree, ChainSpec(1 / 3))
    assert cell_hitting(t, "", 3) == 1.0
    for x in ("1", "2", "3"):
        assert cell_hitting(t, x, 3) == pytest.approx(1 / 3, abs=1e-12)
    assert cell_hitting(nonhom, "2", 2) == pytest.approx(1 - T, abs=1e-12)
    with pytest.raises(ValueError):
        cell_hitting(t, "123", 2)


def test_touching_pairs(gasket_tree):
    assert touching_pair_count(gasket_tree, 2) == 12
    assert touching_pair_count(build(builtin("nonhom-line"), max_level=3), 2) == 0
