import math

import numpy as np
import pytest

from fractalwalk.augtree import build
from fractalwalk.chain import ChainSpec, ConductanceTable
from fractalwalk.energy import (
    BoundaryFunction,
    besov_seminorm,
    boundary_energy,
    coarsen,
    douglas_check,
    graph_energy,
    harmonic_extension,
    is_divergent,
    is_log_divergent,
    refine,
    sample_function,
)
from fractalwalk.ifs import builtin


@pytest.fixture(scope="module")
def iv():
    return ConductanceTable(build(builtin("interval"), max_level=12), ChainSpec(0.5))


@pytest.fixture(scope="module")
def gs():
    return ConductanceTable(build(builtin("gasket2"), max_level=7), ChainSpec(1 / 3))


def linear(p):
    return float(p[0])


def test_graph_energy_basics(gs):
    n = gs.tree.n_upto(2)
    assert graph_energy(gs, np.full(n, 2.5)) == 0
    f = np.zeros(n)
    f[gs.tree.idx("1")] = 1.0
    # parent, three children and two horizontal neighbours, all of conductance 1
    assert graph_energy(gs, f) == pytest.approx(6.0)
    g = np.random.default_rng(0).normal(size=n)
    assert graph_energy(gs, 3 * g) == pytest.approx(9 * graph_energy(gs, g))
    with pytest.raises(ValueError):
        graph_energy(gs, np.zeros(n - 1))


def test_harmonic_extension(gs):
    tree = gs.tree
    u = BoundaryFunction(3, np.full(27, 4.0))
    assert np.allclose(harmonic_extension(gs, u), 4.0)
    x = tree.idx("213")
    ind = np.zeros(27)
    ind[x - tree.level_start[3]] = 1
    f = harmonic_extension(gs, BoundaryFunction(3, ind))
    assert f[0] == pytest.approx(tree.weight[x], abs=1e-12)
    v = np.random.default_rng(1).normal(size=27)
    f = harmonic_extension(gs, BoundaryFunction(3, v))
    assert v.min() - 1e-12 <= f.min() and f.max() <= v.max() + 1e-12


def test_harmonic_extension_minimizes_energy(gs):
    u = sample_function(gs, 3, lambda p: math.sin(3 * p[0]) + p[1])
    f = harmonic_extension(gs, u)
    e0 = graph_energy(gs, f)
    rng = np.random.default_rng(2)
    n_int = gs.tree.n_upto(2)
    for _ in range(20):
        g = f.copy()
        g[:n_int] += 1e-3 * rng.normal(size=n_int)
        assert graph_energy(gs, g) > e0


def test_graph_energy_monotone_under_refinement(iv):
    u3 = sample_function(iv, 3, lambda p: math.sin(5 * p[0]))
    e = [graph_energy(iv, harmonic_extension(iv, refine(iv, u3, m))) for m in range(3, 10)]
    assert all(b >= a - 1e-12 for a, b in zip(e, e[1:]))


def test_constant_functions_have_zero_energy(iv):
    u = BoundaryFunction(5, np.full(32, 1.7))
    assert boundary_energy(iv, u).value <= 1e-12
    assert besov_seminorm(iv, u, 0.5) <= 1e-12
    rep = douglas_check(iv, u)
    assert max(rep.graph_energy, rep.boundary_energy, rep.besov) <= 1e-12


def test_linear_boundary_energy_stabilizes(iv):
    vals = [boundary_energy(iv, sample_function(iv, k, linear)).value for k in range(3, 7)]
    inc = np.diff(vals)
    assert np.all(inc > 0) and np.all(inc[1:] < 0.7 * inc[:-1])
    assert not is_divergent(vals) and not is_log_divergent(vals)


def test_jump_function_diverges(iv):
    vals = [boundary_energy(iv, sample_function(iv, k, lambda p: float(p[0] < 0.5))).value
            for k in range(3, 10)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert is_log_divergent(vals)
    # the growth is additive in k, so the factor rule does not fire
    assert not is_divergent(vals)


def test_divergence_detector():
    assert is_divergent([1, 2, 4, 8])
    assert not is_divergent([1, 2, 2.5, 8, 20])
    assert not is_divergent([1, 1.4, 1.9, 2.5])


def test_besov_scaling_and_band(iv):
    u = sample_function(iv, 5, linear)
    assert besov_seminorm(iv, u.scaled(3), 0.5) == pytest.approx(9 * besov_seminorm(iv, u, 0.5))
    r = [besov_seminorm(iv, sample_function(iv, k, linear), 0.5)
         / boundary_energy(iv, sample_function(iv, k, linear)).value for k in range(3, 7)]
    assert max(r) / min(r) < 1.5
    with pytest.raises(ValueError):
        besov_seminorm(iv, u, 0.0)


def test_polarization(iv):
    rng = np.random.default_rng(3)
    u = BoundaryFunction(5, rng.normal(size=32))
    v = BoundaryFunction(5, rng.normal(size=32))
    for energy in (lambda w: graph_energy(iv, harmonic_extension(iv, w)),
                   lambda w: boundary_energy(iv, w).value,
                   lambda w: besov_seminorm(iv, w, 0.5)):
        lhs = energy(u + v) + energy(u - v)
        rhs = 2 * energy(u) + 2 * energy(v)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_coarsen_preserves_mass(gs):
    u = sample_function(gs, 4, linear)
    c = coarsen(gs, u, 2)
    p4 = gs.tree.weight[gs.tree.level_slice(4)]
    p2 = gs.tree.weight[gs.tree.level_slice(2)]
    assert np.dot(c.values, p2) == pytest.approx(np.dot(u.values, p4))
    with pytest.raises(ValueError):
        coarsen(gs, c, 3)


def test_douglas_check_gasket(gs):
    rep = douglas_check(gs, sample_function(gs, 4, linear))
    assert rep.beta == pytest.approx(math.log(3) / math.log(2))
    for v in (rep.graph_energy, rep.boundary_energy, rep.besov):
        assert 0 < v < np.inf
    assert set(rep.ratios) == {"graph/boundary", "graph/besov", "boundary/besov"}


def test_boundary_function_validation():
    with pytest.raises(ValueError):
        BoundaryFunction(2, [1.0, np.nan])
