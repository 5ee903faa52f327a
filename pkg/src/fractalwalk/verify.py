"""Identity checks on a configured walk and the fixed acceptance suite.

Each check returns a :class:`CheckResult`; :func:`acceptance` runs the
eleven fixed-configuration criteria and :func:`config_suite` runs the exact
identities on an arbitrary configured table.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .augtree import build, check_parent_law, edge_word_pairs, plain_tree
from .chain import ChainSpec, ConductanceTable, isoperimetric_check, monte_carlo
from .energy import besov_seminorm, boundary_energy, graph_energy, harmonic_extension, sample_function
from .ifs import Weights, builtin
from .kernels import (
    ancona_check,
    expected_slope,
    fit_exponents,
    martin_band,
    naim_boundary,
    naim_boundary_samples,
    sample_boundary_pairs,
    tree_closed_form,
)
from .metric import boundary_point, random_boundary_point

EXACT_TOL = 1e-9
CARPET_WEIGHTS = (0.1, 0.2, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1)


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    detail: str
    required: bool = True
    seconds: float = 0.0

    def line(self, timing: bool = True) -> str:
        flag = "PASS" if self.passed else "FAIL"
        tag = "" if self.required else " (informational)"
        text = f"criterion {self.key}: {flag}{tag} {self.title} | {self.detail}"
        return text + (f" | {self.seconds:.1f}s" if timing else "")


def _table(name: str, lam: float, max_level: int, weights=None) -> ConductanceTable:
    ifs = builtin(name)
    w = Weights(tuple(weights), kind="custom") if weights is not None else None
    return ConductanceTable(build(ifs, w, max_level=max_level), ChainSpec(lam))


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# -- identities on one table ---------------------------------------------------------
def root_hitting_error(table: ConductanceTable, m_max: int) -> float:
    """``max |F_m(x, ϑ) - (λ^|x| - λ^m)/(1 - λ^m)|`` over ``x`` in ``X_m``, ``m <= m_max``."""
    tree, lam = table.tree, table.lam
    err = 0.0
    for m in range(1, m_max + 1):
        ts = table.truncated(m)
        F = np.r_[ts.F_to_root(), np.zeros(tree.n_upto(m) - ts.n_int)]
        lev = tree.level[: tree.n_upto(m)].astype(float)
        exact = (lam ** lev - lam ** m) / (1 - lam ** m)
        err = max(err, float(np.abs(F - exact).max()))
    return err


def green_root_error(table: ConductanceTable, m_max: int) -> float:
    lam = table.lam
    return max(abs(table.truncated(m).G_root - (1 - lam ** m) / (1 - lam)) for m in range(1, m_max + 1))


def absorption_tv(table: ConductanceTable, m_max: int) -> float:
    tree = table.tree
    tv = 0.0
    for m in range(1, m_max + 1):
        row = table.truncated(m).absorption_row(0)
        tv = max(tv, 0.5 * float(np.abs(row - tree.weight[tree.level_slice(m)]).sum()))
    return tv


def structure_defects(table: ConductanceTable, m_max: int | None = None) -> dict:
    """Reversibility, return ratio, absorption row sums and the parent law."""
    tree = table.tree
    m_max = tree.max_level if m_max is None else m_max
    ratios = np.array([table.return_ratio(x) for x in range(1, tree.n_vertices)])
    row_err = 0.0
    for m in range(1, m_max + 1):
        f = table.truncated(m).extend(np.ones(tree.level_slice(m).stop - tree.level_slice(m).start))
        row_err = max(row_err, float(np.abs(f - 1).max()))
    return {
        "reversibility": table.check_reversible(),
        "return_ratio": float(np.abs(ratios - table.lam).max()),
        "row_sum": row_err,
        "parent_law_edges": check_parent_law(tree),
    }


# -- acceptance criteria -------------------------------------------------------------------
_EXACT_CONFIGS = (("gasket2", 1 / 3), ("gasket2", 1 / 2), ("gasket2", 3 / 4), ("interval", 1 / 2))


@_timed
def criterion_1() -> CheckResult:
    errs = {f"{n}@{lam:.3g}": root_hitting_error(_table(n, lam, 6), 6) for n, lam in _EXACT_CONFIGS}
    worst = max(errs.values())
    return CheckResult("1", "F_m(x,root) closed form", worst <= EXACT_TOL, f"max error {worst:.2e}")


@_timed
def criterion_2() -> CheckResult:
    worst = max(green_root_error(_table(n, lam, 6), 6) for n, lam in _EXACT_CONFIGS)
    return CheckResult("2", "G_m(root,root) closed form", worst <= EXACT_TOL, f"max error {worst:.2e}")


@_timed
def criterion_3() -> CheckResult:
    cases = [(n, lam, 6, None) for n, lam in _EXACT_CONFIGS]
    cases += [("nonhom-line", 1 / 2, 6, None), ("carpet", 1 / 2, 6, CARPET_WEIGHTS)]
    tvs = {}
    for n, lam, L, w in cases:
        tvs[f"{n}@{lam:.3g}"] = absorption_tv(_table(n, lam, L, w), L)
    worst = max(tvs.values())
    parts = ", ".join(f"{k} {v:.1e}" for k, v in tvs.items())
    return CheckResult("3", "absorption law equals p_x", worst <= EXACT_TOL, f"max TV {worst:.2e} ({parts})")


@_timed
def criterion_4(n_sets: int = 500) -> CheckResult:
    out, viol = [], 0
    for n, lam in (("gasket2", 1 / 3), ("gasket2", 3 / 4), ("interval", 1 / 2)):
        rep = isoperimetric_check(_table(n, lam, 6), n_sets, seed=4)
        viol += rep.violations
        out.append(f"{n}@{lam:.3g} worst {rep.worst_tree_ratio:.3f}/{rep.bound:.3f}")
    return CheckResult("4", "subtree isoperimetry", viol == 0, f"{viol} violations; " + "; ".join(out))


@_timed
def criterion_5() -> CheckResult:
    reps = [ancona_check(_table("gasket2", 1 / 3, L)) for L in (6, 8)]
    viol = sum(r.lower_violations for r in reps)
    drift = abs(reps[1].C / reps[0].C - 1)
    ok = viol == 0 and drift <= 0.2
    return CheckResult("5", "Ancona lower bound and stable C", ok,
                       f"{reps[0].n_triples} triples, {viol} violations, C {reps[0].C:.3f} -> {reps[1].C:.3f} "
                       f"(drift {100 * drift:.1f}%)")


@_timed
def criterion_6(n_points: int = 50) -> CheckResult:
    ifs = builtin("gasket2")
    rng = np.random.default_rng(6)
    pts = [random_boundary_point(ifs, rng, 6) for _ in range(n_points)]
    xs = list(range(1, 11))
    bands = [martin_band(_table("gasket2", 1 / 3, L), pts, xs) for L in (6, 8)]
    widen = bands[1].band / bands[0].band - 1
    return CheckResult("6", "Martin band stability", widen <= 0.10,
                       f"{len(bands[0].ratios)} samples, band {bands[0].band:.3f} -> {bands[1].band:.3f} "
                       f"(widening {100 * widen:.1f}%, converged {bands[0].converged.mean():.2f} -> "
                       f"{bands[1].converged.mean():.2f})")


def exponent_run(name: str, lam: float, max_level: int, seed: int = 7, min_converged: int = 200,
                 tol: float = 1e-2, batch: int = 100, max_pairs: int = 1200) -> tuple:
    """Sample boundary pairs until ``min_converged`` have converged; fit the slope."""
    table = _table(name, lam, max_level)
    ifs = table.tree.ifs
    samples, drawn = [], 0
    while sum(s.converged for s in samples) < min_converged and drawn < max_pairs:
        pairs = sample_boundary_pairs(ifs, batch, seed + drawn, (1, max_level - 6))
        samples += naim_boundary_samples(table, pairs, tol)
        drawn += batch
    fit = fit_exponents(samples)
    return fit, expected_slope(ifs, lam), samples


@_timed
def criterion_7() -> CheckResult:
    parts, ok = [], True
    for tag, name, lam, L in (("a", "interval", 1 / 2, 16), ("b", "gasket2", 1 / 3, 12),
                              ("c", "gasket2", 1 / 4, 12)):
        t0 = time.perf_counter()
        fit, exp, samples = exponent_run(name, lam, L)
        nconv = sum(s.converged for s in samples)
        rel = fit.slope / exp - 1
        good = abs(rel) <= 0.05 and nconv >= 200
        ok &= good
        parts.append(f"({tag}) {name} lam={lam:.3g}: slope {fit.slope:.3f} vs {exp:.3f} ({100 * rel:+.1f}%), "
                     f"{nconv}/{len(samples)} converged, {time.perf_counter() - t0:.0f}s "
                     f"{'ok' if good else 'FAIL'}")
    return CheckResult("7", "boundary kernel exponent", ok, "; ".join(parts))


def tree_naim_profile(max_level: int = 14, gps=range(7)) -> list:
    """Θ on the plain binary tree (λ = 1/2) for boundary pairs with Gromov product ``g``."""
    tree = plain_tree(builtin("interval"), max_level=max_level)
    table = ConductanceTable(tree, ChainSpec(0.5))
    out = []
    for g in gps:
        xi = boundary_point(tree.ifs, (1,) * (g + 1), (1,))
        eta = boundary_point(tree.ifs, (1,) * g + (2,), (2,))
        out.append(naim_boundary(table, xi, eta, tol=1e-6, with_gromov=False).value)
    return out


@_timed
def criterion_8() -> CheckResult:
    vals = tree_naim_profile()
    growth = [b / a for a, b in zip(vals[1:], vals[2:])]
    closed = [tree_closed_form(2, 0.5, g) for g in range(len(vals))]
    dev = max(abs(v / c - 1) for v, c in zip(vals, closed))
    ok = (all(abs(q / 4 - 1) <= 0.10 for q in growth) and dev <= 0.10
          and tree_closed_form(2, 0.5, 0) == 0.5)
    return CheckResult("8", "tree oracle growth N/lambda", ok,
                       f"growth g>=1 {', '.join(f'{q:.3f}' for q in growth)}; max |Theta/closed-1| {dev:.2e}")


@_timed
def criterion_9(n_paths: int = 100_000, seed: int = 9) -> CheckResult:
    table = _table("gasket2", 1 / 3, 4)
    exact = table.truncated(2).absorption_row(0)
    a = monte_carlo(table, 0, ("level", 2), n_paths, seed)
    b = monte_carlo(table, 0, ("level", 2), n_paths, seed)
    z = np.abs(a.freq - exact) / np.sqrt(exact * (1 - exact) / n_paths)
    same = np.array_equal(a.counts, b.counts)
    ok = bool(z.max() <= 4) and same and a.n_capped == 0
    return CheckResult("9", "Monte Carlo vs exact", ok, f"max z {z.max():.2f}, identical rerun {same}")


def energy_profile(ms=range(5, 9), max_level: int = 12, fn=lambda p: p[0]) -> list:
    table = _table("interval", 1 / 2, max_level)
    beta = math.log(table.lam) / math.log(table.tree.ifs.min_ratio)
    out = []
    for m in ms:
        u = sample_function(table, m, fn)
        ge = graph_energy(table, harmonic_extension(table, u))
        be = boundary_energy(table, u).value
        bs = besov_seminorm(table, u, beta / 2)
        out.append((m, ge, be, bs))
    return out


@_timed
def criterion_10() -> CheckResult:
    prof = energy_profile()
    r = np.array([(ge / be, ge / bs, be / bs) for _, ge, be, bs in prof])
    drift = float(np.abs(r / r[-1] - 1).max())
    const = energy_profile(ms=[6], fn=lambda p: 1.0)[0][1:]
    ok = drift <= 0.25 and max(const) <= 1e-12
    return CheckResult("10", "energy comparison", ok,
                       f"ratio drift m=5..8 {100 * drift:.1f}%, ratios at m=8 "
                       f"{', '.join(f'{v:.3f}' for v in r[-1])}; constant u {max(const):.1e}")


@_timed
def criterion_11() -> CheckResult:
    worst = {"reversibility": 0.0, "return_ratio": 0.0, "row_sum": 0.0}
    edges = 0
    for n, lam, L, w in (("gasket2", 1 / 3, 6, None), ("interval", 1 / 2, 8, None),
                         ("carpet", 1 / 2, 4, CARPET_WEIGHTS), ("gasket2", 3 / 4, 6, None)):
        d = structure_defects(_table(n, lam, L, w))
        edges += d.pop("parent_law_edges")
        for k, v in d.items():
            worst[k] = max(worst[k], v)
    mono = True
    for n in ("gasket2", "carpet"):
        ifs = builtin(n)
        lo, hi = (build(ifs, gamma=g * ifs.attractor_diameter, max_level=3) for g in (0.05, 0.1))
        mono &= all(edge_word_pairs(lo, k) <= edge_word_pairs(hi, k) for k in range(4))
    same = True
    for n in ("interval", "gasket2", "carpet", "nonhom-line"):
        ifs = builtin(n)
        a, b = build(ifs, max_level=3), build(ifs, max_level=3, exhaustive=True)
        same &= all(edge_word_pairs(a, k) == edge_word_pairs(b, k) for k in range(4))
    ok = worst["reversibility"] <= 1e-12 and worst["return_ratio"] <= 1e-12 and worst["row_sum"] <= 1e-10
    ok &= mono and same
    return CheckResult("11", "structural invariants", ok,
                       f"parent law on {edges} edges, reversibility {worst['reversibility']:.1e}, "
                       f"return ratio {worst['return_ratio']:.1e}, row sums {worst['row_sum']:.1e}, "
                       f"gamma-monotone {mono}, pruned==exhaustive {same}")


CRITERIA = {str(i): f for i, f in enumerate(
    (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
     criterion_8, criterion_9, criterion_10, criterion_11), start=1)}


def acceptance(keys=None) -> list:
    return [CRITERIA[k]() for k in (keys or CRITERIA)]


# -- configured suite -------------------------------------------------------------------------
def config_suite(table: ConductanceTable, seed: int = 0, n_sets: int = 500) -> list:
    """Exact identities, isoperimetry and the Ancona lower bound on one configured table."""
    tree = table.tree
    m_max = min(tree.max_level, 6)
    out = []

    def add(key, title, passed, detail, required=True):
        out.append(CheckResult(key, title, bool(passed), detail, required))

    d = structure_defects(table, m_max)
    add("structure", "reversibility", d["reversibility"] <= 1e-12, f"defect {d['reversibility']:.2e}")
    add("structure", "return ratio", d["return_ratio"] <= 1e-12, f"max deviation {d['return_ratio']:.2e}")
    add("structure", "absorption row sums", d["row_sum"] <= 1e-10, f"max deviation {d['row_sum']:.2e}")
    add("structure", "parent law", True, f"{d['parent_law_edges']} horizontal edges")
    e = root_hitting_error(table, m_max)
    add("1", "F_m(x,root) closed form", e <= EXACT_TOL, f"max error {e:.2e}")
    e = green_root_error(table, m_max)
    add("2", "G_m(root,root) closed form", e <= EXACT_TOL, f"max error {e:.2e}")
    e = absorption_tv(table, m_max)
    add("3", "absorption law equals p_x", e <= EXACT_TOL, f"max TV {e:.2e}")
    rep = isoperimetric_check(table, n_sets, seed)
    add("4", "subtree isoperimetry", rep.violations == 0,
        f"{rep.violations}/{rep.n_sets} violations, worst {rep.worst_tree_ratio:.3f} <= {rep.bound:.3f}")
    if tree.max_level >= 5:
        a = ancona_check(table, min(4, tree.max_level - 1))
        add("5", "Ancona lower bound", a.lower_violations == 0,
            f"{a.n_triples} triples, {a.lower_violations} violations, C {a.C:.3f}")
    ratio = table.lam ** tree.max_level
    if ratio > 0.5:
        add("warn", "slow convergence", True,
            f"lambda^max_level = {ratio:.3f}; truncated kernels converge slowly", required=False)
    return out
