"""Graph energy, harmonic extension, Θ-quadrature and a dyadic Besov seminorm."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import ConductanceTable

# growth factor and run length of the divergence detector
DIVERGENCE_FACTOR = 1.5
DIVERGENCE_RUN = 3


@dataclass
class BoundaryFunction:
    """Values of a function on the cells of level ``k`` (one value per vertex of ``J_k``)."""

    level: int
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("boundary function has non-finite values")

    def __add__(self, other):
        return BoundaryFunction(self.level, self.values + other.values, f"{self.tag}+{other.tag}")

    def __sub__(self, other):
        return BoundaryFunction(self.level, self.values - other.values, f"{self.tag}-{other.tag}")

    def scaled(self, t: float):
        return BoundaryFunction(self.level, t * self.values, f"{t}*{self.tag}")


def sample_function(table: ConductanceTable, level: int, fn: Callable, tag: str = "") -> BoundaryFunction:
    """Evaluate ``fn`` at the representative point of every level-``k`` cell."""
    tree = table.tree
    sl = tree.level_slice(level)
    pts = tree.projections(np.arange(sl.start, sl.stop))
    return BoundaryFunction(level, np.array([fn(p) for p in pts]), tag)


def coarsen(table: ConductanceTable, u: BoundaryFunction, level: int) -> BoundaryFunction:
    """Mass-weighted cell averages ``Σ p_y u_y / p_x`` over descendants ``y`` of each ``x``."""
    tree = table.tree
    if level > u.level:
        raise ValueError("can only coarsen to a shallower level")
    if level == u.level:
        return u
    fine = tree.level_slice(u.level)
    w = tree.weight[fine]
    anc = np.arange(fine.start, fine.stop)
    for _ in range(u.level - level):
        anc = tree.parent[anc]
    anc = anc - tree.level_start[level]
    n = tree.level_start[level + 1] - tree.level_start[level]
    num = np.bincount(anc, weights=w * u.values, minlength=n)
    den = np.bincount(anc, weights=w, minlength=n)
    return BoundaryFunction(level, num / den, u.tag)


def refine(table: ConductanceTable, u: BoundaryFunction, level: int) -> BoundaryFunction:
    """Copy each value onto the descendants at a deeper ``level``."""
    tree = table.tree
    sl = tree.level_slice(level)
    anc = np.arange(sl.start, sl.stop)
    for _ in range(level - u.level):
        anc = tree.parent[anc]
    return BoundaryFunction(level, u.values[anc - tree.level_start[u.level]], u.tag)


def graph_energy(table: ConductanceTable, f: np.ndarray) -> float:
    """``½ Σ c(x, y) (f(x) - f(y))²`` over the edges of ``X_m``, each edge once.

    ``f`` holds one value per vertex of ``X_m``; ``m`` is inferred from its length.
    """
    f = np.asarray(f, dtype=float)
    n = len(f)
    C = table.C[:n, :n].tocoo()
    if np.any(~np.isfinite(f)):
        raise ValueError("missing values in f")
    if n not in set(table.tree.level_start[1:].tolist()):
        raise ValueError("f must cover a full set X_m")
    return 0.5 * float(np.sum(C.data * (f[C.row] - f[C.col]) ** 2))


def harmonic_extension(table: ConductanceTable, u: BoundaryFunction) -> np.ndarray:
    """The absorption-weighted average of ``u`` on ``X_m``, ``m = u.level``."""
    return table.truncated(u.level).extend(u.values)


def naim_matrix(table: ConductanceTable, level: int, m: int | None = None) -> np.ndarray:
    """``Θ_m(x, y)`` for all pairs of level-``k`` vertices (diagonal included)."""
    tree = table.tree
    m = tree.max_level if m is None else m
    if not level < m:
        raise ValueError("quadrature level must lie above the truncation level")
    ts = table.truncated(m)
    sl = tree.level_slice(level)
    ys = np.arange(sl.start, sl.stop)
    G = ts.green_columns(ys)[sl, :]
    g_col = ts.green_column(0)[sl]
    g_row = ts.green_row(0)[sl]
    return G / np.outer(g_col, g_row)


@dataclass(frozen=True)
class QuadratureValue:
    value: float
    converged: bool
    rel_change: float


def boundary_energy(table: ConductanceTable, u: BoundaryFunction, tol: float = 1e-3) -> QuadratureValue:
    """``½ m(ϑ) Σ_{x≠y} (u_x - u_y)² Θ(x, y) p_x p_y`` over level-``k`` cells.

    Θ is evaluated at the deepest truncation; the result is flagged
    unconverged when one truncation level less changes the energy by more
    than ``tol`` (relative).
    """
    tree = table.tree
    k = u.level
    if k > tree.max_level - 2:
        raise ValueError("quadrature level must be at most max_level - 2")
    p = tree.weight[tree.level_slice(k)]
    w = (u.values[:, None] - u.values[None, :]) ** 2 * np.outer(p, p)
    val, prev = (0.5 * table.m[0] * float(np.sum(w * naim_matrix(table, k, m)))
                 for m in (tree.max_level, tree.max_level - 1))
    change = abs(val - prev) / val if val > 0 else 0.0
    return QuadratureValue(val, bool(change <= tol), float(change))


def besov_seminorm(table: ConductanceTable, u: BoundaryFunction, sigma: float) -> float:
    """Dyadic discretization of the Besov seminorm with exponent ``α + 2σ``.

    The radial integral becomes a sum over ``ρ_j = diam · r^j`` (``j = 0..k``)
    with the pair mass inside each radius held at its value at the outer
    radius, plus the exact tail beyond ``diam``.  Pairs are cells of level
    ``k`` with masses ``p_x p_y`` and representative distances.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    tree = table.tree
    ifs = tree.ifs
    k = u.level
    s = ifs.hausdorff_dim + 2 * sigma
    sl = tree.level_slice(k)
    pts = tree.projections(np.arange(sl.start, sl.stop))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    p = tree.weight[sl]
    w = (u.values[:, None] - u.values[None, :]) ** 2 * np.outer(p, p)
    diam = ifs.attractor_diameter
    total = float(w.sum())
    out = total * diam ** (-s) / s
    r = ifs.min_ratio
    for j in range(k):
        rho_j, rho_next = diam * r ** j, diam * r ** (j + 1)
        inside = float(w[d < rho_j].sum())
        out += inside * (rho_next ** (-s) - rho_j ** (-s)) / s
    return out


def beta_exponent(table: ConductanceTable) -> float:
    return math.log(table.lam) / math.log(table.tree.ifs.min_ratio)


@dataclass
class EnergyReport:
    m: int
    k: int
    graph_energy: float
    boundary_energy: float
    besov: float
    beta: float
    converged: bool
    ratios: dict = field(default_factory=dict)


def douglas_check(table: ConductanceTable, u: BoundaryFunction, k: int | None = None,
                  tol: float = 1e-3) -> EnergyReport:
    """The three energies of ``u`` (level ``m``) with the quadratures at level ``k <= m``.

    ``k`` defaults to ``m``; coarser quadrature levels use mass-weighted cell averages.
    """
    k = u.level if k is None else k
    if not k <= u.level:
        raise ValueError("need k <= m")
    ge = graph_energy(table, harmonic_extension(table, u))
    uc = coarsen(table, u, k)
    be = boundary_energy(table, uc, tol)
    beta = beta_exponent(table)
    bs = besov_seminorm(table, uc, beta / 2)
    ratios = {}
    if be.value > 0 and bs > 0:
        ratios = {"graph/boundary": ge / be.value, "graph/besov": ge / bs, "boundary/besov": be.value / bs}
    return EnergyReport(u.level, k, ge, be.value, bs, beta, be.converged, ratios)


def is_divergent(values) -> bool:
    """True when some run of refinements grows by more than the factor each step."""
    v = np.asarray(values, dtype=float)
    run = 0
    for a, b in zip(v[:-1], v[1:]):
        run = run + 1 if b > DIVERGENCE_FACTOR * a else 0
        if run >= DIVERGENCE_RUN:
            return True
    return False


def is_log_divergent(values, shrink: float = 0.8, run: int = DIVERGENCE_RUN) -> bool:
    """True when the last ``run`` increments are positive and do not shrink geometrically.

    Catches the additive (logarithmic) growth of jump functions, which the
    factor rule of :func:`is_divergent` misses.
    """
    inc = np.diff(np.asarray(values, dtype=float))
    if len(inc) < run:
        return False
    tail = inc[-run:]
    return bool(np.all(tail > 0) and np.all(tail[1:] > shrink * tail[:-1]))
