"""Martin and Naïm kernels, their boundary values, the h-transform and exponent fits.

Boundary values are obtained by evaluating the kernel on deepening prefix
vertices of the boundary points until two consecutive depths agree; this is a
surrogate for the exact boundary limit and every sample carries a
``converged`` flag.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .chain import ConductanceTable, TruncatedSolve, path_uniforms
from .metric import (
    BoundaryPoint,
    boundary_point,
    distance_by_levels,
    ray_vertex,
    vertex_boundary_product_twice,
)

DEFAULT_TOL = 1e-3


@dataclass(frozen=True)
class KernelSample:
    pair: tuple
    gromov_product: Fraction | None
    geometric_distance: float
    value: float
    level_used: int
    converged: bool
    trace: tuple = ()


def _rel_close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b))


# -- vertex kernels ------------------------------------------------------------------
def martin_vertex(ts: TruncatedSolve, x: int, y: int) -> float:
    """``K_m(x, y) = F_m(x, y) / F_m(ϑ, y)`` at the truncation of ``ts``."""
    if ts.is_interior(y):
        col = ts.green_column(y)
        return float(col[x] / col[0]) if ts.is_interior(x) else (1.0 / col[0] if x == y else 0.0)
    h = ts.hit_column(y)
    fx = 1.0 if x == y else (float(h[x]) if ts.is_interior(x) else 0.0)
    return fx / float(h[0])


def naim_vertex(ts: TruncatedSolve, x: int, y: int) -> float:
    """``Θ_m(x, y) = F_m(x, y) / (F_m(x, ϑ) G_m(ϑ, ϑ) F_m(ϑ, y))`` for interior ``x, y``.

    With every factor at the same truncation this equals
    ``G_m(x, y) / (G_m(x, ϑ) G_m(ϑ, y))``, which is what is evaluated.
    """
    g_root_col = ts.green_column(0)
    g_root_row = ts.green_row(0)
    return float(ts.green_column(y)[x] / (g_root_col[x] * g_root_row[y]))


def naim_vertex_from_F(ts: TruncatedSolve, x: int, y: int) -> float:
    """The same quantity assembled from hitting probabilities (cross-check)."""
    Fxy = ts.F(x, y)
    Fx0 = float(ts.F_to_root()[x])
    F0y = ts.F(0, y)
    return Fxy / (Fx0 * ts.G_root * F0y)


def _scan_m(table: ConductanceTable, fn, i: int, j: int, tol: float):
    tree = table.tree
    start = int(max(tree.level[i], tree.level[j])) + 1
    trace = []
    for m in range(start, tree.max_level + 1):
        trace.append(fn(table.truncated(m), i, j))
        if len(trace) >= 2 and _rel_close(trace[-1], trace[-2], tol):
            return trace[-1], m, True, tuple(trace)
    if not trace:
        raise ValueError("no truncation level lies beyond both vertices")
    return trace[-1], tree.max_level, False, tuple(trace)


def martin_kernel(table: ConductanceTable, x, target, tol: float = DEFAULT_TOL) -> KernelSample:
    """``K(x, y)`` for a vertex ``y`` or a boundary point ``ξ``.

    Vertex targets are converged over the truncation level; boundary targets
    use the deepest truncation and deepening prefixes ``ξ_k``.
    """
    tree = table.tree
    i = tree.idx(x)
    if isinstance(target, BoundaryPoint):
        ts = table.truncated(tree.max_level)
        trace = []
        for k in range(1, tree.max_level):
            y = ray_vertex(tree, target, k)
            trace.append(martin_vertex(ts, i, y))
            if k > tree.level[i] and len(trace) >= 2 and _rel_close(trace[-1], trace[-2], tol):
                return KernelSample((i, str(target)), None, float("nan"), trace[-1], k, True, tuple(trace))
        return KernelSample((i, str(target)), None, float("nan"), trace[-1], tree.max_level - 1,
                            False, tuple(trace))
    j = tree.idx(target)
    v, m, ok, trace = _scan_m(table, martin_vertex, i, j, tol)
    return KernelSample((i, j), None, float("nan"), v, m, ok, trace)


def naim_kernel(table: ConductanceTable, x, y, tol: float = DEFAULT_TOL) -> KernelSample:
    """``Θ(x, y)`` for non-root vertices, converged over the truncation level."""
    tree = table.tree
    i, j = tree.idx(x), tree.idx(y)
    if i == 0 or j == 0:
        raise ValueError("the Naïm kernel is evaluated away from the root")
    v, m, ok, trace = _scan_m(table, naim_vertex, i, j, tol)
    gp = Fraction(int(tree.level[i] + tree.level[j] - distance_by_levels(tree, i, j)), 2)
    d = float(np.linalg.norm(tree.vertex_projection(i) - tree.vertex_projection(j)))
    return KernelSample((i, j), gp, d, v, m, ok, trace)


def naim_boundary(table: ConductanceTable, xi: BoundaryPoint, eta: BoundaryPoint,
                  tol: float = DEFAULT_TOL, k_min: int = 1, m: int | None = None,
                  with_gromov: bool = True) -> KernelSample:
    """``Θ(ξ, η)`` from ``Θ_m(ξ_k, η_k)`` on deepening prefixes.

    Stops at the first ``k >= k_min`` whose value agrees with depth ``k - 1``
    within ``tol`` (relative).  ``m`` defaults to the deepest level of the tree.
    """
    tree = table.tree
    m = tree.max_level if m is None else m
    ts = table.truncated(m)
    gd = float(np.linalg.norm(xi.geometric_point - eta.geometric_point))
    if gd <= 1e-14:
        raise ValueError("boundary points must have distinct images")
    trace = []
    ok = False
    k = 0
    for k in range(1, m):
        a, b = ray_vertex(tree, xi, k), ray_vertex(tree, eta, k)
        trace.append(naim_vertex(ts, a, b))
        if k >= max(k_min, 2) and _rel_close(trace[-1], trace[-2], tol):
            ok = True
            break
    gp = None
    if with_gromov:
        a, b = ray_vertex(tree, xi, k), ray_vertex(tree, eta, k)
        gp = Fraction(2 * k - distance_by_levels(tree, a, b), 2)
    return KernelSample((str(xi), str(eta)), gp, gd, trace[-1], k, ok, tuple(trace))


# -- sampling designs ----------------------------------------------------------------
def sample_boundary_pairs(ifs, n_pairs: int, seed: int, shared_range: tuple,
                          tail_len: int = 2, max_period: int = 2) -> list:
    """Seeded pairs of distinct boundary points at a spread of scales.

    Each pair shares a random prefix whose length is uniform in
    ``shared_range``, then branches on two different symbols followed by
    independent random tails and periods.  Pairs whose images coincide are
    redrawn.
    """
    rng = np.random.default_rng(seed)
    N = ifs.n_maps
    lo, hi = shared_range
    out = []
    while len(out) < n_pairs:
        g = int(rng.integers(lo, hi + 1))
        pre = rng.integers(1, N + 1, size=g).tolist()
        a, b = rng.choice(np.arange(1, N + 1), 2, replace=False).tolist()
        t1 = rng.integers(1, N + 1, size=tail_len).tolist()
        t2 = rng.integers(1, N + 1, size=tail_len).tolist()
        p1 = rng.integers(1, N + 1, size=int(rng.integers(1, max_period + 1))).tolist()
        p2 = rng.integers(1, N + 1, size=int(rng.integers(1, max_period + 1))).tolist()
        xi = boundary_point(ifs, pre + [a] + t1, p1)
        eta = boundary_point(ifs, pre + [b] + t2, p2)
        if np.linalg.norm(xi.geometric_point - eta.geometric_point) > 1e-12:
            out.append((xi, eta))
    return out


def naim_boundary_samples(table: ConductanceTable, pairs: list, tol: float = DEFAULT_TOL,
                          min_depth_beyond_shared: int = 1, with_gromov: bool = False) -> list:
    """Evaluate :func:`naim_boundary` on ``pairs``; deep Green columns are dropped between pairs."""
    out = []
    ts = table.truncated(table.tree.max_level)
    for xi, eta in pairs:
        shared = _common_prefix_len(xi, eta)
        out.append(naim_boundary(table, xi, eta, tol, k_min=shared + min_depth_beyond_shared,
                                 with_gromov=with_gromov))
        ts._cache_col.clear()
    return out


def _common_prefix_len(xi: BoundaryPoint, eta: BoundaryPoint, cap: int = 64) -> int:
    a, b = xi.symbols(cap), eta.symbols(cap)
    n = 0
    while n < cap and a[n] == b[n]:
        n += 1
    return n


# -- Martin band --------------------------------------------------------------------------
@dataclass(frozen=True)
class MartinBand:
    ratios: np.ndarray
    converged: np.ndarray
    band: float
    low: float
    high: float


def martin_band(table: ConductanceTable, points: list, xs: list, tol: float = DEFAULT_TOL) -> MartinBand:
    """``K(x, ξ) / (λ^{|x| - (x|ξ)} r^{-α (x|ξ)})`` over all ``x`` in ``xs`` and ``ξ`` in ``points``.

    The band is ``max / min`` of the ratios.
    """
    tree = table.tree
    lam, r, a = table.lam, tree.ifs.min_ratio, tree.ifs.hausdorff_dim
    ts = table.truncated(tree.max_level)
    ratios, conv = [], []
    for xi in points:
        ys = [ray_vertex(tree, xi, k) for k in range(1, tree.max_level)]
        cols = ts.green_columns(ys)
        for x in xs:
            i = tree.idx(x)
            lx = int(tree.level[i])
            vals = cols[i] / cols[0]
            # stabilization over k, beyond the level of x
            val, ok = vals[-1], False
            for k in range(max(lx + 1, 2), len(vals) + 1):
                if _rel_close(vals[k - 1], vals[k - 2], tol):
                    val, ok = vals[k - 1], True
                    break
            gp = vertex_boundary_product_twice(tree, i, xi) / 2.0
            ref = lam ** (lx - gp) * r ** (-a * gp)
            ratios.append(val / ref)
            conv.append(ok)
    ratios = np.asarray(ratios)
    return MartinBand(ratios, np.asarray(conv), float(ratios.max() / ratios.min()),
                      float(ratios.min()), float(ratios.max()))


# -- h-transform ------------------------------------------------------------------------
@dataclass
class HTransform:
    P: sp.csr_matrix
    h: np.ndarray
    k: int
    m: int
    row_defect: np.ndarray
    flagged: np.ndarray


def h_transform(table: ConductanceTable, xi: BoundaryPoint, k: int, m: int | None = None,
                threshold: float = 1e-6) -> HTransform:
    """``P^ξ(x, y) = P(x, y) K(y, ξ) / K(x, ξ)`` for rows ``x`` in ``X_k``.

    ``K(·, ξ)`` is approximated by ``F_m(·, ξ_m) / F_m(ϑ, ξ_m)`` with ``ξ_m``
    the level-``m`` prefix vertex, which is harmonic on ``X_{m-1}``.
    """
    tree = table.tree
    m = tree.max_level if m is None else m
    if not k < m:
        raise ValueError("need k < m")
    ts = table.truncated(m)
    y = ray_vertex(tree, xi, m)
    h_int = ts.hit_column(y)
    h = np.zeros(tree.n_upto(m))
    h[: ts.n_int] = h_int
    h[y] = 1.0
    h = h / h_int[0]
    n = tree.n_upto(m)
    P = table.P[:n, :n].tocoo()
    keep = P.row < tree.n_upto(k)
    rows, cols, vals = P.row[keep], P.col[keep], P.data[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = vals * h[cols] / h[rows]
    Ph = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
    defect = np.abs(np.asarray(Ph.sum(axis=1)).ravel()[: tree.n_upto(k)] - 1.0)
    return HTransform(Ph, h, k, m, defect, np.flatnonzero(defect > threshold))


@dataclass(frozen=True)
class XiProcessReport:
    n_paths: int
    k: int
    hit_prefix: float
    hit_neighbourhood: float
    max_end_distance: float


def xi_process_concentration(table: ConductanceTable, xi: BoundaryPoint, k: int, m: int,
                             n_paths: int, seed: int, step_cap: int = 100_000) -> XiProcessReport:
    """Simulate the ξ-process from ``ϑ`` until absorption at level ``m``.

    Reports the fraction of paths whose last visit to level ``k`` was the
    prefix vertex ``ξ_k``, the fraction whose last visit was ``ξ_k`` or one
    of its horizontal neighbours, and the largest distance between the
    representative point of the absorption vertex and ``ξ``.
    """
    tree = table.tree
    ht = h_transform(table, xi, m - 1, m)
    P = ht.P.tocsr()
    P.sort_indices()
    cum = np.cumsum(P.data)
    cum = cum - np.repeat(np.r_[0.0, cum][P.indptr[:-1]], np.diff(P.indptr))
    maxdeg = int(np.diff(P.indptr).max())
    xk = ray_vertex(tree, xi, k)
    nbhd = set(tree.horizontal_neighbors(xk).tolist()) | {xk}
    last = np.full(n_paths, -1, dtype=np.int64)
    ids = np.arange(n_paths, dtype=np.int64)
    v = np.zeros(n_paths, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    for t in range(step_cap):
        idx = np.flatnonzero(alive)
        if not len(idx):
            break
        u = path_uniforms(seed, ids[idx], t)
        cur = v[idx]
        start, stop = P.indptr[cur], P.indptr[cur + 1]
        j = np.zeros(len(idx), dtype=np.int64)
        for s in range(maxdeg):
            pos = start + s
            j += (pos < stop - 1) & (cum[np.minimum(pos, len(cum) - 1)] <= u)
        nv = P.indices[start + j]
        v[idx] = nv
        atk = tree.level[nv] == k
        last[idx[atk]] = nv[atk]
        alive[idx[tree.level[nv] >= m]] = False
    done = ~alive
    frac = float(np.mean(last[done] == xk)) if done.any() else float("nan")
    frac_n = float(np.mean(np.isin(last[done], list(nbhd)))) if done.any() else float("nan")
    ends = np.unique(v[done])
    dist = np.linalg.norm(tree.projections(ends) - xi.geometric_point, axis=1)
    return XiProcessReport(int(done.sum()), k, frac, frac_n, float(dist.max()) if len(dist) else float("nan"))


# -- closed form and fits --------------------------------------------------------------
def tree_closed_form(N: int, lam: float, gp) -> float:
    """Boundary Naïm kernel of the λ-walk on the plain ``N``-ary tree at Gromov product ``gp``."""
    if N < 2 or not 0 < lam < 1 or gp < 0:
        raise ValueError("need N >= 2, 0 < lam < 1, gp >= 0")
    first = (1 - lam) * (N - 1) / (2 * (N - lam))
    second = N * (1 - lam) ** 2 * (N / lam) ** gp / (2 * lam * (N - lam))
    return first + second


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    residual_low: float
    residual_high: float
    n: int
    stderr: float

    @property
    def band(self) -> float:
        return math.exp(self.residual_high - self.residual_low)


class FitError(ValueError):
    pass


def fit_exponents(samples, abscissa: str = "distance", min_samples: int = 30) -> ExponentFit:
    """Least squares of ``log value`` against ``log distance`` (or against the Gromov product).

    ``samples`` is a list of :class:`KernelSample` (only converged ones are
    used) or an ``(n, 2)`` array of ``(x, value)`` pairs already on the
    chosen abscissa scale.
    """
    if isinstance(samples, np.ndarray):
        x, y = samples[:, 0], samples[:, 1]
        x = np.log(x) if abscissa == "distance" else x
    else:
        ok = [s for s in samples if s.converged]
        if abscissa == "distance":
            x = np.log([s.geometric_distance for s in ok])
        elif abscissa == "gromov":
            x = np.array([float(s.gromov_product) for s in ok])
        else:
            raise ValueError(f"unknown abscissa {abscissa!r}")
        y = np.array([s.value for s in ok])
    if len(x) < min_samples or len(np.unique(x)) < 2:
        raise FitError(f"need at least {min_samples} converged samples with distinct abscissae, got {len(x)}")
    ly = np.log(y)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    dof = max(len(x) - 2, 1)
    se = math.sqrt(float(res @ res) / dof / float(((x - x.mean()) ** 2).sum()))
    return ExponentFit(float(coef[0]), float(coef[1]), float(res.min()), float(res.max()), len(x), se)


def expected_slope(ifs, lam: float, abscissa: str = "distance") -> float:
    """``-(α + β)`` with ``β = log λ / log r``; on the Gromov scale ``-log(λ r^α)``."""
    a, r = ifs.hausdorff_dim, ifs.min_ratio
    beta = math.log(lam) / math.log(r)
    if abscissa == "distance":
        return -(a + beta)
    return -math.log(lam * r ** a)


# -- Ancona inequalities ---------------------------------------------------------------
@dataclass(frozen=True)
class AnconaReport:
    level: int
    m: int
    n_triples: int
    lower_violations: int
    worst_lower_slack: float
    C: float


def ancona_check(table: ConductanceTable, level: int = 4, m: int | None = None,
                 slack: float = 1e-12) -> AnconaReport:
    """``F_m(x, u) F_m(u, y) <= F_m(x, y) <= C F_m(x, u) F_m(u, y)`` on geodesic triples.

    Every ordered pair ``x != y`` of ``X_level`` is combined with every ``u``
    that lies on some geodesic between them (``u`` distinct from both ends),
    with distances taken in the graph on ``X_level``.  ``C`` is the smallest
    constant that works for all triples.
    """
    tree = table.tree
    m = tree.max_level if m is None else m
    if not level < m:
        raise ValueError("need level < m")
    n = tree.n_upto(level)
    ts = table.truncated(m)
    G = ts.green_columns(np.arange(n))[:n, :]
    F = G / np.diag(G)[None, :]
    D = shortest_path(tree.adjacency(level), unweighted=True, directed=False)
    n_trip, viol, worst, C = 0, 0, np.inf, 0.0
    for u in range(n):
        on = np.isclose(D[:, u][:, None] + D[u, :][None, :], D)
        on[u, :] = False
        on[:, u] = False
        np.fill_diagonal(on, False)
        if not on.any():
            continue
        prod = np.outer(F[:, u], F[u, :])[on]
        f = F[on]
        n_trip += int(on.sum())
        viol += int(np.sum(f < prod - slack))
        worst = min(worst, float(np.min(f - prod)))
        C = max(C, float(np.max(f / prod)))
    return AnconaReport(level, m, n_trip, viol, worst, C)
