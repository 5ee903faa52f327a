"""Reversible λ-walks on the augmented tree and their truncated absorbing chains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .augtree import AugmentedTree
from .ifs import Weights

DEFAULT_BAND = (1.0 / 16.0, 16.0)
_DIRECT_LIMIT = 400_000
_JACOBI_TOL = 1e-13


class AdmissibilityError(ValueError):
    """Custom weights give horizontally adjacent cells incomparable masses."""


@dataclass(frozen=True)
class ChainSpec:
    lam: float
    weights: Weights | None = None
    horizontal_rule: str = "geometric-mean"

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.horizontal_rule != "geometric-mean":
            raise ValueError(f"unknown horizontal rule {self.horizontal_rule!r}")


@dataclass(frozen=True)
class AdmissibilityReport:
    min_ratio: float
    max_ratio: float
    per_level_max: tuple
    band: tuple
    admissible: bool


def admissibility(tree: AugmentedTree, weights: Weights | None = None,
                  band: tuple = DEFAULT_BAND) -> AdmissibilityReport:
    """Scan ``p_x / p_y`` over all horizontal edges ``(x, y)`` of the tree."""
    if weights is None:
        w = tree.weight
    else:
        pw = np.asarray(weights.p)
        w = np.array([np.prod(pw[np.frombuffer(x, dtype=np.uint8) - 1]) for x in tree.words])
    per_level = []
    lo, hi = 1.0, 1.0
    for n in range(tree.max_level + 1):
        e = tree.h_edges[n]
        if len(e) == 0:
            per_level.append(1.0)
            continue
        q = w[e[:, 0]] / w[e[:, 1]]
        q = np.maximum(q, 1.0 / q)
        per_level.append(float(q.max()))
        lo, hi = min(lo, float((1.0 / q).min())), max(hi, float(q.max()))
    ok = band[0] <= lo and hi <= band[1]
    return AdmissibilityReport(lo, hi, tuple(per_level), tuple(band), ok)


class ConductanceTable:
    """Edge conductances, vertex totals and the transition matrix of a λ-walk.

    Vertical conductance ``c(x, x⁻) = p_x λ^{-|x|}``; horizontal conductance is
    the geometric mean of the two vertical ones.  Vertices on the last built
    level are given the conductance of their (unbuilt) children,
    ``c(x, x⁻) / λ``, so every total ``m(x)`` is that of the infinite graph.

    Parameters
    ----------
    tree : AugmentedTree
    spec : ChainSpec
        ``spec.weights`` defaults to the weights the tree was built with.
    band : tuple
        Admissibility band for custom weights.
    """

    def __init__(self, tree: AugmentedTree, spec: ChainSpec, band: tuple = DEFAULT_BAND):
        self.tree = tree
        self.spec = spec
        self.lam = spec.lam
        weights = spec.weights or tree.weights
        if tuple(weights.p) != tuple(tree.weights.p):
            raise ValueError("chain weights differ from the weights the tree was built with")
        self.weights = weights
        if weights.kind != "natural":
            rep = admissibility(tree, None, band)
            if not rep.admissible:
                raise AdmissibilityError(
                    f"weights are not admissible: neighbouring cell masses differ by a factor "
                    f"{rep.max_ratio:.3g}, outside the band {band}; mass must be doubling"
                )
        n = tree.n_vertices
        lev = tree.level
        self.c_up = np.zeros(n)
        self.c_up[1:] = tree.weight[1:] * self.lam ** (-lev[1:].astype(float))
        e = tree.horizontal_edges()
        self.h_pairs = e
        self.c_h = np.sqrt(self.c_up[e[:, 0]] * self.c_up[e[:, 1]]) if len(e) else np.zeros(0)
        kid = np.arange(1, n)
        par = tree.parent[1:]
        rows = np.r_[kid, par, e[:, 0], e[:, 1]]
        cols = np.r_[par, kid, e[:, 1], e[:, 0]]
        vals = np.r_[self.c_up[1:], self.c_up[1:], self.c_h, self.c_h]
        self.C = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.C.sort_indices()
        self.c_down_virtual = np.zeros(n)
        last = tree.level_slice(tree.max_level)
        self.c_down_virtual[last] = (self.c_up[last] / self.lam) if tree.max_level > 0 else 1.0 / self.lam
        self._refresh()
        self._truncated: dict[int, TruncatedSolve] = {}

    def _refresh(self):
        self.m = np.asarray(self.C.sum(axis=1)).ravel() + self.c_down_virtual
        self.P = sp.diags(1.0 / self.m) @ self.C
        self.P = self.P.tocsr()
        self.P.sort_indices()
        self._truncated = {}

    # -- structure checks ----------------------------------------------------
    def conductance(self, x: int, y: int) -> float:
        return float(self.C[x, y])

    def return_ratio(self, x: int) -> float:
        """``c(x, x⁻) / Σ_children c(x, child)``; uses virtual children on the last level."""
        x = self.tree.idx(x)
        if x == 0:
            raise ValueError("the return ratio is undefined at the root")
        up = self.C[x, int(self.tree.parent[x])]
        kids = self.tree.children_of(x)
        down = float(self.C[x, kids].sum()) if len(kids) else self.c_down_virtual[x]
        return float(up / down)

    def check_reversible(self) -> float:
        """``max |m(x) P(x, y) - m(y) P(y, x)|`` over all edges."""
        flux = sp.diags(self.m) @ self.P
        diff = (flux - flux.T).tocoo()
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def corrupt(self, x: int, y: int, factor: float) -> "ConductanceTable":
        """Copy with the directed conductance ``c(x, y)`` scaled (negative controls only)."""
        other = object.__new__(ConductanceTable)
        other.__dict__.update(self.__dict__)
        C = self.C.tolil(copy=True)
        C[x, y] = C[x, y] * factor
        other.C = C.tocsr()
        other._refresh()
        return other

    def truncated(self, m: int) -> "TruncatedSolve":
        if m not in self._truncated:
            self._truncated[m] = TruncatedSolve(self, m)
        return self._truncated[m]

    def manifest(self) -> dict:
        d = self.tree.manifest()
        d.update({"lambda": self.lam, "horizontal_rule": self.spec.horizontal_rule})
        return d


def conductances(tree: AugmentedTree, spec: ChainSpec, band: tuple = DEFAULT_BAND) -> ConductanceTable:
    return ConductanceTable(tree, spec, band)


def return_ratio(table: ConductanceTable, x) -> float:
    return table.return_ratio(x)


def check_reversible(table: ConductanceTable) -> float:
    return table.check_reversible()


# -- truncated chain ---------------------------------------------------------------
class _Jacobi:
    """Fixed-point sweeps ``z <- b + Q z`` for a substochastic ``Q``."""

    def __init__(self, Q):
        self.Q = Q.tocsr()
        self.QT = Q.T.tocsr()

    def solve(self, b, trans="N"):
        Q = self.QT if trans == "T" else self.Q
        z = np.array(b, dtype=float)
        for _ in range(200_000):
            nz = b + Q @ z
            if np.max(np.abs(nz - z)) <= _JACOBI_TOL * max(1.0, np.max(np.abs(nz))):
                return nz
            z = nz
        raise RuntimeError("iterative absorption solve did not converge")


class TruncatedSolve:
    """Exact quantities of the walk on ``X_m`` with level ``m`` absorbing.

    One factorization of ``I - Q`` (``Q`` = transitions among ``X_{m-1}``)
    serves every Green, hitting and absorption quantity.
    """

    def __init__(self, table: ConductanceTable, m: int, method: str = "auto"):
        tree = table.tree
        if not 1 <= m <= tree.max_level:
            raise ValueError(f"truncation level must lie in [1, {tree.max_level}], got {m}")
        self.table = table
        self.m = m
        self.n_int = tree.n_upto(m - 1)
        self.bslice = tree.level_slice(m)
        P = table.P[: tree.n_upto(m), : tree.n_upto(m)]
        self.Q = P[: self.n_int, : self.n_int].tocsc()
        self.R = P[: self.n_int, self.bslice].tocsr()
        A = (sp.identity(self.n_int, format="csc") - self.Q).tocsc()
        if method == "auto":
            method = "direct" if self.n_int <= _DIRECT_LIMIT else "jacobi"
        self.method = method
        self._lu = splu(A) if method == "direct" else _Jacobi(self.Q)
        self._root_lu = None
        self._cache_col: dict[int, np.ndarray] = {}
        self._cache_row: dict[int, np.ndarray] = {}

    # raw solves
    def _solve(self, b, trans="N"):
        return self._lu.solve(np.asarray(b, dtype=float), trans=trans)

    def is_interior(self, x: int) -> bool:
        return x < self.n_int

    def green_column(self, y: int) -> np.ndarray:
        """``G_m(·, y)`` over ``X_{m-1}`` for interior ``y``."""
        if y not in self._cache_col:
            e = np.zeros(self.n_int)
            e[y] = 1.0
            self._cache_col[y] = self._solve(e)
        return self._cache_col[y]

    def green_row(self, x: int) -> np.ndarray:
        """``G_m(x, ·)`` over ``X_{m-1}`` for interior ``x``."""
        if x not in self._cache_row:
            e = np.zeros(self.n_int)
            e[x] = 1.0
            self._cache_row[x] = self._solve(e, trans="T")
        return self._cache_row[x]

    def green_columns(self, ys) -> np.ndarray:
        ys = np.asarray(ys)
        E = np.zeros((self.n_int, len(ys)))
        E[ys, np.arange(len(ys))] = 1.0
        return self._solve(E)

    @property
    def G_root(self) -> float:
        return float(self.green_row(0)[0])

    def absorption_row(self, x: int) -> np.ndarray:
        """Distribution of the absorption vertex in level ``m`` for the walk from ``x``."""
        if not self.is_interior(x):
            out = np.zeros(self.bslice.stop - self.bslice.start)
            if self.bslice.start <= x < self.bslice.stop:
                out[x - self.bslice.start] = 1.0
                return out
            raise ValueError("start vertex lies outside X_m")
        return np.asarray(self.R.T @ self.green_row(x)).ravel()

    def extend(self, u: np.ndarray) -> np.ndarray:
        """``f(x) = Σ_y absorption(x → y) u(y)`` on ``X_m`` for data ``u`` on level ``m``."""
        u = np.asarray(u, dtype=float)
        f_int = self._solve(self.R @ u)
        return np.r_[f_int, u]

    def hit_column(self, y: int) -> np.ndarray:
        """``F_m(·, y)`` on ``X_{m-1}``: probability of ever visiting ``y`` before absorption."""
        if self.is_interior(y):
            g = self.green_column(y)
            return g / g[y]
        if not self.bslice.start <= y < self.bslice.stop:
            raise ValueError("target lies outside X_m")
        col = np.asarray(self.R[:, y - self.bslice.start].todense()).ravel()
        return self._solve(col)

    def F(self, x: int, y: int) -> float:
        """``F_m(x, y)``."""
        if x == y:
            return 1.0
        if not self.is_interior(x):
            return 0.0
        return float(self.hit_column(y)[x])

    def F_to_root(self) -> np.ndarray:
        """``F_m(·, ϑ)`` on ``X_{m-1}`` from a solve with ``ϑ`` and level ``m`` absorbing."""
        if self._root_lu is None:
            Q1 = self.Q[1:, 1:].tocsc()
            A = (sp.identity(self.n_int - 1, format="csc") - Q1).tocsc()
            self._root_b = np.asarray(self.Q[1:, 0].todense()).ravel()
            self._root_lu = splu(A) if self.method == "direct" else _Jacobi(Q1)
            self._root_F = np.r_[1.0, self._root_lu.solve(self._root_b)]
        return self._root_F


def solve_absorption(tree: AugmentedTree, table: ConductanceTable, m: int) -> TruncatedSolve:
    if table.tree is not tree:
        raise ValueError("table was built for a different tree")
    return table.truncated(m)


@dataclass(frozen=True)
class ConvergedValue:
    value: float
    m_used: int
    converged: bool
    trace: tuple = field(default=())


def F_converged(table: ConductanceTable, x, y, tol: float = 1e-6, m_min: int | None = None
                ) -> ConvergedValue:
    """``F_m(x, y)`` for increasing ``m`` until successive values differ by less than ``tol``."""
    tree = table.tree
    i, j = tree.idx(x), tree.idx(y)
    start = m_min or int(max(tree.level[i], tree.level[j])) + 1
    trace = []
    for m in range(max(start, 1), tree.max_level + 1):
        v = table.truncated(m).F(i, j)
        if trace and v < trace[-1] - 1e-10 * max(1.0, abs(v)):
            raise AssertionError("F_m decreased in m; truncation solves are inconsistent")
        trace.append(v)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            return ConvergedValue(v, m, True, tuple(trace))
    if not trace:
        raise ValueError("no truncation level available above the endpoints")
    return ConvergedValue(trace[-1], tree.max_level, False, tuple(trace))


# -- Monte Carlo ---------------------------------------------------------------------
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_uniforms(seed: int, paths: np.ndarray, step: int) -> np.ndarray:
    """Uniforms in ``[0, 1)`` for ``(seed, path, step)``, independent of batching."""
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(0x632BE59BD9B4E019))
        k = _mix64(key ^ _mix64(paths.astype(np.uint64) * _GOLDEN + _GOLDEN))
        z = _mix64(k + np.uint64(step + 1) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass
class MonteCarloResult:
    n_paths: int
    n_stopped: int
    n_capped: int
    targets: np.ndarray
    counts: np.ndarray
    seed: int
    rule: tuple

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.n_paths if self.n_paths else np.zeros_like(self.counts, dtype=float)

    @property
    def stderr(self) -> np.ndarray:
        if not self.n_paths:
            return np.zeros_like(self.counts, dtype=float)
        p = self.freq
        return np.sqrt(p * (1 - p) / self.n_paths)


def _step(table: ConductanceTable, v: np.ndarray, u: np.ndarray, cum: np.ndarray, maxdeg: int):
    P = table.P
    start, stop = P.indptr[v], P.indptr[v + 1]
    k = np.zeros(len(v), dtype=np.int64)
    for j in range(maxdeg):
        pos = start + j
        valid = pos < stop - 1
        k += valid & (cum[np.minimum(pos, len(cum) - 1)] <= u)
    return P.indices[start + k]


def monte_carlo(table: ConductanceTable, start, stop_rule: tuple, n_paths: int, seed: int,
                step_cap: int = 100_000, batch: int = 4096) -> MonteCarloResult:
    """Simulate independent paths from ``start``.

    ``stop_rule`` is ``("level", ℓ)`` (record the first vertex of level ``ℓ``)
    or ``("vertex", y, m)`` (record whether ``y`` is visited before level ``m``).
    Path ``i`` draws its randomness from ``(seed, i)`` alone, so results do not
    depend on ``batch``.
    """
    tree = table.tree
    s = tree.idx(start)
    kind = stop_rule[0]
    if kind == "level":
        lvl = int(stop_rule[1])
        if not tree.level[s] < lvl <= tree.max_level:
            raise ValueError("stop level must lie below the start and within the tree")
        sl = tree.level_slice(lvl)
        targets = np.arange(sl.start, sl.stop)
    elif kind == "vertex":
        y, lvl = tree.idx(stop_rule[1]), int(stop_rule[2])
        if not lvl <= tree.max_level:
            raise ValueError("kill level exceeds the tree")
        targets = np.array([y])
    else:
        raise ValueError(f"unknown stop rule {stop_rule!r}")
    counts = np.zeros(len(targets), dtype=np.int64)
    capped = 0
    if n_paths == 0:
        return MonteCarloResult(0, 0, 0, targets, counts, seed, tuple(stop_rule))
    P = table.P
    # cumulative row sums, per row
    cum = np.cumsum(P.data)
    row_off = np.repeat(np.r_[0.0, cum][P.indptr[:-1]], np.diff(P.indptr))
    cum = cum - row_off
    maxdeg = int(np.diff(P.indptr).max())
    for b0 in range(0, n_paths, batch):
        ids = np.arange(b0, min(b0 + batch, n_paths), dtype=np.int64)
        v = np.full(len(ids), s, dtype=np.int64)
        alive = np.ones(len(ids), dtype=bool)
        if kind == "vertex" and s == y:
            counts[0] += len(ids)
            continue
        for t in range(step_cap):
            idx = np.flatnonzero(alive)
            if not len(idx):
                break
            u = path_uniforms(seed, ids[idx], t)
            nv = _step(table, v[idx], u, cum, maxdeg)
            v[idx] = nv
            lv = tree.level[nv]
            if kind == "level":
                done = lv >= lvl
                np.add.at(counts, nv[done] - targets[0], 1)
            else:
                hit = nv == y
                counts[0] += int(hit.sum())
                done = hit | (lv >= lvl)
            alive[idx[done]] = False
        capped += int(alive.sum())
    if capped == n_paths:
        raise RuntimeError("every path reached the step cap")
    return MonteCarloResult(n_paths, n_paths - capped, capped, targets, counts, seed, tuple(stop_rule))


# -- isoperimetry ----------------------------------------------------------------------
@dataclass(frozen=True)
class IsoperimetryReport:
    worst_tree_ratio: float
    worst_graph_ratio: float
    bound: float
    n_sets: int
    sizes: tuple
    violations: int


def _set_ratios(table: ConductanceTable, A: np.ndarray):
    tree = table.tree
    inA = np.zeros(tree.n_vertices, dtype=bool)
    inA[A] = True
    # tree part: vertical edges only (plus virtual children on the last level)
    kids_c = np.zeros(tree.n_vertices)
    np.add.at(kids_c, tree.parent[1:], table.c_up[1:])
    kids_c += table.c_down_virtual
    mT = table.c_up[A] + kids_c[A]
    nonroot = A[A > 0]
    cross_up = table.c_up[nonroot][~inA[tree.parent[nonroot]]].sum()
    # children of A outside A
    kid = np.arange(1, tree.n_vertices)
    par_in = inA[tree.parent[1:]] & ~inA[kid]
    cross_down = table.c_up[kid][par_in].sum() + table.c_down_virtual[A].sum()
    cT = cross_up + cross_down
    mA = table.m[A].sum()
    e = table.h_pairs
    if len(e):
        cut_h = inA[e[:, 0]] ^ inA[e[:, 1]]
        ch = table.c_h[cut_h].sum()
    else:
        ch = 0.0
    return float(mT.sum() / cT), float(mA / (cT + ch))


def isoperimetric_check(table: ConductanceTable, n_sets: int, seed: int = 0,
                        mean_size: float = 40.0) -> IsoperimetryReport:
    """Worst ``m_T(A)/c_T(∂A)`` and ``m(A)/c(∂A)`` over random connected sets.

    Sets are grown from a random start (the root half of the time) by adding a
    uniformly chosen neighbour, to a geometrically distributed size.
    """
    tree = table.tree
    rng = np.random.default_rng(seed)
    adj = tree.adjacency()
    worst_t = worst_g = 0.0
    sizes = []
    lam = table.lam
    bound = (1 + lam) / (1 - lam)
    viol = 0
    for k in range(n_sets):
        if k == 0:
            A = np.array([0])
        else:
            size = min(int(rng.geometric(1.0 / mean_size)), tree.n_vertices)
            s0 = 0 if rng.random() < 0.5 else int(rng.integers(tree.n_vertices))
            members = {s0}
            frontier = list(adj.indices[adj.indptr[s0]:adj.indptr[s0 + 1]])
            while len(members) < size and frontier:
                j = int(rng.integers(len(frontier)))
                v = int(frontier[j])
                frontier[j] = frontier[-1]
                frontier.pop()
                if v in members:
                    continue
                members.add(v)
                frontier.extend(int(w) for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
                                if int(w) not in members)
            A = np.array(sorted(members))
        rt, rg = _set_ratios(table, A)
        sizes.append(len(A))
        worst_t = max(worst_t, rt)
        worst_g = max(worst_g, rg)
        viol += rt > bound * (1 + 1e-12)
    return IsoperimetryReport(worst_t, worst_g, bound, n_sets, tuple(sizes), int(viol))
