"""Graph metric, canonical geodesics, Gromov products and boundary points."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra, shortest_path

from .augtree import AugmentedTree
from .ifs import IfsSystem, as_word, word_str


def _bfs(tree: AugmentedTree, sources, m: int) -> np.ndarray:
    """Hop distances from ``sources`` inside ``X_m``; ``inf`` where unreachable."""
    return shortest_path(tree.adjacency(m), method="D", unweighted=True, indices=sources)


def graph_distance(tree: AugmentedTree, x, y) -> int:
    """Shortest-path length, searched inside ``X_{max(|x|, |y|)}``."""
    i, j = tree.idx(x), tree.idx(y)
    if i == j:
        return 0
    m = int(max(tree.level[i], tree.level[j]))
    d = _bfs(tree, [i], m)[0, j]
    if not np.isfinite(d):
        raise RuntimeError("graph is disconnected; this indicates a construction bug")
    return int(d)


def distance_rows(tree: AugmentedTree, sources, m: int | None = None) -> np.ndarray:
    """Integer distance rows from ``sources`` to every vertex of ``X_m``."""
    m = tree.max_level if m is None else m
    return _bfs(tree, np.atleast_1d(sources), m).astype(np.int64)


def gromov_product_twice(tree: AugmentedTree, x, y, d: int | None = None) -> int:
    """``2 (x|y) = |x| + |y| - d(x, y)`` as an integer."""
    i, j = tree.idx(x), tree.idx(y)
    if d is None:
        d = graph_distance(tree, i, j)
    return int(tree.level[i] + tree.level[j] - d)


def gromov_product(tree: AugmentedTree, x, y) -> Fraction:
    """``(x|y)`` with respect to the root, as an exact half-integer."""
    return Fraction(gromov_product_twice(tree, x, y), 2)


def _horizontal_distance(tree: AugmentedTree, n: int, a: int, b: int) -> float:
    if a == b:
        return 0.0
    sl = tree.level_slice(n)
    adj = tree.horizontal_adjacency()[sl, sl]
    d = shortest_path(adj, method="D", unweighted=True, indices=[a - sl.start])[0, b - sl.start]
    return float(d)


def distance_by_levels(tree: AugmentedTree, x, y) -> int:
    """Graph distance as ``min_ℓ (|x| - ℓ) + (|y| - ℓ) + h_ℓ(x_ℓ, y_ℓ)``.

    ``x_ℓ``, ``y_ℓ`` are the level-ℓ ancestors and ``h_ℓ`` the distance inside
    the horizontal graph of level ``ℓ``.  Equal to :func:`graph_distance`
    because some geodesic always has the up-across-down shape; much cheaper
    on deep trees since each search stays on one level and is depth-limited.
    """
    i, j = tree.idx(x), tree.idx(y)
    li, lj = int(tree.level[i]), int(tree.level[j])
    best = li + lj
    ai, aj = i, j
    anc_i = {int(tree.level[ai]): ai}
    while tree.level[ai] > 0:
        ai = int(tree.parent[ai])
        anc_i[int(tree.level[ai])] = ai
    anc_j = {int(tree.level[aj]): aj}
    while tree.level[aj] > 0:
        aj = int(tree.parent[aj])
        anc_j[int(tree.level[aj])] = aj
    for ell in range(min(li, lj), 0, -1):
        budget = best - (li + lj - 2 * ell)
        if budget < 0:
            break
        u, v = anc_i[ell], anc_j[ell]
        if u == v:
            best = min(best, li + lj - 2 * ell)
            break
        if budget == 0:
            continue
        sl = tree.level_slice(ell)
        adj = tree.horizontal_adjacency()[sl, sl]
        h = dijkstra(adj, unweighted=True, indices=u - sl.start, limit=budget)[v - sl.start]
        if np.isfinite(h):
            best = min(best, li + lj - 2 * ell + int(h))
    return best


def ray_products_twice(tree: AugmentedTree, xi: "BoundaryPoint", eta: "BoundaryPoint", kmax: int) -> list:
    """``2 (x_k | y_k)`` for the ray vertices of ``xi`` and ``eta``, ``k = 1..kmax``."""
    out = []
    for k in range(1, kmax + 1):
        a, b = ray_vertex(tree, xi, k), ray_vertex(tree, eta, k)
        out.append(2 * k - distance_by_levels(tree, a, b))
    return out


def vertex_boundary_product_twice(tree: AugmentedTree, x, xi: "BoundaryPoint") -> int:
    """``2 (x | ξ)`` read off once ``(x | ξ_n)`` is constant for two consecutive ``n``.

    The sequence is non-decreasing in ``n`` and constant from ``n >= |x|`` on,
    so this settles within two levels beyond ``|x|`` when the tree allows.
    """
    i = tree.idx(x)
    li = int(tree.level[i])
    prev = None
    for n in range(li, tree.max_level + 1):
        y = ray_vertex(tree, xi, n)
        val = li + n - distance_by_levels(tree, i, y)
        if prev is not None and val == prev:
            return val
        prev = val
    return prev


@dataclass(frozen=True)
class CanonicalGeodesic:
    x: int
    y: int
    u: int
    v: int
    ell: int
    h: int
    length: int
    path: tuple

    @property
    def gromov_product(self) -> Fraction:
        return Fraction(2 * self.ell - self.h, 2)


def canonical_geodesic(tree: AugmentedTree, x, y) -> CanonicalGeodesic:
    """Geodesic made of an upward segment, one horizontal segment, and a downward segment.

    Among such geodesics the horizontal segment is placed at the smallest
    possible level.
    """
    i, j = tree.idx(x), tree.idx(y)
    d = graph_distance(tree, i, j)
    li, lj = int(tree.level[i]), int(tree.level[j])
    for ell in range(0, min(li, lj) + 1):
        u, v = tree.ancestor_at(i, ell), tree.ancestor_at(j, ell)
        h = _horizontal_distance(tree, ell, u, v)
        if np.isfinite(h) and li + lj - 2 * ell + int(h) == d:
            h = int(h)
            down = _vertical_path(tree, j, ell)[::-1]
            if u == v:
                path = _vertical_path(tree, i, ell) + down[1:]
            else:
                path = _vertical_path(tree, i, ell) + _horizontal_path(tree, ell, u, v)[1:-1] + down
            if Fraction(li + lj - d, 2) != Fraction(2 * ell - h, 2):
                raise AssertionError("Gromov product identity failed on canonical geodesic")
            return CanonicalGeodesic(i, j, u, v, ell, h, d, tuple(path))
    raise AssertionError(
        f"no canonical geodesic between {word_str(tree.words[i])} and {word_str(tree.words[j])}"
    )


def _vertical_path(tree: AugmentedTree, i: int, ell: int) -> list:
    out = [i]
    while tree.level[i] > ell:
        i = int(tree.parent[i])
        out.append(i)
    return out


def _horizontal_path(tree: AugmentedTree, n: int, a: int, b: int) -> list:
    if a == b:
        return [a]
    sl = tree.level_slice(n)
    adj = tree.horizontal_adjacency()[sl, sl]
    _, pred = shortest_path(adj, method="D", unweighted=True, indices=[a - sl.start],
                            return_predecessors=True)
    path = [b - sl.start]
    while path[-1] != a - sl.start:
        path.append(int(pred[0, path[-1]]))
    return [p + sl.start for p in reversed(path)]


def _pairs_within(adj, radius: int):
    """Sparse hop distances ``1..radius`` between distinct vertices of ``adj``."""
    n = adj.shape[0]
    adj = (adj != 0).astype(np.int32).tocsr()
    reach = sp.identity(n, dtype=np.int32, format="csr")
    dist = sp.csr_matrix((n, n), dtype=np.int32)
    for k in range(1, radius + 1):
        nxt = ((reach + reach @ adj) != 0).astype(np.int32)
        new = (nxt - reach).tocsr()
        new.eliminate_zeros()
        if new.nnz == 0:
            break
        dist = dist + k * new
        reach = nxt
    return dist.tocoo()


def horizontal_geodesic_bound(tree: AugmentedTree, radius: int = 12) -> tuple[int, list]:
    """Longest purely horizontal geodesic, overall and per level.

    A same-level pair counts when its horizontal distance equals its graph
    distance, so ties with a path that leaves the level are included.  Graph
    distances of same-level pairs follow the level recursion
    ``D_n(a, b) = min(h_n(a, b), 2 + D_{n-1}(a⁻, b⁻))`` restricted to pairs
    within horizontal distance ``radius``; the radius is doubled whenever the
    bound reaches it.
    """
    while True:
        per_level = [0]
        prev = None
        prev_start = 0
        for n in range(1, tree.max_level + 1):
            sl = tree.level_slice(n)
            pairs = _pairs_within(tree.horizontal_adjacency()[sl, sl], radius)
            a, b, h = pairs.row, pairs.col, pairs.data.astype(np.int64)
            pa = tree.parent[a + sl.start] - prev_start
            pb = tree.parent[b + sl.start] - prev_start
            if prev is None or len(a) == 0:
                dpar = np.zeros(len(a), dtype=np.int64)
            else:
                dpar = np.asarray(prev[pa, pb]).ravel().astype(np.int64)
            same = pa == pb
            up = np.where(same, 2, 2 + dpar)
            d = np.minimum(h, up)
            hit = h == d
            per_level.append(int(h[hit].max()) if hit.any() else 0)
            prev = sp.csr_matrix((d, (a, b)), shape=(sl.stop - sl.start,) * 2)
            prev_start = sl.start
        best = max(per_level)
        if best < radius:
            return best, per_level
        radius *= 2


def delta_estimate(tree: AugmentedTree, sample_size: int, seed: int = 0,
                   pool_size: int = 600) -> Fraction:
    """Sampled lower bound for the hyperbolicity constant (Gromov-product form, base ``ϑ``).

    Triples are drawn from a seeded pool of vertices; when the tree is small
    enough the pool is every vertex.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be at least 1")
    rng = np.random.default_rng(seed)
    n = tree.n_vertices
    pool = np.arange(n) if n <= pool_size else np.sort(rng.choice(n, pool_size, replace=False))
    dist = distance_rows(tree, pool)[:, pool]
    lev = tree.level[pool]
    gp2 = lev[:, None] + lev[None, :] - dist
    t = rng.integers(0, len(pool), size=(sample_size, 3))
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    val = np.minimum(gp2[a, c], gp2[c, b]) - gp2[a, b]
    return Fraction(int(max(val.max(), 0)), 2)


def delta_exhaustive(tree: AugmentedTree, m: int | None = None) -> Fraction:
    """Exact Gromov-product hyperbolicity constant over all triples of ``X_m``."""
    m = tree.max_level if m is None else m
    n = tree.n_upto(m)
    dist = distance_rows(tree, np.arange(n), m)[:, :n]
    lev = tree.level[:n]
    gp2 = lev[:, None] + lev[None, :] - dist
    best = 0
    for z in range(n):
        mn = np.minimum(gp2[:, z][:, None], gp2[z, :][None, :])
        best = max(best, int((mn - gp2).max()))
    return Fraction(best, 2)


# -- boundary points -------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryPoint:
    """The infinite word ``prefix · period^∞`` and its image in ``K``."""

    prefix: bytes
    period: bytes
    geometric_point: np.ndarray

    def symbols(self, k: int) -> bytes:
        """The first ``k`` symbols of the infinite word."""
        out = bytearray(self.prefix[:k])
        while len(out) < k:
            out.extend(self.period)
        return bytes(out[:k])

    def __str__(self):
        return f"{word_str(self.prefix) if self.prefix else ''}({word_str(self.period)})"


def boundary_point(ifs: IfsSystem, prefix, period) -> BoundaryPoint:
    """Build a boundary point; the image is ``S_prefix`` of the fixed point of ``S_period``."""
    prefix, period = as_word(prefix), as_word(period)
    if not period:
        raise ValueError("period must be non-empty")
    if any(s < 1 or s > ifs.n_maps for s in prefix + period):
        raise ValueError("symbol out of range")
    sp_ = ifs.map_of(period)
    z = np.linalg.solve(np.eye(ifs.dim) - sp_.ratio * sp_.orthogonal, sp_.translation)
    # one refinement step by iteration to clean up rounding
    z = sp_(z)
    return BoundaryPoint(prefix, period, ifs.map_of(prefix)(z))


def ray_vertex(tree: AugmentedTree, xi: BoundaryPoint, n: int) -> int:
    """The vertex of level ``n`` whose word is a prefix of ``xi``."""
    i = 0
    for _ in range(n):
        kids = tree.children_of(i)
        if len(kids) == 0:
            raise ValueError("ray leaves the built tree")
        target = xi.symbols(max(len(tree.words[c]) for c in kids))
        for c in kids:
            w = tree.words[c]
            if target[: len(w)] == w:
                i = int(c)
                break
        else:  # pragma: no cover
            raise AssertionError("no child continues the ray")
    return i


def random_boundary_point(ifs: IfsSystem, rng: np.random.Generator, prefix_len: int,
                          max_period: int = 3) -> BoundaryPoint:
    pre = bytes(rng.integers(1, ifs.n_maps + 1, size=prefix_len).tolist())
    per = bytes(rng.integers(1, ifs.n_maps + 1, size=int(rng.integers(1, max_period + 1))).tolist())
    return boundary_point(ifs, pre, per)


@dataclass(frozen=True)
class BoundaryProduct:
    value: Fraction
    level: int
    trace: tuple
    geometric_distance: float


class NoStabilizationError(RuntimeError):
    pass


def boundary_gromov_product(tree: AugmentedTree, xi: BoundaryPoint, eta: BoundaryPoint,
                            M: int | None = None) -> BoundaryProduct:
    """``(ξ|η)`` along prefix rays.

    Stops once two consecutive levels give the same product and the ray
    vertices are farther apart than ``M``.
    """
    gd = float(np.linalg.norm(xi.geometric_point - eta.geometric_point))
    if gd <= 1e-14:
        raise ValueError("boundary points must have distinct images")
    if M is None:
        M = horizontal_geodesic_bound(tree)[0]
    trace = []
    prev = None
    for n in range(1, tree.max_level + 1):
        a, b = ray_vertex(tree, xi, n), ray_vertex(tree, eta, n)
        d = graph_distance(tree, a, b)
        gp = Fraction(2 * n - d, 2)
        trace.append(gp)
        if prev is not None and gp == prev and d > M:
            return BoundaryProduct(gp, n, tuple(trace), gd)
        prev = gp
    raise NoStabilizationError(
        f"(ξ|η) for {xi} and {eta} did not stabilize by level {tree.max_level}; build a deeper tree"
    )
