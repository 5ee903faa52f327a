"""Augmented tree: the symbolic word tree plus horizontal edges between nearby cells.

Vertices carry a global integer index.  Indices are level-major and
lexicographic inside each level, so ``X_m`` (all levels ``<= m``) is always
the index prefix ``[:level_start[m + 1]]`` and the children of a vertex form a
contiguous block of the next level.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .ifs import (
    IfsError,
    IfsSystem,
    Weights,
    as_word,
    level_frontier,
    word_str,
)

EDGE_VERTICAL = 0
EDGE_HORIZONTAL = 1

_KEY_QUANTUM = 1e-9
_CHUNK = 1_000_000
_MAX_CLOUD_POINTS = 400_000
# accepted cloud distances may exceed the threshold by this relative slack
_ACCEPT_RTOL = 1e-9


class UndecidableEdgeError(RuntimeError):
    """A horizontal-edge decision could not be certified at the cloud cap."""


@dataclass
class AugmentedTree:
    ifs: IfsSystem
    weights: Weights
    gamma: float
    max_level: int
    words: list
    level: np.ndarray
    level_start: np.ndarray
    parent: np.ndarray
    child_start: np.ndarray
    child_count: np.ndarray
    ratio: np.ndarray
    weight: np.ndarray
    orth: np.ndarray
    trans: np.ndarray
    h_edges: list  # per level: (k, 2) int arrays of global indices, i < j
    cloud_depth_used: int = 0
    exhaustive: bool = False
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {w: i for i, w in enumerate(self.words)}
        self._adj = None

    # -- basic accessors ---------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.words)

    def n_upto(self, m: int) -> int:
        """Number of vertices of ``X_m``."""
        return int(self.level_start[m + 1])

    def level_slice(self, n: int) -> slice:
        return slice(int(self.level_start[n]), int(self.level_start[n + 1]))

    def level_words(self, n: int) -> list:
        return self.words[self.level_slice(n)]

    def idx(self, w) -> int:
        if isinstance(w, (int, np.integer)):
            return int(w)
        w = as_word(w)
        try:
            return self.index[w]
        except KeyError:
            raise KeyError(f"word {word_str(w)} is not a vertex of the tree") from None

    def children_of(self, i: int) -> np.ndarray:
        s = int(self.child_start[i])
        return np.arange(s, s + int(self.child_count[i]))

    def horizontal_edges(self, n: int | None = None) -> np.ndarray:
        if n is None:
            return np.concatenate(self.h_edges) if self.h_edges else np.zeros((0, 2), int)
        return self.h_edges[n]

    def horizontal_neighbors(self, i: int) -> np.ndarray:
        adj = self.horizontal_adjacency()
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def horizontal_adjacency(self) -> sp.csr_matrix:
        if self._adj is None:
            e = self.horizontal_edges()
            n = self.n_vertices
            data = np.ones(2 * len(e), dtype=np.int8)
            a = sp.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                              shape=(n, n)).tocsr()
            a.sort_indices()
            self._adj = a
        return self._adj

    def adjacency(self, m: int | None = None) -> sp.csr_matrix:
        """Unweighted symmetric adjacency of ``X_m`` (defaults to the whole tree)."""
        m = self.max_level if m is None else m
        n = self.n_upto(m)
        kid = np.arange(1, n)
        par = self.parent[1:n]
        e = [h for h in self.h_edges[: m + 1]]
        h = np.concatenate(e) if e else np.zeros((0, 2), int)
        rows = np.r_[kid, par, h[:, 0], h[:, 1]]
        cols = np.r_[par, kid, h[:, 1], h[:, 0]]
        return sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()

    def is_ancestor(self, a: int, b: int) -> bool:
        """True when vertex ``a`` is an ancestor of (or equal to) ``b``."""
        while self.level[b] > self.level[a]:
            b = int(self.parent[b])
        return a == b

    def ancestor_at(self, i: int, n: int) -> int:
        while self.level[i] > n:
            i = int(self.parent[i])
        return i

    def descendants_at(self, i: int, n: int) -> np.ndarray:
        """Indices of the descendants of ``i`` lying in level ``n >= |i|``."""
        lo = hi = i
        for _ in range(int(self.level[i]), n):
            lo = int(self.child_start[lo])
            hi = int(self.child_start[hi] + self.child_count[hi] - 1)
        return np.arange(lo, hi + 1)

    def vertex_projection(self, i) -> np.ndarray:
        i = self.idx(i)
        return self.ratio[i] * self.orth[i] @ self.ifs.representative + self.trans[i]

    def projections(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        o = self.ifs.representative
        return self.ratio[idx, None] * np.einsum("kij,j->ki", self.orth[idx], o) + self.trans[idx]

    def manifest(self) -> dict:
        return {
            "ifs": self.ifs.name,
            "weights": list(self.weights.p),
            "gamma": self.gamma,
            "max_level": self.max_level,
            "cloud_depth": self.cloud_depth_used,
        }


# -- construction ---------------------------------------------------------------
def _skeleton(ifs: IfsSystem, weights: Weights, max_level: int):
    words = [b""]
    level = [0]
    level_start = [0, 1]
    parent = [-1]
    cur = [b""]
    for n in range(max_level):
        nxt_start = len(words)
        base = level_start[n]
        for off, w in enumerate(cur):
            for c in ifs.children(w, n):
                words.append(c)
                level.append(n + 1)
                parent.append(base + off)
        cur = words[nxt_start:]
        level_start.append(len(words))
    n_vert = len(words)
    parent = np.asarray(parent, dtype=np.int64)
    child_count = np.bincount(parent[1:], minlength=n_vert).astype(np.int64)
    child_start = np.full(n_vert, n_vert, dtype=np.int64)
    first = np.r_[True, parent[2:] != parent[1:-1]] if n_vert > 1 else np.zeros(0, bool)
    kids = np.arange(1, n_vert)
    child_start[parent[1:][first]] = kids[first]

    d = ifs.dim
    ratio = np.ones(n_vert)
    weight = np.ones(n_vert)
    orth = np.zeros((n_vert, d, d))
    orth[0] = np.eye(d)
    trans = np.zeros((n_vert, d))
    mr = np.array([m.ratio for m in ifs.maps])
    mo = np.array([m.orthogonal for m in ifs.maps])
    mt = np.array([m.translation for m in ifs.maps])
    pw = np.asarray(weights.p)
    # a child may extend its parent by several symbols in the non-homogeneous case
    for i in range(1, n_vert):
        p = parent[i]
        r, o, t, wgt = ratio[p], orth[p], trans[p], weight[p]
        for s in words[i][len(words[p]):]:
            t = t + r * o @ mt[s - 1]
            o = o @ mo[s - 1]
            r = r * mr[s - 1]
            wgt = wgt * pw[s - 1]
        ratio[i], orth[i], trans[i], weight[i] = r, o, t, wgt
    return (words, np.asarray(level, dtype=np.int64), np.asarray(level_start, dtype=np.int64),
            parent, child_start, child_count, ratio, weight, orth, trans)


class _CellDistanceOracle:
    """Certified decisions ``dist(S_x K, S_y K) <= γ r^n`` cached by relative similitude."""

    def __init__(self, ifs: IfsSystem, q0: int, q_cap_points: int = _MAX_CLOUD_POINTS):
        self.ifs = ifs
        self.q0 = q0
        self.cap = q_cap_points
        self.fps = np.array([m.fixed_point() for m in ifs.maps])
        self._clouds: dict[int, tuple[np.ndarray, cKDTree]] = {}
        self.cache: dict[bytes, bool] = {}
        self.max_q_used = q0

    def cloud(self, q: int):
        if q not in self._clouds:
            if self.ifs.frontier_size(q) * len(self.fps) > self.cap:
                return None
            pts = self.ifs.root_cloud(q, cap=self.cap, seeds=self.fps)
            pts = np.unique(np.round(pts, 13), axis=0)
            self._clouds[q] = (pts, cKDTree(pts))
        return self._clouds[q]

    def decide(self, ratio_t: float, orth_t: np.ndarray, trans_t: np.ndarray, thr: float,
               label: str) -> bool:
        diam = self.ifs.attractor_diameter
        q = self.q0
        while True:
            c = self.cloud(q)
            if c is None:
                raise UndecidableEdgeError(
                    f"cannot certify the edge decision for {label}: the cell distance sits within "
                    f"cloud error of the threshold {thr:.3g} (relative units); try a different gamma"
                )
            pts, tree = c
            img = ratio_t * pts @ orth_t.T + trans_t
            dhat = float(tree.query(img, k=1)[0].min())
            self.max_q_used = max(self.max_q_used, q)
            if dhat <= thr * (1 + _ACCEPT_RTOL):
                return True
            err = 2.0 * self.ifs.min_ratio ** q * diam * (1.0 + ratio_t)
            if dhat - err > thr:
                return False
            q += 1


def _rel_keys(tree_arrays, i: np.ndarray, j: np.ndarray):
    ratio, orth, trans = tree_arrays
    rt = ratio[j] / ratio[i]
    ot = np.einsum("kji,kjl->kil", orth[i], orth[j])
    tt = np.einsum("kji,kj->ki", orth[i], trans[j] - trans[i]) / ratio[i][:, None]
    feats = np.concatenate([rt[:, None], ot.reshape(len(i), -1), tt], axis=1)
    q = np.round(feats / _KEY_QUANTUM).astype(np.int64)
    return q, rt, ot, tt


def _decide_pairs(oracle, arrays, i, j, thr_abs, words):
    """Vectorized edge decisions for candidate pairs ``(i, j)`` at one level."""
    ratio = arrays[0]
    keep = np.zeros(len(i), dtype=bool)
    for s in range(0, len(i), _CHUNK):
        ii, jj = i[s:s + _CHUNK], j[s:s + _CHUNK]
        q, rt, ot, tt = _rel_keys(arrays, ii, jj)
        thr = thr_abs / ratio[ii]
        qthr = np.round(thr / _KEY_QUANTUM).astype(np.int64)
        full = np.concatenate([q, qthr[:, None]], axis=1)
        full = np.ascontiguousarray(full)
        _, first, inv = np.unique(full.view(np.dtype((np.void, full.dtype.itemsize * full.shape[1]))),
                                  return_index=True, return_inverse=True)
        dec = np.empty(len(first), dtype=bool)
        for u, f in enumerate(first):
            key = full[f].tobytes()
            hit = oracle.cache.get(key)
            if hit is None:
                label = f"cells {word_str(words[ii[f]])} and {word_str(words[jj[f]])}"
                d = oracle.dim
                hit = oracle.decide(float(rt[f]), ot[f].reshape(d, d), tt[f], float(thr[f]), label)
                oracle.cache[key] = hit
            dec[u] = hit
        keep[s:s + _CHUNK] = dec[inv.ravel()]
    return keep


def _candidate_pairs(parent_pairs: np.ndarray, child_start, child_count):
    """All child pairs ``(a, b)`` with ``a < b`` from parent pairs ``(p, q)`` (``p <= q``)."""
    p, q = parent_pairs[:, 0], parent_pairs[:, 1]
    cp, cq = child_count[p], child_count[q]
    tot = cp * cq
    rep = np.repeat(np.arange(len(p)), tot)
    off = np.arange(tot.sum()) - np.repeat(np.cumsum(tot) - tot, tot)
    a = child_start[p][rep] + off // cq[rep]
    b = child_start[q][rep] + off % cq[rep]
    keep = a < b
    return a[keep], b[keep]


def build(ifs: IfsSystem, weights: Weights | None = None, gamma: float | None = None,
          max_level: int = 4, cloud_depth: int | None = None, exhaustive: bool = False
          ) -> AugmentedTree:
    """Build the augmented tree up to ``max_level``.

    Parameters
    ----------
    gamma : float, optional
        Horizontal-edge scale; defaults to ``0.1 * ifs.attractor_diameter``.
    cloud_depth : int, optional
        Starting relative depth of the point clouds used to certify cell
        distances.  Raised automatically for pairs that are not decided.
    exhaustive : bool
        Test every same-level pair instead of children of equal or adjacent
        parents.  Quadratic; meant for cross-checking small levels.
    """
    weights = weights or ifs.natural_weights()
    if len(weights) != ifs.n_maps:
        raise IfsError("weights do not match the number of maps")
    if gamma is None:
        gamma = 0.1 * ifs.attractor_diameter
    if not gamma > 0:
        raise IfsError("gamma must be positive")
    if max_level < 0:
        raise IfsError("max_level must be non-negative")
    (words, level, level_start, parent, child_start, child_count,
     ratio, weight, orth, trans) = _skeleton(ifs, weights, max_level)
    if cloud_depth is None:
        cloud_depth = 1
        while ifs.n_maps ** (cloud_depth + 1) * ifs.n_maps <= 4096:
            cloud_depth += 1
    oracle = _CellDistanceOracle(ifs, cloud_depth)
    oracle.dim = ifs.dim
    arrays = (ratio, orth, trans)
    h_edges = [np.zeros((0, 2), dtype=np.int64)]
    r = ifs.min_ratio
    for n in range(1, max_level + 1):
        if exhaustive:
            lo, hi = level_start[n], level_start[n + 1]
            a, b = np.triu_indices(hi - lo, k=1)
            a, b = a + lo, b + lo
        else:
            lo, hi = level_start[n - 1], level_start[n]
            selfp = np.arange(lo, hi)
            pp = np.concatenate([np.stack([selfp, selfp], axis=1), h_edges[n - 1]])
            a, b = _candidate_pairs(pp, child_start, child_count)
        keep = _decide_pairs(oracle, arrays, a, b, gamma * r ** n, words)
        e = np.stack([a[keep], b[keep]], axis=1).astype(np.int64)
        e = e[np.lexsort((e[:, 1], e[:, 0]))] if len(e) else e.reshape(0, 2)
        h_edges.append(e)
    tree = AugmentedTree(ifs, weights, float(gamma), max_level, words, level, level_start, parent,
                         child_start, child_count, ratio, weight, orth, trans, h_edges,
                         cloud_depth_used=oracle.max_q_used, exhaustive=exhaustive)
    check_parent_law(tree)
    return tree


def plain_tree(ifs: IfsSystem, weights: Weights | None = None, max_level: int = 4) -> AugmentedTree:
    """The word tree with no horizontal edges (``gamma`` recorded as 0)."""
    weights = weights or ifs.natural_weights()
    parts = _skeleton(ifs, weights, max_level)
    h = [np.zeros((0, 2), dtype=np.int64) for _ in range(max_level + 1)]
    return AugmentedTree(ifs, weights, 0.0, max_level, *parts, h)


# -- checks and reports ------------------------------------------------------
def check_parent_law(tree: AugmentedTree) -> int:
    """Assert that every horizontal edge has equal or horizontally adjacent parents.

    Returns the number of edges checked.
    """
    adj = tree.horizontal_adjacency()
    e = tree.horizontal_edges()
    if len(e) == 0:
        return 0
    if np.any(tree.level[e[:, 0]] != tree.level[e[:, 1]]):
        raise AssertionError("horizontal edge joins different levels")
    if np.any(e[:, 0] == e[:, 1]):
        raise AssertionError("self-loop in horizontal edges")
    pa, pb = tree.parent[e[:, 0]], tree.parent[e[:, 1]]
    ok = (pa == pb) | np.asarray(adj[pa, pb]).ravel().astype(bool)
    if not ok.all():
        k = int(np.flatnonzero(~ok)[0])
        raise AssertionError(
            f"parent law violated at edge {word_str(tree.words[e[k, 0]])}-{word_str(tree.words[e[k, 1]])}"
        )
    return len(e)


def degree_stats(tree: AugmentedTree) -> tuple[int, dict]:
    """Maximum vertex degree and the degree histogram over the whole tree.

    Vertices of the last level only see their parent and horizontal
    neighbours here; the histogram is of the built graph as is.
    """
    deg = np.asarray(tree.adjacency().sum(axis=1)).ravel().astype(int)
    vals, counts = np.unique(deg, return_counts=True)
    return int(deg.max()), {int(v): int(c) for v, c in zip(vals, counts)}


def degree_by_level(tree: AugmentedTree) -> list[int]:
    deg = np.asarray(tree.adjacency().sum(axis=1)).ravel().astype(int)
    return [int(deg[tree.level_slice(n)].max()) for n in range(tree.max_level + 1)]


def interval_oracle_edges(n: int) -> set:
    """Exact horizontal edges of the dyadic interval tree at level ``n`` (as word pairs)."""
    words = [bytes(1 + ((k >> (n - 1 - b)) & 1) for b in range(n)) for k in range(2 ** n)]
    return {(words[k], words[k + 1]) for k in range(2 ** n - 1)}


def gasket_oracle_edges(n: int) -> set:
    """Exact touching pairs of gasket cells at level ``n``.

    Cells ``w a b^k`` and ``w b a^k`` (``a != b``, ``k = n - |w| - 1``) share a
    point; no other distinct pairs meet.
    """
    out = set()
    for j in range(n):
        k = n - j - 1
        for w in level_frontier_words(3, j):
            for a in (1, 2, 3):
                for b in (1, 2, 3):
                    if a < b:
                        x = w + bytes([a]) + bytes([b]) * k
                        y = w + bytes([b]) + bytes([a]) * k
                        out.add((min(x, y), max(x, y)))
    return out


def level_frontier_words(n_maps: int, n: int) -> list:
    out = [b""]
    for _ in range(n):
        out = [w + bytes([s]) for w in out for s in range(1, n_maps + 1)]
    return out


def edge_word_pairs(tree: AugmentedTree, n: int) -> set:
    return {(tree.words[a], tree.words[b]) for a, b in tree.h_edges[n]}


# -- export -----------------------------------------------------------------------
def config_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def export(tree: AugmentedTree, fmt: str, manifest: dict | None = None) -> bytes:
    """Serialize the tree; output is deterministic for a given tree and manifest."""
    manifest = dict(manifest or tree.manifest())
    manifest.setdefault("config_hash", config_hash(manifest))
    names = [word_str(w) for w in tree.words]
    vert = [(names[int(tree.parent[i])], names[i]) for i in range(1, tree.n_vertices)]
    hor = [(names[a], names[b]) for a, b in tree.horizontal_edges()]
    buf = io.StringIO()
    if fmt == "dot":
        for k in sorted(manifest):
            buf.write(f"// {k}: {manifest[k]}\n")
        buf.write("graph augmented_tree {\n")
        for i, nm in enumerate(names):
            buf.write(f'  "{nm}" [level={int(tree.level[i])}];\n')
        for a, b in vert:
            buf.write(f'  "{a}" -- "{b}" [kind=v];\n')
        for a, b in hor:
            buf.write(f'  "{a}" -- "{b}" [kind=h];\n')
        buf.write("}\n")
    elif fmt in ("json", "json-adjacency"):
        adj = {nm: [] for nm in names}
        for a, b in vert:
            adj[a].append({"to": b, "kind": "v"})
            adj[b].append({"to": a, "kind": "v"})
        for a, b in hor:
            adj[a].append({"to": b, "kind": "h"})
            adj[b].append({"to": a, "kind": "h"})
        doc = {
            "manifest": manifest,
            "vertices": [{"id": nm, "level": int(tree.level[i])} for i, nm in enumerate(names)],
            "adjacency": adj,
        }
        buf.write(json.dumps(doc, indent=1, sort_keys=True))
        buf.write("\n")
    elif fmt in ("csv", "csv-edges"):
        for k in sorted(manifest):
            buf.write(f"# {k}: {manifest[k]}\n")
        buf.write("source,target,kind,level\n")
        for (a, b), i in zip(vert, range(1, tree.n_vertices)):
            buf.write(f"{a},{b},v,{int(tree.level[i])}\n")
        for (a, b), (ia, _) in zip(hor, tree.horizontal_edges()):
            buf.write(f"{a},{b},h,{int(tree.level[ia])}\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}; use dot, json or csv")
    return buf.getvalue().encode()
