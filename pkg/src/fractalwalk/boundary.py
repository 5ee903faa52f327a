"""Hitting distribution of the walk on the attractor and the vertex projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .augtree import AugmentedTree
from .chain import ConductanceTable, MonteCarloResult, monte_carlo
from .ifs import IfsSystem, as_word


def vertex_projection(ifs: IfsSystem, x) -> np.ndarray:
    """``S_x(o)`` for the representative interior point ``o`` of the IFS."""
    return ifs.map_of(as_word(x))(ifs.representative)


@dataclass
class HittingReport:
    level: int
    words: list
    exact: np.ndarray
    target: np.ndarray
    tv_distance: float
    mc: MonteCarloResult | None = None
    touching_pairs: int = 0

    @property
    def max_mc_zscore(self) -> float:
        if self.mc is None or self.mc.n_paths == 0:
            return 0.0
        se = np.sqrt(self.exact * (1 - self.exact) / self.mc.n_paths)
        z = np.abs(self.mc.freq - self.exact) / np.where(se > 0, se, np.inf)
        return float(z.max())


def touching_pair_count(tree: AugmentedTree, level: int, depth: int = 2) -> int:
    """Number of horizontal edges at ``level`` whose cells share a point.

    Detected by coincident images of the fixed points at relative ``depth``;
    exact for the built-in attractors, a lower bound in general.
    """
    e = tree.h_edges[level]
    if len(e) == 0:
        return 0
    ifs = tree.ifs
    fps = np.array([m.fixed_point() for m in ifs.maps])
    cloud = ifs.root_cloud(depth, seeds=fps)
    count = 0
    scale = ifs.min_ratio ** level
    for a, b in e:
        pa = tree.ratio[a] * cloud @ tree.orth[a].T + tree.trans[a]
        pb = tree.ratio[b] * cloud @ tree.orth[b].T + tree.trans[b]
        d = cKDTree(pa).query(pb, k=1)[0].min()
        count += d <= 1e-12 * scale
    return int(count)


def hitting_distribution(table: ConductanceTable, level: int, with_mc: bool = False,
                         n_paths: int = 0, seed: int = 0, overlap_check: bool = False) -> HittingReport:
    """Law of the first vertex of level ``ℓ`` hit from ``ϑ``, against ``p_x``."""
    tree = table.tree
    if not 1 <= level <= tree.max_level - 1:
        raise ValueError(f"level must lie in [1, {tree.max_level - 1}]")
    ts = table.truncated(level)
    exact = ts.absorption_row(0)
    target = tree.weight[tree.level_slice(level)].copy()
    tv = 0.5 * float(np.abs(exact - target).sum())
    mc = monte_carlo(table, 0, ("level", level), n_paths, seed) if with_mc else None
    touching = touching_pair_count(tree, level) if overlap_check else 0
    return HittingReport(level, tree.level_words(level), exact, target, tv, mc, touching)


def cell_hitting(table: ConductanceTable, x, level: int) -> float:
    """Probability that the first vertex of level ``ℓ`` hit from ``ϑ`` descends from ``x``."""
    tree = table.tree
    i = tree.idx(x)
    if tree.level[i] > level:
        raise ValueError("x lies below the hitting level")
    if i == 0:
        return 1.0
    ts = table.truncated(level)
    row = ts.absorption_row(0)
    d = tree.descendants_at(i, level) - tree.level_start[level]
    return float(row[d].sum())
