"""Iterated function systems, symbolic words, frontier levels and cell geometry.

Words are stored as ``bytes`` whose values are symbols ``1..N``; the empty
word ``b""`` is the root.  Lexicographic byte order is the canonical vertex
order used everywhere downstream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROOT = b""

# Relative slack used when comparing contraction products against r^n, so that
# products of the same ratios taken in different orders land on the same side.
_LEVEL_RTOL = 1e-10

DEFAULT_CLOUD_CAP = 300_000


class IfsError(ValueError):
    """Invalid IFS, weights or word."""


def as_word(w) -> bytes:
    """Coerce ``w`` to the internal word representation.

    Accepts ``bytes``, a sequence of ints, or a digit string such as ``"12"``
    (or ``"1.12.3"`` for alphabets with more than nine symbols).
    """
    if isinstance(w, bytes):
        return w
    if isinstance(w, str):
        if w in ("", "root", "ϑ"):
            return ROOT
        parts = w.split(".") if "." in w else list(w)
        return bytes(int(s) for s in parts)
    return bytes(int(s) for s in w)


def word_str(w: bytes) -> str:
    if not w:
        return "ϑ"
    if max(w) <= 9:
        return "".join(str(s) for s in w)
    return ".".join(str(s) for s in w)


@dataclass(frozen=True)
class Similitude:
    """``S(z) = ratio * orthogonal @ z + translation``."""

    ratio: float
    orthogonal: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.orthogonal, dtype=float))
        t = np.atleast_1d(np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "orthogonal", o)
        object.__setattr__(self, "translation", t)
        if not 0.0 < self.ratio < 1.0:
            raise IfsError(f"contraction ratio must lie in (0,1), got {self.ratio}")
        if o.shape != (t.size, t.size):
            raise IfsError("orthogonal part and translation have mismatched dimension")
        if not np.allclose(o @ o.T, np.eye(t.size), atol=1e-10):
            raise IfsError("orthogonal part is not orthogonal")

    @property
    def dim(self) -> int:
        return self.translation.size

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.ratio * z @ self.orthogonal.T + self.translation

    def compose(self, other: "Similitude") -> "Similitude":
        """Return ``self ∘ other``."""
        return Similitude(
            self.ratio * other.ratio,
            self.orthogonal @ other.orthogonal,
            self.ratio * self.orthogonal @ other.translation + self.translation,
        )

    def fixed_point(self) -> np.ndarray:
        a = np.eye(self.dim) - self.ratio * self.orthogonal
        return np.linalg.solve(a, self.translation)

    @classmethod
    def homothety(cls, ratio: float, center: Sequence[float]) -> "Similitude":
        """Contraction by ``ratio`` toward ``center``."""
        c = np.asarray(center, dtype=float)
        return cls(ratio, np.eye(c.size), (1.0 - ratio) * c)


def hausdorff_dim(ratios: Sequence[float], dim_hint: float | None = None) -> float:
    """Similarity dimension: the root ``α`` of ``Σ r_i^α = 1`` by bisection.

    The bracket is ``[1e-6, d + 2]`` where ``d`` defaults to a bound that is
    always large enough for the given ratios.
    """
    r = np.asarray(ratios, dtype=float)
    if r.size < 2:
        raise IfsError("need at least two maps")
    if np.any(r <= 0) or np.any(r >= 1):
        raise IfsError("all ratios must lie in (0,1)")
    lo = 1e-6
    hi = (dim_hint if dim_hint is not None else math.log(r.size) / -math.log(r.max())) + 2.0

    def g(a):
        return float(np.sum(r ** a)) - 1.0

    if g(lo) < 0 or g(hi) > 0:
        raise IfsError("bisection bracket does not contain the dimension")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    else:  # pragma: no cover - g is strictly decreasing
        raise RuntimeError("bisection for the Hausdorff dimension did not converge")
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Weights:
    p: tuple
    kind: str = "custom"

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if any(v <= 0 for v in p):
            raise IfsError("weights must be positive")
        if abs(sum(p) - 1.0) > 1e-12:
            raise IfsError(f"weights must sum to 1, got {sum(p)!r}")
        if self.kind not in ("natural", "custom"):
            raise IfsError(f"unknown weight kind {self.kind!r}")

    def __len__(self):
        return len(self.p)

    def of(self, word: bytes) -> float:
        out = 1.0
        for s in word:
            out *= self.p[s - 1]
        return out


@dataclass(frozen=True)
class Word:
    symbols: bytes
    ratio_product: float
    weight_product: float
    level: int

    def __str__(self):
        return word_str(self.symbols)


@dataclass
class IfsSystem:
    """A finite family of contracting similitudes and derived constants.

    ``representative`` is the point ``o`` whose images ``S_x(o)`` stand in for
    the cells (vertex projection); it defaults to the centroid of the fixed
    points.
    """

    maps: list
    name: str = "custom"
    representative: np.ndarray | None = None
    osc_declared: bool = True
    hausdorff_dim: float = field(init=False)
    min_ratio: float = field(init=False)
    attractor_diameter: float = field(init=False)

    def __post_init__(self):
        if len(self.maps) < 2:
            raise IfsError("an IFS needs at least two maps")
        dims = {m.dim for m in self.maps}
        if len(dims) != 1:
            raise IfsError("maps act on different dimensions")
        if len(self.maps) > 255:
            raise IfsError("at most 255 maps are supported")
        self.hausdorff_dim = hausdorff_dim(self.ratios, dim_hint=float(self.dim))
        self.min_ratio = float(min(self.ratios))
        fps = np.array([m.fixed_point() for m in self.maps])
        self._seed_point = fps[0]
        if self.representative is None:
            self.representative = fps.mean(axis=0)
        self.representative = np.atleast_1d(np.asarray(self.representative, dtype=float))
        self._root_clouds: dict = {}
        self.attractor_diameter = self._certified_diameter()

    @property
    def n_maps(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return self.maps[0].dim

    @property
    def ratios(self) -> list[float]:
        return [m.ratio for m in self.maps]

    @property
    def homogeneous(self) -> bool:
        r = self.ratios
        return max(r) - min(r) <= 1e-15

    def natural_weights(self) -> Weights:
        p = [ri ** self.hausdorff_dim for ri in self.ratios]
        s = sum(p)
        return Weights(tuple(v / s for v in p), kind="natural")

    # -- words -------------------------------------------------------------
    def ratio_of(self, word: bytes) -> float:
        out = 1.0
        for s in word:
            out *= self.maps[s - 1].ratio
        return out

    def map_of(self, word: bytes) -> Similitude:
        # the empty word gives the identity, which is not a Similitude
        o = np.eye(self.dim)
        t = np.zeros(self.dim)
        r = 1.0
        for sym in word:
            m = self.maps[sym - 1]
            t = t + r * o @ m.translation
            o = o @ m.orthogonal
            r = r * m.ratio
        return _RawMap(r, o, t)

    def level_of(self, word: bytes) -> int:
        """Level ``n`` with ``r_x <= r^n < r_{x minus last symbol}``."""
        if not word:
            return 0
        rx = self.ratio_of(word)
        rpar = rx / self.maps[word[-1] - 1].ratio
        n = _largest_level_geq(rx, self.min_ratio)
        if not self.min_ratio ** n < rpar * (1 - _LEVEL_RTOL):
            raise IfsError(f"word {word_str(word)} is not in any frontier level")
        return n

    def word(self, w, weights: Weights | None = None) -> Word:
        w = as_word(w)
        if any(s < 1 or s > self.n_maps for s in w):
            raise IfsError(f"symbol out of range in {word_str(w)}")
        weights = weights or self.natural_weights()
        return Word(w, self.ratio_of(w), weights.of(w), self.level_of(w))

    def children(self, word: bytes, level: int) -> list[bytes]:
        """Descendants of ``word`` (in ``J_level``) lying in ``J_{level+1}``."""
        target = self.min_ratio ** (level + 1) * (1 + _LEVEL_RTOL)
        out = []
        stack = [(word, self.ratio_of(word))]
        while stack:
            w, rw = stack.pop()
            for i, m in enumerate(self.maps, start=1):
                wi = w + bytes([i])
                ri = rw * m.ratio
                if ri <= target:
                    out.append(wi)
                else:
                    stack.append((wi, ri))
        out.sort()
        return out

    # -- geometry ----------------------------------------------------------
    def frontier_maps(self, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Ratios, orthogonal parts and translations of all ``S_x``, ``x`` in ``J_q`` (unordered)."""
        d = self.dim
        mr = np.array(self.ratios)
        mo = np.array([m.orthogonal for m in self.maps])
        mt = np.array([m.translation for m in self.maps])
        r = np.ones(1)
        o = np.eye(d)[None]
        t = np.zeros((1, d))
        target = self.min_ratio ** q * (1 + _LEVEL_RTOL)
        done_r, done_o, done_t = [], [], []
        while len(r):
            fin = r <= target
            done_r.append(r[fin]); done_o.append(o[fin]); done_t.append(t[fin])
            r, o, t = r[~fin], o[~fin], t[~fin]
            if not len(r):
                break
            t = (t[:, None, :] + r[:, None, None] * np.einsum("kij,mj->kmi", o, mt)).reshape(-1, d)
            o = np.einsum("kij,mjl->kmil", o, mo).reshape(-1, d, d)
            r = (r[:, None] * mr[None, :]).ravel()
        return np.concatenate(done_r), np.concatenate(done_o), np.concatenate(done_t)

    def root_cloud(self, q: int, cap: int = DEFAULT_CLOUD_CAP, seeds: np.ndarray | None = None
                   ) -> np.ndarray:
        """Images of points of ``K`` under every word of the relative frontier ``J_q``.

        ``seeds`` defaults to the fixed point of the first map.
        """
        key = (q, None if seeds is None else np.asarray(seeds).tobytes())
        if key in self._root_clouds:
            return self._root_clouds[key]
        seeds = self._seed_point[None] if seeds is None else np.atleast_2d(seeds)
        n_words = self.frontier_size(q)
        if n_words * len(seeds) > cap:
            raise IfsError(
                f"point cloud at depth {q} has {n_words * len(seeds)} points (cap {cap}); "
                "use a smaller depth"
            )
        r, o, t = self.frontier_maps(q)
        pts = (r[:, None, None] * np.einsum("kij,sj->ksi", o, seeds) + t[:, None, :]).reshape(-1, self.dim)
        self._root_clouds[key] = pts
        return pts

    def frontier_size(self, q: int) -> int:
        """``#J_q`` by counting ratio products, without building the words."""
        mr = np.array(self.ratios)
        target = self.min_ratio ** q * (1 + _LEVEL_RTOL)
        r = np.ones(1)
        total = 0
        while len(r):
            fin = r <= target
            total += int(fin.sum())
            r = (r[~fin][:, None] * mr[None, :]).ravel()
            if total + len(r) > 10 ** 8:
                return total + len(r)
        return total

    def _a_priori_radius(self) -> tuple[np.ndarray, float]:
        c = np.array([m.fixed_point() for m in self.maps]).mean(axis=0)
        rad = max(np.linalg.norm(m(c) - c) / (1.0 - m.ratio) for m in self.maps)
        return c, float(rad)

    def _certified_diameter(self, depth: int = 6) -> float:
        _, rad = self._a_priori_radius()
        pts = self.root_cloud(depth)
        diam = _cloud_diameter(pts)
        return diam + 2.0 * self.min_ratio ** depth * 2.0 * rad

    def vertex_projection(self, word) -> np.ndarray:
        return self.map_of(as_word(word))(self.representative)


@dataclass(frozen=True)
class _RawMap:
    """Composite map; may have ratio 1 (the identity for the root word)."""

    ratio: float
    orthogonal: np.ndarray
    translation: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.ratio * z @ self.orthogonal.T + self.translation


def _largest_level_geq(rx: float, r: float) -> int:
    """Largest ``n`` with ``r^n >= rx`` (with relative slack)."""
    n = max(int(math.log(rx) / math.log(r)) - 1, 0)
    while r ** (n + 1) >= rx * (1 - _LEVEL_RTOL):
        n += 1
    while n > 0 and r ** n < rx * (1 - _LEVEL_RTOL):
        n -= 1
    return n


def _cloud_diameter(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    from scipy.spatial import ConvexHull, QhullError

    pts = np.asarray(pts, dtype=float)
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        hull = pts
    d = np.sqrt(((hull[:, None, :] - hull[None, :, :]) ** 2).sum(-1))
    return float(d.max())


def level_frontier(ifs: IfsSystem, n: int) -> list[bytes]:
    """The frontier ``J_n``, sorted lexicographically."""
    if n < 0:
        raise IfsError("level must be non-negative")
    cur = [ROOT]
    for k in range(n):
        nxt = []
        for w in cur:
            nxt.extend(ifs.children(w, k))
        cur = sorted(nxt)
    return cur


def frontier_count_bounds(ifs: IfsSystem, n: int) -> tuple[float, float]:
    """``(r^{-αn}, r^{-α(n+1)})``; under the OSC ``lower <= #J_n < upper``."""
    a, r = ifs.hausdorff_dim, ifs.min_ratio
    return r ** (-a * n), r ** (-a * (n + 1))


def cell_point_cloud(ifs: IfsSystem, word, q: int, cap: int = DEFAULT_CLOUD_CAP) -> np.ndarray:
    """One point of ``S_word(K)`` per descendant of relative depth ``q``.

    Every point of ``S_word(K)`` lies within ``2 r_word r^q diam(K)`` of the
    returned cloud.
    """
    if q < 0:
        raise IfsError("cloud depth must be non-negative")
    return ifs.map_of(as_word(word))(ifs.root_cloud(q, cap=cap))


def cloud_error(ifs: IfsSystem, word, q: int) -> float:
    return 2.0 * ifs.ratio_of(as_word(word)) * ifs.min_ratio ** q * ifs.attractor_diameter


# -- catalog ------------------------------------------------------------------
def gasket(d: int = 2) -> IfsSystem:
    """``S_i(z) = e_i + (z - e_i)/2`` for ``e_0 = 0`` and the unit vectors."""
    corners = [np.zeros(d)] + [np.eye(d)[i] for i in range(d)]
    maps = [Similitude.homothety(0.5, c) for c in corners]
    rep = np.mean(corners, axis=0)
    return IfsSystem(maps, name=f"gasket{d}", representative=rep)


def interval() -> IfsSystem:
    ifs = gasket(1)
    ifs.name = "interval"
    return ifs


# clockwise from the top-left corner of the unit square
CARPET_POSITIONS = [
    (0.0, 1.0), (0.5, 1.0), (1.0, 1.0), (1.0, 0.5),
    (1.0, 0.0), (0.5, 0.0), (0.0, 0.0), (0.0, 0.5),
]


def carpet() -> IfsSystem:
    maps = [Similitude.homothety(1.0 / 3.0, q) for q in CARPET_POSITIONS]
    return IfsSystem(maps, name="carpet", representative=np.array([0.5, 0.5]))


def nonhom_line() -> IfsSystem:
    maps = [Similitude.homothety(0.5, [0.0]), Similitude.homothety(0.25, [1.0])]
    return IfsSystem(maps, name="nonhom-line")


BUILTINS = {
    "interval": interval,
    "gasket": gasket,
    "gasket2": lambda: gasket(2),
    "gasket3": lambda: gasket(3),
    "carpet": carpet,
    "nonhom-line": nonhom_line,
}


def builtin(name: str) -> IfsSystem:
    key = name.removeprefix("builtin:")
    if key not in BUILTINS:
        raise IfsError(f"unknown builtin IFS {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[key]()


def parse_weights(ifs: IfsSystem, spec) -> Weights:
    """``"natural"``, a list of floats, or a comma-separated string."""
    if spec is None or spec == "natural":
        return ifs.natural_weights()
    if isinstance(spec, str):
        spec = [float(s) for s in spec.split(",") if s.strip()]
    if len(spec) != ifs.n_maps:
        raise IfsError(f"expected {ifs.n_maps} weights, got {len(spec)}")
    w = Weights(tuple(spec), kind="custom")
    nat = ifs.natural_weights()
    if all(abs(a - b) <= 1e-10 for a, b in zip(w.p, nat.p)):
        return Weights(w.p, kind="natural")
    return w


def ifs_from_config(cfg: dict) -> tuple[IfsSystem, Weights]:
    """Build from the JSON-compatible config layout.

    ``{"maps": [{"ratio": .., "matrix": [[..]], "translation": [..]}, ..],
    "weights": "natural" | [p1, .., pN], "representative": [..]}``
    """
    try:
        maps = [
            Similitude(float(m["ratio"]), np.asarray(m.get("matrix", np.eye(len(m["translation"])))),
                       np.asarray(m["translation"]))
            for m in cfg["maps"]
        ]
    except (KeyError, TypeError) as exc:
        raise IfsError(f"malformed IFS config: {exc}") from exc
    ifs = IfsSystem(maps, name=cfg.get("name", "custom"), representative=cfg.get("representative"))
    return ifs, parse_weights(ifs, cfg.get("weights", "natural"))


def load_ifs(source: str, weights=None) -> tuple[IfsSystem, Weights]:
    """``builtin:<name>`` or a path to a JSON config file."""
    if source.startswith("builtin:") or source in BUILTINS:
        ifs = builtin(source)
        return ifs, parse_weights(ifs, weights)
    path = Path(source)
    if not path.exists():
        raise IfsError(f"IFS config {source!r} not found")
    cfg = json.loads(path.read_text())
    ifs, w = ifs_from_config(cfg)
    if weights is not None:
        w = parse_weights(ifs, weights)
    return ifs, w


def all_words(ifs: IfsSystem, max_level: int) -> Iterable[tuple[int, bytes]]:
    for n in range(max_level + 1):
        for w in level_frontier(ifs, n):
            yield n, w
