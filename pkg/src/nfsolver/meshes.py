"""Point sets on the unit torus and epsilon-ball neighbor graphs.

All coordinates live in [0,1)^d with periodic topology; distances are
toroidal (per-axis min(|delta|, 1-|delta|), then L2).  Neighbor graphs are
never persisted: they are rebuilt deterministically from the meshes and the
budget, so cached copies can always be discarded.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from scipy.spatial import cKDTree

from . import tensor as T
from .errors import ContractError


def wrap_offsets(delta: np.ndarray) -> np.ndarray:
    """Map coordinate differences into the principal box (-0.5, 0.5]^d."""
    return delta - np.ceil(delta - 0.5)


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Toroidal L2 distance; broadcasts over leading axes."""
    d = np.abs(np.asarray(a) - np.asarray(b))
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d * d, axis=-1))


class Mesh:
    """An ordered set of distinct points in [0,1)^d."""

    def __init__(self, coords: np.ndarray, resolution: tuple[int, ...] | None = None):
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        if coords.ndim != 2:
            raise ContractError("mesh coordinates must be [n, d]")
        if coords.shape[0] == 0:
            raise ContractError("mesh must contain at least one point")
        if np.any(coords < 0.0) or np.any(coords >= 1.0):
            raise ContractError("mesh coordinates must lie in [0, 1)")
        if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
            raise ContractError("mesh contains duplicate points")
        self.coords = coords
        self.resolution = tuple(int(r) for r in resolution) if resolution else None
        self._fingerprint: str | None = None

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def ndim(self) -> int:
        return self.coords.shape[1]

    @property
    def equispaced(self) -> bool:
        return self.resolution is not None

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha256(self.coords.tobytes()).hexdigest()
        return self._fingerprint

    @classmethod
    def grid(cls, resolution) -> "Mesh":
        """Row-major equispaced grid: point p = (i_1/r_1, .., i_d/r_d)."""
        resolution = tuple(int(r) for r in np.atleast_1d(resolution))
        axes = [np.arange(r) / r for r in resolution]
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(coords, resolution=resolution)

    @classmethod
    def random(cls, n: int, d: int, rng: np.random.Generator) -> "Mesh":
        return cls(rng.random((n, d)))


class NeighborGraph:
    """Per-target source neighborhoods within a radius epsilon.

    Edge storage is CSR-like: ``src_index`` concatenates every target's
    neighbor list (each list sorted by source id), ``splits[t]:splits[t+1]``
    delimits target t.  ``patched_targets`` lists targets that had no source
    within epsilon and were given their single nearest source instead; those
    pairs may exceed epsilon.
    """

    def __init__(self, src_index, splits, eps, n_sources, budget_c=None,
                 patched_targets=()):
        self.src_index = np.asarray(src_index, dtype=np.int64)
        self.splits = np.asarray(splits, dtype=np.int64)
        self.eps = float(eps)
        self.n_sources = int(n_sources)
        self.budget_c = budget_c
        self.patched_targets = np.asarray(patched_targets, dtype=np.int64)
        self._plan: T.GatherPlan | None = None

    @property
    def n_targets(self) -> int:
        return self.splits.size - 1

    @property
    def n_edges(self) -> int:
        return self.src_index.size

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.splits)

    @property
    def mean_count(self) -> float:
        return float(self.n_edges) / self.n_targets

    def gather_plan(self) -> T.GatherPlan:
        if self._plan is None:
            self._plan = T.GatherPlan(self.src_index, self.n_sources)
        return self._plan

    def target_index(self) -> np.ndarray:
        """Target id of every edge (expanded CSR rows)."""
        return np.repeat(np.arange(self.n_targets), self.counts)


def _as_coords(mesh) -> np.ndarray:
    return mesh.coords if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=np.float64)


def neighbors_within(sources, targets, eps: float) -> NeighborGraph:
    """All source points within distance eps of each target (ties included);
    isolated targets are patched with their single nearest source."""
    src = _as_coords(sources)
    tgt = _as_coords(targets)
    if src.shape[1] != tgt.shape[1]:
        raise ContractError("source and target dimensions differ")
    tree = cKDTree(src, boxsize=1.0)
    lists = tree.query_ball_point(tgt, eps)
    patched = []
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    if np.any(counts == 0):
        isolated = np.flatnonzero(counts == 0)
        _, nearest = tree.query(tgt[isolated], k=1)
        nearest = np.atleast_1d(nearest)
        for t, s in zip(isolated, nearest):
            lists[t] = [int(s)]
            patched.append(int(t))
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    src_index = np.concatenate([np.sort(np.asarray(l, dtype=np.int64)) for l in lists])
    splits = np.concatenate(([0], np.cumsum(counts)))
    return NeighborGraph(src_index, splits, eps, src.shape[0],
                         patched_targets=patched)


def build_neighbor_graph(sources, targets, budget_c: float = 2.0) -> NeighborGraph:
    """Choose epsilon by bisection so the mean neighbor count over targets is
    the largest value not exceeding budget_c * ln(n_sources)."""
    src = _as_coords(sources)
    tgt = _as_coords(targets)
    if budget_c <= 0:
        raise ContractError("budget_c must be positive")
    n_src = src.shape[0]
    budget = budget_c * math.log(n_src)
    tree_src = cKDTree(src, boxsize=1.0)
    tree_tgt = cKDTree(tgt, boxsize=1.0)
    n_tgt = tgt.shape[0]

    def mean_count(radius: float) -> float:
        return tree_src.count_neighbors(tree_tgt, radius) / n_tgt

    lo, hi = 0.0, 0.5 * math.sqrt(src.shape[1])
    if mean_count(hi) <= budget:
        eps = hi
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mean_count(mid) <= budget:
                lo = mid
            else:
                hi = mid
        eps = lo
    graph = neighbors_within(src, tgt, eps)
    graph.budget_c = budget_c
    return graph
