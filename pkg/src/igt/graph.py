"""Per-bag graph assembly: k-NN adjacency over patch coordinates, CSR storage.

A bag arrives as instance features plus 2-D patch-center coordinates.  The
neighborhood structure is a k-NN graph (squared Euclidean distance, ties
broken by lower node index) symmetrized by union, stored in CSR form with
sorted, deduplicated column indices and no self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, IngestionError
from .tensor import Tensor

_ROW_CHUNK = 512  # bound the N x chunk distance buffer


class CsrAdjacency:
    """Symmetric adjacency in compressed sparse row form.

    ``offsets`` has length n+1; ``cols[offsets[i]:offsets[i+1]]`` are the
    sorted neighbors of node i.  Derived index arrays used by the message
    passing kernels are cached on first use.
    """

    def __init__(self, offsets: np.ndarray, cols: np.ndarray):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self._edge_rows: np.ndarray | None = None
        self._col_order: np.ndarray | None = None
        self._col_offsets: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_edges(self) -> int:
        return len(self.cols)

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors(self, i: int) -> np.ndarray:
        return self.cols[self.offsets[i]:self.offsets[i + 1]]

    @property
    def edge_rows(self) -> np.ndarray:
        """Row index of every stored edge, edge-major (matches ``cols``)."""
        if self._edge_rows is None:
            self._edge_rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees())
        return self._edge_rows

    @property
    def col_grouping(self) -> tuple[np.ndarray, np.ndarray]:
        """Permutation sorting edges by column, plus that grouping's offsets.

        Lets scatter-style reductions over edge targets run as contiguous
        segment reductions instead of per-edge accumulation.
        """
        if self._col_order is None:
            self._col_order = np.argsort(self.cols, kind="stable")
            counts = np.bincount(self.cols, minlength=self.n_nodes)
            self._col_offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return self._col_order, self._col_offsets

    def validate(self) -> None:
        """Raise unless the structure satisfies every adjacency invariant."""
        n = self.n_nodes
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.cols):
            raise ContractError("CSR offsets must start at 0 and end at len(cols)")
        if np.any(np.diff(self.offsets) < 0):
            raise ContractError("CSR offsets must be nondecreasing")
        if len(self.cols) and (self.cols.min() < 0 or self.cols.max() >= n):
            raise ContractError("CSR column index out of range")
        rows = self.edge_rows
        if np.any(rows == self.cols):
            raise ContractError("adjacency contains a self-loop")
        for i in range(n):
            nb = self.neighbors(i)
            if np.any(np.diff(nb) <= 0):
                raise ContractError(f"neighbors of node {i} not strictly sorted")
        # symmetry: the edge multiset must equal its transpose
        order, _ = self.col_grouping
        if not (np.array_equal(self.cols[order], rows) and np.array_equal(rows[order], self.cols)):
            raise ContractError("adjacency is not symmetric")

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.edge_rows.tolist(), self.cols.tolist()))


@dataclass
class GraphConfig:
    """Neighborhood construction settings.

    ``neighbor_source`` selects what the k-NN runs on: patch coordinates
    (default) or the instance feature vectors.
    """

    k: int = 8
    symmetrize: bool = True
    neighbor_source: str = "coords"  # "coords" | "features"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.neighbor_source not in ("coords", "features"):
            raise ConfigurationError(f"unknown neighbor_source {self.neighbor_source!r}")


@dataclass
class WsiGraph:
    """One bag: node features, coordinates, CSR adjacency, class label."""

    features: Tensor
    coords: np.ndarray
    adjacency: CsrAdjacency
    label: int
    name: str = ""

    @property
    def n_nodes(self) -> int:
        return self.features.rows


def _directed_knn(points: np.ndarray, k: int) -> list[np.ndarray]:
    """k nearest neighbors per node by (squared distance, index) order."""
    n = len(points)
    sq = (points * points).sum(axis=1)
    out: list[np.ndarray] = []
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        block = points[start:stop]
        d = sq[start:stop, None] - 2.0 * (block @ points.T) + sq[None, :]
        for local, i in enumerate(range(start, stop)):
            row = d[local].copy()
            row[i] = np.inf  # self excluded
            order = np.lexsort((np.arange(n), row))
            out.append(np.sort(order[:k]).astype(np.int64))
    return out


def knn_adjacency(points: np.ndarray, cfg: GraphConfig) -> CsrAdjacency:
    """Union-symmetrized k-NN adjacency over the given points.

    Ties at equal distance resolve to the lower node index, so the result
    is deterministic even for duplicate coordinates.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n <= cfg.k:
        raise ConfigurationError(f"need more nodes than neighbors: N={n}, k={cfg.k}")
    if not np.all(np.isfinite(points)):
        raise ContractError("coordinates must be finite")

    neighbor_lists = _directed_knn(points, cfg.k)
    if cfg.symmetrize:
        undirected: list[set[int]] = [set() for _ in range(n)]
        for i, nbrs in enumerate(neighbor_lists):
            for j in nbrs:
                undirected[i].add(int(j))
                undirected[int(j)].add(i)
        neighbor_lists = [np.array(sorted(s), dtype=np.int64) for s in undirected]

    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in neighbor_lists])
    cols = np.concatenate(neighbor_lists) if n else np.zeros(0, dtype=np.int64)
    return CsrAdjacency(offsets, cols)


def build_graph(features: Tensor, coords: np.ndarray, label: int, cfg: GraphConfig,
                name: str = "") -> WsiGraph:
    """Assemble a WsiGraph from raw bag contents."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise IngestionError(f"bag {name or '<unnamed>'}: coords must be Nx2, got {coords.shape}")
    if features.rows != len(coords):
        raise IngestionError(
            f"bag {name or '<unnamed>'}: {features.rows} feature rows vs {len(coords)} coordinates")
    points = features.data if cfg.neighbor_source == "features" else coords
    adjacency = knn_adjacency(points, cfg)
    return WsiGraph(features=features, coords=coords, adjacency=adjacency, label=label, name=name)


def permute_graph(g: WsiGraph, perm: np.ndarray) -> WsiGraph:
    """Relabel nodes: new index of old node i is perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    n = g.n_nodes
    if sorted(perm.tolist()) != list(range(n)):
        raise ContractError(f"perm is not a bijection on 0..{n - 1}")
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)

    new_features = Tensor(np.ascontiguousarray(g.features.data[inverse]),
                          requires_grad=g.features.requires_grad)
    new_coords = g.coords[inverse]

    neighbor_lists = [np.sort(perm[g.adjacency.neighbors(old)]) for old in inverse]
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in neighbor_lists])
    cols = np.concatenate(neighbor_lists) if neighbor_lists else np.zeros(0, dtype=np.int64)
    return WsiGraph(features=new_features, coords=new_coords,
                    adjacency=CsrAdjacency(offsets, cols), label=g.label, name=g.name)
