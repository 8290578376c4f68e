"""Pairwise k-NN graphs and multi-scale local hypergraphs.

Neighbor search is exact. Above ``BRUTE_FORCE_MAX`` points it runs on a
uniform hash grid with ring expansion; below, on a full distance matrix.
Both paths compute squared distances with the same expression, so they
agree bit for bit, ties included (lower index wins).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import Scene, ValidationError

BRUTE_FORCE_MAX = 64


@dataclass
class GraphConfig:
    k: int = 10
    scales: tuple = (5, 7)

    def validate(self) -> None:
        if self.k < 1:
            raise ValidationError("graph k must be >= 1")
        if any(s < 2 for s in self.scales):
            raise ValidationError(f"hyperedge sizes must be >= 2, got {list(self.scales)}")


def _sq_dist(points, i_points, q):
    d = points[i_points] - q
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]


class GridIndex:
    """Uniform spatial hash over 2D points for exact k-nearest queries."""

    def __init__(self, points, cell_size: float | None = None):
        self.points = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        n = len(self.points)
        lo = self.points.min(axis=0) if n else np.zeros(2)
        hi = self.points.max(axis=0) if n else np.zeros(2)
        if cell_size is None:
            # about four points per cell at uniform density
            area = max(float(np.prod(hi - lo)), 1e-12)
            cell_size = 2.0 * math.sqrt(area / max(n, 1))
            if not cell_size > 0:
                cell_size = 1.0
        self.cell = float(cell_size)
        self.origin = lo
        cells = np.floor((self.points - lo) / self.cell).astype(np.int64)
        self.shape = (int(cells[:, 0].max()) + 1, int(cells[:, 1].max()) + 1) if n else (1, 1)
        key = cells[:, 0] * self.shape[1] + cells[:, 1]
        self.order = np.argsort(key, kind="stable")
        sorted_keys = key[self.order]
        n_cells = self.shape[0] * self.shape[1]
        self.starts = np.searchsorted(sorted_keys, np.arange(n_cells + 1))
        self.cells = cells

    def _cell_of(self, q):
        c = np.floor((q - self.origin) / self.cell).astype(np.int64)
        return int(c[0]), int(c[1])

    def _ring(self, cx, cy, r):
        gx, gy = self.shape
        out = []
        x0, x1 = max(cx - r, 0), min(cx + r, gx - 1)
        for x in range(x0, x1 + 1):
            if abs(x - cx) == r:
                ys = range(max(cy - r, 0), min(cy + r, gy - 1) + 1)
            else:
                ys = [y for y in (cy - r, cy + r) if 0 <= y < gy]
            for y in ys:
                key = x * gy + y
                a, b = self.starts[key], self.starts[key + 1]
                if b > a:
                    out.append(self.order[a:b])
        return out

    def query(self, q, k: int, exclude: int = -1):
        """Indices and squared distances of the k nearest points to ``q``.

        Sorted by (squared distance, index). ``exclude`` drops one index (self).
        """
        q = np.asarray(q, dtype=float)
        n = len(self.points)
        want = min(k, n - (1 if 0 <= exclude < n else 0))
        if want <= 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        cx, cy = self._cell_of(q)
        gx, gy = self.shape
        # distance from q to the boundary of its own cell (q may lie outside the grid)
        rel = (q - self.origin) / self.cell - np.array([cx, cy])
        edge = min(rel[0], 1 - rel[0], rel[1], 1 - rel[1]) * self.cell
        edge = max(edge, 0.0)
        chunks = []
        count = 0
        r = 0
        max_r = max(gx, gy) + abs(cx) + abs(cy) + 1
        while True:
            for c in self._ring(cx, cy, r):
                chunks.append(c)
                count += len(c)
            covers_all = cx - r <= 0 and cy - r <= 0 and cx + r >= gx - 1 and cy + r >= gy - 1
            if count - (1 if exclude >= 0 else 0) >= want or covers_all or r > max_r:
                cand = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
                if exclude >= 0:
                    cand = cand[cand != exclude]
                d2 = _sq_dist(self.points, cand, q)
                sel = np.lexsort((cand, d2))[:want]
                if len(sel) == want:
                    bound = (r * self.cell + edge) * (1.0 - 1e-12)
                    if covers_all or d2[sel[-1]] < bound * bound:
                        return cand[sel], d2[sel]
            r += 1


def _brute_knn(points, k):
    n = len(points)
    kk = min(k, n - 1)
    nbr = np.zeros((n, kk), dtype=np.int64)
    d2 = np.zeros((n, kk))
    idx = np.arange(n)
    for i in range(n):
        cand = idx[idx != i]
        dist = _sq_dist(points, cand, points[i])
        sel = np.lexsort((cand, dist))[:kk]
        nbr[i], d2[i] = cand[sel], dist[sel]
    return nbr, d2


def knn_neighbors(positions, k: int, index: GridIndex | None = None):
    """Exact k nearest neighbors (self excluded), nearest first, ties to the lower index.

    Returns ``(neighbors, distances)``, both of shape (N, min(k, N-1)).
    """
    points = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(points)
    kk = max(0, min(k, n - 1))
    if n <= BRUTE_FORCE_MAX and index is None:
        nbr, d2 = _brute_knn(points, k)
        return nbr, np.sqrt(d2)
    index = index or GridIndex(points)
    nbr = np.zeros((n, kk), dtype=np.int64)
    d2 = np.zeros((n, kk))
    for i in range(n):
        nbr[i], d2[i] = index.query(points[i], kk, exclude=i)
    return nbr, np.sqrt(d2)


@dataclass
class KnnGraph:
    """Neighbor lists in compact indices; ``nodes[c]`` is the scene index of compact agent c."""

    nodes: np.ndarray
    neighbors: np.ndarray
    distances: np.ndarray
    skipped: list = field(default_factory=list)

    def scene_lists(self) -> dict[int, list[int]]:
        return {int(self.nodes[i]): [int(self.nodes[j]) for j in row] for i, row in enumerate(self.neighbors)}

    def edges(self) -> np.ndarray:
        """Undirected 2-member edges, deduplicated, in first-seen order; (E, 2) sorted rows."""
        seen = set()
        out = []
        for a, row in enumerate(self.neighbors):
            for b in row:
                key = (min(a, int(b)), max(a, int(b)))
                if key not in seen:
                    seen.add(key)
                    out.append(key)
        return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class HyperEdge:
    anchor: int
    members: tuple  # sorted, includes anchor


@dataclass
class MultiScaleGraph:
    pairwise: KnnGraph
    hyperedges: dict  # size S -> list[HyperEdge]
    incidence: dict  # size S -> list (per compact agent) of incident edge ids

    @property
    def nodes(self) -> np.ndarray:
        return self.pairwise.nodes

    @property
    def skipped(self) -> list:
        return self.pairwise.skipped

    def num_entries(self) -> int:
        """Integer index entries stored: neighbor lists, hyperedge members, incidence lists."""
        total = self.pairwise.neighbors.size
        for s, edges in self.hyperedges.items():
            total += sum(len(e.members) for e in edges)
            total += sum(len(lst) for lst in self.incidence[s])
        return int(total)

    def member_arrays(self) -> list[np.ndarray]:
        """Edge member matrices per scale, pairwise first: list of (E, size) arrays."""
        out = [self.pairwise.edges()]
        for s in sorted(self.hyperedges):
            edges = self.hyperedges[s]
            width = max((len(e.members) for e in edges), default=min(s, len(self.nodes)))
            out.append(np.array([e.members for e in edges], dtype=np.int64).reshape(-1, width))
        return out


def reference_positions(scene: Scene):
    """Last-valid-state positions of agents with valid history, plus the skip list."""
    nodes, skipped, pos = [], [], []
    for i, a in enumerate(scene.agents):
        if a.has_valid_history:
            x, y, _ = a.reference_pose()
            nodes.append(i)
            pos.append((x, y))
        else:
            skipped.append(i)
    return np.array(nodes, dtype=np.int64), skipped, np.array(pos, dtype=float).reshape(-1, 2)


def _hyperedges_from_knn(nbr: np.ndarray, size: int) -> list[HyperEdge]:
    seen = set()
    out = []
    for anchor, row in enumerate(nbr):
        members = tuple(sorted([anchor] + [int(j) for j in row[: size - 1]]))
        if len(members) < 2 or members in seen:
            continue
        seen.add(members)
        out.append(HyperEdge(anchor, members))
    return out


def hyperedges_from_positions(positions, size: int) -> list[HyperEdge]:
    if size < 2:
        raise ValidationError("hyperedge size must be >= 2")
    nbr, _ = knn_neighbors(positions, size - 1)
    return _hyperedges_from_knn(nbr, size)


def _valid_positions(scene: Scene):
    nodes, skipped, pos = reference_positions(scene)
    if not len(nodes):
        raise ValidationError("no agent has a valid history state")
    return nodes, skipped, pos


def build_pairwise_graph(scene: Scene, config: GraphConfig) -> KnnGraph:
    config.validate()
    nodes, skipped, pos = _valid_positions(scene)
    nbr, dist = knn_neighbors(pos, config.k)
    return KnnGraph(nodes, nbr, dist, skipped)


def build_hyperedges(scene: Scene, size: int) -> list[HyperEdge]:
    """Hyperedges at one scale; member indices are compact (see ``KnnGraph.nodes``)."""
    _, _, pos = _valid_positions(scene)
    return hyperedges_from_positions(pos, size)


def build_multiscale_from_positions(nodes, skipped, pos, config: GraphConfig) -> MultiScaleGraph:
    config.validate()
    widest = max([config.k] + [s - 1 for s in config.scales])
    nbr, dist = knn_neighbors(pos, widest)
    kk = min(config.k, max(len(pos) - 1, 0))
    pairwise = KnnGraph(np.asarray(nodes), nbr[:, :kk], dist[:, :kk], list(skipped))
    hyper, incidence = {}, {}
    for s in config.scales:
        edges = _hyperedges_from_knn(nbr, s)
        inc = [[] for _ in range(len(pos))]
        for e_id, e in enumerate(edges):
            for m in e.members:
                inc[m].append(e_id)
        hyper[s] = edges
        incidence[s] = inc
    return MultiScaleGraph(pairwise, hyper, incidence)


def build_multiscale(scene: Scene, config: GraphConfig) -> MultiScaleGraph:
    nodes, skipped, pos = _valid_positions(scene)
    return build_multiscale_from_positions(nodes, skipped, pos, config)


def graph_dump(graph: MultiScaleGraph, config: GraphConfig | None = None) -> str:
    """Deterministic text rendering; all indices are scene agent indices."""
    nodes = graph.nodes
    lines = ["# graph-dump v1"]
    if config is not None:
        lines.append(f"k {config.k}")
        lines.append("scales " + ",".join(str(s) for s in config.scales))
    lines.append("agents " + str(len(nodes)))
    lines.append("skipped " + " ".join(str(i) for i in graph.skipped))
    lines.append("[pairwise]")
    for i, row in enumerate(graph.pairwise.neighbors):
        dists = graph.pairwise.distances[i]
        items = " ".join(f"{int(nodes[j])}:{d:.6f}" for j, d in zip(row, dists))
        lines.append(f"{int(nodes[i])} -> {items}".rstrip())
    for s in sorted(graph.hyperedges):
        lines.append(f"[hyperedges {s}]")
        for e in graph.hyperedges[s]:
            members = " ".join(str(int(nodes[m])) for m in e.members)
            lines.append(f"anchor {int(nodes[e.anchor])}: {members}")
    return "\n".join(lines) + "\n"
