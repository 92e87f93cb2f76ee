"""Embedded-deformation graph construction, vertex binding and PR/PI classification."""

import logging
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# Nodes bound per vertex.
BIND_COUNT = 4
# Default out-degree of the node-node graph.
EDGE_COUNT = 4


class GraphError(ValueError):
    """Raised when an ED-graph precondition is violated."""
    pass


@dataclass(frozen=True, eq=False)
class EDGraph:
    """Node positions plus directed node-node edges.

    Edges are stored grouped by source node: the neighbors of node j are
    `edge_index[edge_ptr[j]:edge_ptr[j + 1], 1]`, nearest first.
    """
    nodes: np.ndarray
    sampling_radius: float
    edge_index: np.ndarray
    edge_ptr: np.ndarray

    @classmethod
    def empty(cls, sampling_radius: float) -> "EDGraph":
        if sampling_radius <= 0:
            raise GraphError(f"sampling radius must be positive, got {sampling_radius}")
        edge_index, edge_ptr = _empty_edges(0)
        return cls(nodes=np.zeros((0, 3)), sampling_radius=float(sampling_radius), edge_index=edge_index, edge_ptr=edge_ptr)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edge_index)

    def neighbors(self, j: int) -> np.ndarray:
        return self.edge_index[self.edge_ptr[j]:self.edge_ptr[j + 1], 1]

    def edges_from(self, sources: np.ndarray) -> np.ndarray:
        """Directed edges (E, 2) whose source is in `sources`, in source order."""
        sources = np.asarray(sources, dtype=np.int64)
        if sources.size == 0 or self.edge_count == 0:
            return np.zeros((0, 2), dtype=np.int64)
        starts = self.edge_ptr[sources]
        counts = self.edge_ptr[sources + 1] - starts
        total = int(counts.sum())
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(total)
        return self.edge_index[offsets]


@dataclass(frozen=True, eq=False)
class BindingTable:
    """Per-vertex bound node ids (n, m) and normalized weights (n, m)."""
    node_ids: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.node_ids)

    @property
    def width(self) -> int:
        return self.node_ids.shape[1]

    def widen(self, width: int) -> "BindingTable":
        """Pad rows to `width` with zero-weight copies of the first bound node."""
        extra = width - self.width
        if extra < 0:
            raise GraphError(f"cannot narrow a binding of width {self.width} to {width}")
        if extra == 0 or len(self) == 0:
            return self
        return BindingTable(
            node_ids=np.hstack([self.node_ids, np.repeat(self.node_ids[:, :1], extra, axis=1)]),
            weights=np.hstack([self.weights, np.zeros((len(self), extra))]),
        )

    def concat(self, other: "BindingTable") -> "BindingTable":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        width = max(self.width, other.width)
        a, b = self.widen(width), other.widen(width)
        return BindingTable(
            node_ids=np.vstack([a.node_ids, b.node_ids]),
            weights=np.vstack([a.weights, b.weights]),
        )


@dataclass(frozen=True, eq=False)
class Partition:
    """PR/PI split of node ids.

    `order` lists node ids PR first then PI; `permutation[j]` is the position
    of node j in that order.
    """
    pr_nodes: np.ndarray
    pi_nodes: np.ndarray
    permutation: np.ndarray

    @property
    def order(self) -> np.ndarray:
        return np.concatenate([self.pr_nodes, self.pi_nodes])

    @property
    def node_count(self) -> int:
        return len(self.permutation)


def _empty_edges(node_count: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.zeros((0, 2), dtype=np.int64), np.zeros(node_count + 1, dtype=np.int64)


def sample_nodes(points: np.ndarray, radius: float) -> EDGraph:
    """Greedy uniform downsampling in input order.

    A point becomes a node iff it is at least `radius` from every node
    accepted before it.
    """
    if radius <= 0:
        raise GraphError(f"sampling radius must be positive, got {radius}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise GraphError("cannot sample nodes from an empty point list")

    accepted = _greedy_accept(points, radius, np.zeros(len(points), dtype=bool))
    nodes = points[accepted]
    edge_index, edge_ptr = _empty_edges(len(nodes))
    logger.debug("Sampled %d nodes from %d points (radius=%g)", len(nodes), len(points), radius)
    return EDGraph(nodes=nodes, sampling_radius=float(radius), edge_index=edge_index, edge_ptr=edge_ptr)


def _greedy_accept(points: np.ndarray, radius: float, suppressed: np.ndarray) -> np.ndarray:
    """Indices of points accepted by the greedy radius rule, skipping pre-suppressed ones."""
    tree = cKDTree(points)
    suppressed = suppressed.copy()
    accepted = []
    for i in range(len(points)):
        if suppressed[i]:
            continue
        accepted.append(i)
        nbrs = np.asarray(tree.query_ball_point(points[i], radius), dtype=np.int64)
        if nbrs.size:
            # ball query is inclusive; exactly `radius` away is still allowed
            close = np.linalg.norm(points[nbrs] - points[i], axis=1) < radius
            suppressed[nbrs[close]] = True
    return np.array(accepted, dtype=np.int64)


def _knn(tree: cKDTree, data: np.ndarray, queries: np.ndarray, k: int, skip_self: bool) -> Tuple[np.ndarray, np.ndarray]:
    """k nearest data points per query, ties broken by lower index.

    With `skip_self` the query i is data point i and is excluded.
    """
    n = len(data)
    extra = 1 if skip_self else 0
    k = min(k, n - extra)
    ids = np.zeros((len(queries), k), dtype=np.int64)
    dists = np.zeros((len(queries), k), dtype=np.float64)
    if k <= 0:
        return ids, dists

    d, _ = tree.query(queries, k=k + extra)
    d = np.asarray(d).reshape(len(queries), k + extra)
    cutoff = d[:, -1]
    for q in range(len(queries)):
        # everything up to the k-th distance (with slack) so ties are resolved by index
        cand = np.asarray(tree.query_ball_point(queries[q], cutoff[q] * (1.0 + 1e-9) + 1e-15), dtype=np.int64)
        if skip_self:
            cand = cand[cand != q]
        cd = np.linalg.norm(data[cand] - queries[q], axis=1)
        order = np.lexsort((cand, cd))[:k]
        ids[q] = cand[order]
        dists[q] = cd[order]
    return ids, dists


def build_node_edges(graph: EDGraph, k: int = EDGE_COUNT) -> EDGraph:
    """Connect every node to its k nearest other nodes (directed, ties by lower index)."""
    if graph.node_count < 2:
        raise GraphError("need at least 2 nodes to build edges")
    if k < 1:
        raise GraphError(f"edge count must be >= 1, got {k}")

    tree = cKDTree(graph.nodes)
    ids, _ = _knn(tree, graph.nodes, graph.nodes, k, skip_self=True)
    degree = ids.shape[1]
    sources = np.repeat(np.arange(graph.node_count, dtype=np.int64), degree)
    edge_index = np.stack([sources, ids.reshape(-1)], axis=1)
    edge_ptr = np.arange(graph.node_count + 1, dtype=np.int64) * degree
    return EDGraph(nodes=graph.nodes, sampling_radius=graph.sampling_radius, edge_index=edge_index, edge_ptr=edge_ptr)


def bind_vertices(vertices: np.ndarray, graph: EDGraph) -> BindingTable:
    """Bind each vertex to its nearest nodes with normalized weights 1 - d/d_max.

    d_max is the distance to the 5th nearest node. With 2-4 nodes every
    vertex binds to all nodes and d_max = 1.1 x the largest bound distance.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) == 0:
        raise GraphError("cannot bind an empty vertex list")
    if graph.node_count < 2:
        raise GraphError("need at least 2 nodes to bind vertices")

    tree = cKDTree(graph.nodes)
    if graph.node_count > BIND_COUNT:
        ids, dists = _knn(tree, graph.nodes, vertices, BIND_COUNT + 1, skip_self=False)
        d_max = dists[:, BIND_COUNT]
        ids, dists = ids[:, :BIND_COUNT], dists[:, :BIND_COUNT]
    else:
        ids, dists = _knn(tree, graph.nodes, vertices, graph.node_count, skip_self=False)
        d_max = 1.1 * dists.max(axis=1)

    # d_max == 0 needs coincident nodes, which the sampling radius rules out
    raw = 1.0 - dists / np.maximum(d_max, np.finfo(np.float64).tiny)[:, None]
    raw = np.clip(raw, 0.0, None)
    total = raw.sum(axis=1)
    degenerate = total <= 0.0
    if np.any(degenerate):
        # vertex equidistant from all candidates: every raw weight vanishes
        logger.debug("%d vertices with all-zero raw weights; using uniform weights", int(degenerate.sum()))
        raw[degenerate] = 1.0
        total = raw.sum(axis=1)
    weights = raw / total[:, None]
    return BindingTable(node_ids=ids, weights=weights)


def classify_nodes(binding: BindingTable, visible_vertices: Iterable[int], node_count: int) -> Partition:
    """Split nodes into PR (bound to a visible vertex) and PI (the rest)."""
    visible = np.fromiter((int(v) for v in visible_vertices), dtype=np.int64)
    if visible.size and (visible.min() < 0 or visible.max() >= len(binding)):
        raise GraphError("visible vertex index out of range")

    is_pr = np.zeros(node_count, dtype=bool)
    if visible.size:
        is_pr[binding.node_ids[visible].reshape(-1)] = True
    pr_nodes = np.flatnonzero(is_pr)
    pi_nodes = np.flatnonzero(~is_pr)

    permutation = np.empty(node_count, dtype=np.int64)
    permutation[np.concatenate([pr_nodes, pi_nodes])] = np.arange(node_count)
    return Partition(pr_nodes=pr_nodes, pi_nodes=pi_nodes, permutation=permutation)


def extend_graph(graph: EDGraph, binding: BindingTable, new_points: np.ndarray, k: int = EDGE_COUNT) -> Tuple[EDGraph, BindingTable]:
    """Grow the graph with nodes sampled from `new_points` and bind them.

    Existing nodes keep their indices and existing binding rows are unchanged.
    """
    new_points = np.asarray(new_points, dtype=np.float64).reshape(-1, 3)
    if len(new_points) == 0:
        return graph, binding

    radius = graph.sampling_radius
    suppressed = np.zeros(len(new_points), dtype=bool)
    if graph.node_count:
        d, _ = cKDTree(graph.nodes).query(new_points, k=1)
        suppressed = np.asarray(d) < radius
    accepted = _greedy_accept(new_points, radius, suppressed)

    nodes = np.vstack([graph.nodes, new_points[accepted]]) if len(accepted) else graph.nodes
    grown = EDGraph(nodes=nodes, sampling_radius=radius, edge_index=graph.edge_index, edge_ptr=graph.edge_ptr)
    if len(accepted):
        if grown.node_count >= 2:
            grown = build_node_edges(grown, k)
        else:
            edge_index, edge_ptr = _empty_edges(grown.node_count)
            grown = EDGraph(nodes=nodes, sampling_radius=radius, edge_index=edge_index, edge_ptr=edge_ptr)
        logger.debug("Graph grew by %d nodes to %d", len(accepted), grown.node_count)

    return grown, binding.concat(bind_to_graph(new_points, grown))


def bind_to_graph(vertices: np.ndarray, graph: EDGraph) -> BindingTable:
    """bind_vertices, except a single-node graph takes every vertex with weight 1."""
    if graph.node_count == 1:
        n = len(np.asarray(vertices).reshape(-1, 3))
        return BindingTable(node_ids=np.zeros((n, 1), dtype=np.int64), weights=np.ones((n, 1)))
    return bind_vertices(vertices, graph)
