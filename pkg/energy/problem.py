"""Least-squares problem assembled from the three energy terms."""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse

from edgraph.build import BindingTable, EDGraph, Partition
from energy.design import SparseDesign, build_design
from energy.state import GLOBAL_DIM, NODE_DIM, DeformState, EnergyWeights, node_columns, state_dim
from energy.terms import (
    ResidualBlock,
    WeightedSystem,
    data_triplets,
    e_data,
    e_reg,
    e_rot,
    reg_triplets,
    rot_triplets,
    total_energy,
)


@dataclass(frozen=True, eq=False)
class Subproblem:
    """The residual rows and free state columns one optimization works on.

    Parameters outside `free_nodes` (and the global pose when
    `optimize_global` is off) are held constant: their Jacobian columns are
    dropped.
    """
    rot_nodes: np.ndarray
    reg_edges: np.ndarray
    pairs: np.ndarray
    free_nodes: np.ndarray
    optimize_global: bool

    @property
    def columns(self) -> np.ndarray:
        """Free canonical columns, global pose first then free nodes in the given order."""
        node_cols = node_columns(self.free_nodes)
        if self.optimize_global:
            return np.concatenate([np.arange(GLOBAL_DIM), node_cols])
        return node_cols

    @property
    def dim(self) -> int:
        return (GLOBAL_DIM if self.optimize_global else 0) + NODE_DIM * len(self.free_nodes)

    @property
    def is_empty(self) -> bool:
        return self.dim == 0


@dataclass(eq=False)
class DeformationProblem:
    """ED graph, bindings, model vertices, target points and point pairs."""
    graph: EDGraph
    binding: BindingTable
    vertices: np.ndarray
    targets: np.ndarray
    pairs: np.ndarray
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    alpha: float = 1.0
    design: Optional[SparseDesign] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.targets = np.asarray(getattr(self.targets, "points", self.targets), dtype=np.float64).reshape(-1, 3)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.design is None:
            self.design = build_design(self.graph, self.binding, self.vertices)
        if len(self.pairs):
            if self.pairs[:, 0].min() < 0 or self.pairs[:, 0].max() >= len(self.vertices):
                raise ValueError("pair references an unknown model vertex")
            if self.pairs[:, 1].min() < 0 or self.pairs[:, 1].max() >= len(self.targets):
                raise ValueError("pair references an unknown target point")

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def dim(self) -> int:
        return state_dim(self.node_count)

    def paired_nodes(self) -> np.ndarray:
        """Nodes bound to at least one paired vertex (the nodes data rows touch)."""
        if len(self.pairs) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.design.node_ids[self.pairs[:, 0]])

    def full(self, optimize_global: bool = True) -> Subproblem:
        nodes = np.arange(self.node_count)
        return Subproblem(
            rot_nodes=nodes,
            reg_edges=self.graph.edge_index,
            pairs=self.pairs,
            free_nodes=nodes,
            optimize_global=optimize_global,
        )

    def level_one(self, partition: Partition, optimize_global: bool = True) -> Subproblem:
        """Global pose and PR nodes against every term; reg rows whose source is PR,
        with a PI neighbor's translation held constant."""
        return Subproblem(
            rot_nodes=partition.pr_nodes,
            reg_edges=self.graph.edges_from(partition.pr_nodes),
            pairs=self.pairs,
            free_nodes=partition.pr_nodes,
            optimize_global=optimize_global,
        )

    def level_two(self, partition: Partition) -> Subproblem:
        """PI nodes against E_rot and E_reg with everything else frozen."""
        edges = self.graph.edge_index
        is_pi = np.zeros(self.node_count, dtype=bool)
        is_pi[partition.pi_nodes] = True
        touches_pi = is_pi[edges[:, 0]] | is_pi[edges[:, 1]] if len(edges) else np.zeros(0, dtype=bool)
        return Subproblem(
            rot_nodes=partition.pi_nodes,
            reg_edges=edges[touches_pi],
            pairs=np.zeros((0, 2), dtype=np.int64),
            free_nodes=partition.pi_nodes,
            optimize_global=False,
        )

    def blocks(self, state: DeformState) -> Tuple[ResidualBlock, ResidualBlock, ResidualBlock]:
        return (
            e_rot(state),
            e_reg(state, self.graph, self.alpha),
            e_data(state, self.design, self.targets, self.pairs),
        )

    def evaluate(self, state: DeformState) -> WeightedSystem:
        return total_energy(state, self.blocks(state), self.weights)

    def energies(self, state: DeformState, sub: Optional[Subproblem] = None) -> Dict[str, float]:
        """Unweighted term energies over the rows of `sub` (all rows by default)."""
        sub = sub or self.full()
        r_rot = rot_triplets(state, sub.rot_nodes)[0]
        r_reg = reg_triplets(state, self.graph, self.alpha, sub.reg_edges)[0]
        r_data = data_triplets(state, self.design, self.targets, sub.pairs)[0]
        return {"rot": float(r_rot @ r_rot), "reg": float(r_reg @ r_reg), "data": float(r_data @ r_data)}

    def weighted_energy(self, state: DeformState, sub: Optional[Subproblem] = None) -> float:
        e = self.energies(state, sub)
        w = self.weights
        return w.rot * e["rot"] + w.reg * e["reg"] + w.data * e["data"]

    def column_map(self, sub: Subproblem) -> np.ndarray:
        """Canonical column -> compact column of `sub`, -1 for constant parameters."""
        lookup = np.full(self.dim, -1, dtype=np.int64)
        lookup[sub.columns] = np.arange(sub.dim)
        return lookup

    def linearize(self, state: DeformState, sub: Subproblem, lookup: Optional[np.ndarray] = None) -> Tuple[np.ndarray, sparse.csr_matrix]:
        """Weighted residual and compact Jacobian over the free columns of `sub`.

        Cost is proportional to the rows of `sub`, not to the total node count
        (pass a precomputed `lookup` to avoid rebuilding the column map).
        """
        if lookup is None:
            lookup = self.column_map(sub)
        w = self.weights
        parts = []
        if w.rot > 0:
            parts.append((np.sqrt(w.rot), rot_triplets(state, sub.rot_nodes)))
        if w.reg > 0:
            parts.append((np.sqrt(w.reg), reg_triplets(state, self.graph, self.alpha, sub.reg_edges)))
        if w.data > 0:
            parts.append((np.sqrt(w.data), data_triplets(state, self.design, self.targets, sub.pairs)))

        residuals, rows, cols, vals = [], [], [], []
        offset = 0
        for s, (r, rr, cc, vv) in parts:
            compact = lookup[cc]
            keep = compact >= 0
            residuals.append(s * r)
            rows.append(rr[keep] + offset)
            cols.append(compact[keep])
            vals.append(s * vv[keep])
            offset += len(r)

        if not parts:
            return np.zeros(0), sparse.csr_matrix((0, sub.dim))
        J = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, sub.dim),
        )
        return np.concatenate(residuals), J
