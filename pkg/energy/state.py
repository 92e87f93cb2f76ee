"""Optimization state: per-node affine transforms plus the global camera pose."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from edgraph.build import EDGraph, bind_vertices

# State vector layout: [rotation increment (3), T_c (3)] then 12 per node
# (A row-major (9), t (3)) in canonical node order.
GLOBAL_DIM = 6
NODE_DIM = 12


class EnergyWeights(BaseModel):
    """Term weights w_rot, w_reg, w_data."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    rot: float = Field(default=1.0, ge=0.0)
    reg: float = Field(default=10.0, ge=0.0)
    data: float = Field(default=100.0, ge=0.0)

    @model_validator(mode="after")
    def _one_positive(self) -> "EnergyWeights":
        if self.rot == 0 and self.reg == 0 and self.data == 0:
            raise ValueError("at least one energy weight must be positive")
        return self


def state_dim(node_count: int) -> int:
    return GLOBAL_DIM + NODE_DIM * node_count


def node_columns(nodes: np.ndarray) -> np.ndarray:
    """Canonical state columns of the given nodes, 12 per node, in the given order."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return (GLOBAL_DIM + NODE_DIM * nodes[:, None] + np.arange(NODE_DIM)).reshape(-1)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


@dataclass(eq=False)
class DeformState:
    """A (N, 3, 3), t (N, 3), R_c (3, 3), T_c (3,)."""
    A: np.ndarray
    t: np.ndarray
    R_c: np.ndarray
    T_c: np.ndarray

    @classmethod
    def identity(cls, node_count: int) -> "DeformState":
        return cls(
            A=np.tile(np.eye(3), (node_count, 1, 1)),
            t=np.zeros((node_count, 3)),
            R_c=np.eye(3),
            T_c=np.zeros(3),
        )

    @classmethod
    def rigid(cls, R: np.ndarray, t: np.ndarray, nodes: np.ndarray) -> "DeformState":
        """Encode the rigid motion x -> R x + t per node with identity global pose."""
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 3)
        R = np.asarray(R, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        return cls(
            A=np.tile(R, (len(nodes), 1, 1)),
            t=nodes @ R.T + t - nodes,
            R_c=np.eye(3),
            T_c=np.zeros(3),
        )

    @property
    def node_count(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return state_dim(self.node_count)

    def copy(self) -> "DeformState":
        return DeformState(A=self.A.copy(), t=self.t.copy(), R_c=self.R_c.copy(), T_c=self.T_c.copy())

    def permuted(self, order: np.ndarray) -> "DeformState":
        """State whose node i is this state's node order[i]."""
        return DeformState(A=self.A[order].copy(), t=self.t[order].copy(), R_c=self.R_c.copy(), T_c=self.T_c.copy())

    def retract(self, dx: np.ndarray, columns: Optional[np.ndarray] = None) -> "DeformState":
        """Apply an increment given in canonical columns.

        Node parameters are additive; the rotation increment is composed on
        the left, R_c <- exp([w]x) R_c, then re-orthonormalized.
        """
        dx = np.asarray(dx, dtype=np.float64)
        if columns is None:
            columns = np.arange(self.dim)
            if len(dx) != self.dim:
                raise ValueError(f"increment has {len(dx)} entries, state has {self.dim}")
        columns = np.asarray(columns, dtype=np.int64)

        out = self.copy()
        is_global = columns < GLOBAL_DIM
        g_cols, g_vals = columns[is_global], dx[is_global]
        if g_cols.size:
            inc = np.zeros(GLOBAL_DIM)
            inc[g_cols] = g_vals
            if np.any(inc[:3]):
                out.R_c = orthonormalize(Rotation.from_rotvec(inc[:3]).as_matrix() @ self.R_c)
            out.T_c = self.T_c + inc[3:]

        n_cols, n_vals = columns[~is_global] - GLOBAL_DIM, dx[~is_global]
        if n_cols.size:
            node, param = np.divmod(n_cols, NODE_DIM)
            is_affine = param < 9
            a_flat = out.A.reshape(-1, 9)
            np.add.at(a_flat, (node[is_affine], param[is_affine]), n_vals[is_affine])
            out.A = a_flat.reshape(-1, 3, 3)
            np.add.at(out.t, (node[~is_affine], param[~is_affine] - 9), n_vals[~is_affine])
        return out

    def distance(self, other: "DeformState") -> float:
        """Max-abs difference over all parameters (rotation compared as matrices)."""
        return float(max(
            np.max(np.abs(self.A - other.A), initial=0.0),
            np.max(np.abs(self.t - other.t), initial=0.0),
            np.max(np.abs(self.R_c - other.R_c)),
            np.max(np.abs(self.T_c - other.T_c)),
        ))


def grow_state(state: DeformState, old_nodes: np.ndarray, new_nodes: np.ndarray) -> DeformState:
    """Append parameters for `new_nodes`, blended from the nearest old nodes.

    A new node takes the weighted mean of its neighbors' affine matrices and
    the translation that makes it follow the current deformation field, so a
    warm-started solve starts close to the existing warp.
    """
    old_nodes = np.asarray(old_nodes, dtype=np.float64).reshape(-1, 3)
    new_nodes = np.asarray(new_nodes, dtype=np.float64).reshape(-1, 3)
    if len(new_nodes) == 0:
        return state.copy()
    if len(old_nodes) < 2:
        grown = DeformState.identity(len(new_nodes))
        return DeformState(
            A=np.concatenate([state.A, grown.A]),
            t=np.concatenate([state.t, grown.t]),
            R_c=state.R_c.copy(),
            T_c=state.T_c.copy(),
        )

    graph = EDGraph(
        nodes=old_nodes,
        sampling_radius=1.0,
        edge_index=np.zeros((0, 2), dtype=np.int64),
        edge_ptr=np.zeros(len(old_nodes) + 1, dtype=np.int64),
    )
    binding = bind_vertices(new_nodes, graph)
    w = binding.weights[:, :, None]
    ids = binding.node_ids
    A_new = np.einsum("nk,nkab->nab", binding.weights, state.A[ids])
    offsets = new_nodes[:, None, :] - old_nodes[ids]
    moved = np.einsum("nkab,nkb->nka", state.A[ids], offsets) + old_nodes[ids] + state.t[ids]
    t_new = (w * moved).sum(axis=1) - new_nodes
    return DeformState(
        A=np.concatenate([state.A, A_new]),
        t=np.concatenate([state.t, t_new]),
        R_c=state.R_c.copy(),
        T_c=state.T_c.copy(),
    )
