"""Energy terms E_rot, E_reg, E_data with residuals and analytic Jacobians.

Every term is a plain sum of squares. Jacobian columns follow the canonical
state layout of `energy.state`.
"""

from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from edgraph.build import BindingTable, EDGraph
from energy.design import SparseDesign
from energy.state import GLOBAL_DIM, NODE_DIM, DeformState, EnergyWeights

TermName = Literal["rot", "reg", "data"]

# (residuals, rows, canonical columns, values)
Triplets = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

# E_rot row pairs: three column dot products then three squared norms
_ROT_PAIRS = ((0, 1), (0, 2), (1, 2), (0, 0), (1, 1), (2, 2))


@dataclass(eq=False)
class ResidualBlock:
    """Residual vector of one term and its Jacobian over the full state."""
    term: TermName
    residuals: np.ndarray
    jacobian: sparse.csr_matrix

    @property
    def energy(self) -> float:
        return float(self.residuals @ self.residuals)


@dataclass(eq=False)
class WeightedSystem:
    """Weighted total energy and the stacked sqrt(w)-scaled least-squares system."""
    total: float
    terms: Dict[str, float]
    residuals: np.ndarray
    jacobian: sparse.csr_matrix


def _skew(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices, (..., 3) -> (..., 3, 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _to_block(term: TermName, triplets: Triplets, dim: int) -> ResidualBlock:
    r, rows, cols, vals = triplets
    J = sparse.csr_matrix((vals, (rows, cols)), shape=(len(r), dim))
    return ResidualBlock(term=term, residuals=r, jacobian=J)


def blend_nodes(state: DeformState, node_ids: np.ndarray, weights: np.ndarray, offsets: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """sum_j w_j [A_j (v - g_j) + g_j + t_j] per row, before the global pose."""
    A = state.A[node_ids]
    local = np.einsum("nkab,nkb->nka", A, offsets) + anchors + state.t[node_ids]
    return np.einsum("nk,nka->na", weights, local)


def apply_deformation(state: DeformState, graph: EDGraph, binding: BindingTable, vertices: np.ndarray) -> np.ndarray:
    """Deform vertices: R_c sum_j w_j [A_j (v - g_j) + g_j + t_j] + T_c."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) != len(binding):
        raise ValueError(f"binding covers {len(binding)} vertices, got {len(vertices)}")
    if state.node_count != graph.node_count:
        raise ValueError(f"state has {state.node_count} nodes, graph has {graph.node_count}")
    ids = binding.node_ids
    anchors = graph.nodes[ids]
    blended = blend_nodes(state, ids, binding.weights, vertices[:, None, :] - anchors, anchors)
    return blended @ state.R_c.T + state.T_c


def rot_triplets(state: DeformState, nodes: Optional[np.ndarray] = None) -> Triplets:
    """E_rot rows for the given nodes (all by default), 6 per node."""
    if nodes is None:
        nodes = np.arange(state.node_count)
    nodes = np.asarray(nodes, dtype=np.int64)
    n = len(nodes)
    A = state.A[nodes]

    r = np.empty((n, 6))
    rows, cols, vals = [], [], []
    base = GLOBAL_DIM + NODE_DIM * nodes
    for q, (a, b) in enumerate(_ROT_PAIRS):
        ca, cb = A[:, :, a], A[:, :, b]
        row = 6 * np.arange(n) + q
        if a == b:
            r[:, q] = np.einsum("ni,ni->n", ca, ca) - 1.0
            # d/dA[i, a] = 2 c_a[i]; A[i, a] sits at param 3i + a
            for i in range(3):
                rows.append(row)
                cols.append(base + 3 * i + a)
                vals.append(2.0 * ca[:, i])
        else:
            r[:, q] = np.einsum("ni,ni->n", ca, cb)
            for i in range(3):
                rows.append(row)
                cols.append(base + 3 * i + a)
                vals.append(cb[:, i])
                rows.append(row)
                cols.append(base + 3 * i + b)
                vals.append(ca[:, i])

    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return np.zeros(0), empty, empty, np.zeros(0)
    return r.reshape(-1), np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def reg_triplets(state: DeformState, graph: EDGraph, alpha: float, edges: Optional[np.ndarray] = None) -> Triplets:
    """E_reg rows, 3 per directed edge (j, k):
    sqrt(alpha) [A_j (g_k - g_j) + g_j + t_j - (g_k + t_k)]."""
    if edges is None:
        edges = graph.edge_index
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    m = len(edges)
    if m == 0:
        empty = np.zeros(0, dtype=np.int64)
        return np.zeros(0), empty, empty, np.zeros(0)

    s = np.sqrt(alpha)
    j, k = edges[:, 0], edges[:, 1]
    d = graph.nodes[k] - graph.nodes[j]
    pred = np.einsum("mab,mb->ma", state.A[j], d) + graph.nodes[j] + state.t[j]
    r = s * (pred - graph.nodes[k] - state.t[k])

    row3 = 3 * np.arange(m)[:, None] + np.arange(3)              # (m, 3)
    base_j = (GLOBAL_DIM + NODE_DIM * j)[:, None]
    base_k = (GLOBAL_DIM + NODE_DIM * k)[:, None]

    # d r_a / d A_j[a, c] = d_c, A_j[a, c] at param 3a + c
    rows_A = np.repeat(row3, 3, axis=1)                           # (m, 9): rows a,a,a per c
    cols_A = base_j + (3 * np.arange(3)[:, None] + np.arange(3)).reshape(1, 9)
    vals_A = s * np.repeat(d[:, None, :], 3, axis=1).reshape(m, 9)

    cols_tj = base_j + 9 + np.arange(3)
    cols_tk = base_k + 9 + np.arange(3)

    rows = np.concatenate([rows_A.reshape(-1), row3.reshape(-1), row3.reshape(-1)])
    cols = np.concatenate([cols_A.reshape(-1), cols_tj.reshape(-1), cols_tk.reshape(-1)])
    vals = np.concatenate([vals_A.reshape(-1), np.full(3 * m, s), np.full(3 * m, -s)])
    return r.reshape(-1), rows, cols, vals


def data_triplets(state: DeformState, design: SparseDesign, targets: np.ndarray, pairs: np.ndarray) -> Triplets:
    """E_data rows, 3 per pair (model vertex i, target p): v~_i - target_p."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    P = len(pairs)
    if P == 0:
        empty = np.zeros(0, dtype=np.int64)
        return np.zeros(0), empty, empty, np.zeros(0)
    vid, tid = pairs[:, 0], pairs[:, 1]
    if vid.min() < 0 or vid.max() >= design.vertex_count or tid.min() < 0 or tid.max() >= len(targets):
        raise ValueError("pair index out of range")

    ids = design.node_ids[vid]                     # (P, m)
    w = design.weights[vid]                        # (P, m)
    offsets = design.offsets[vid]                  # (P, m, 3)
    anchors = design.anchors[vid]                  # (P, m, 3)
    m = ids.shape[1]
    R = state.R_c

    blended = blend_nodes(state, ids, w, offsets, anchors)
    rotated = blended @ R.T
    r = rotated + state.T_c - targets[tid]

    # per pair dense block (3, 6 + 12 m): [-[R s]x, I, then per node w kron(R, d^T), w R]
    width = GLOBAL_DIM + NODE_DIM * m
    block = np.zeros((P, 3, width))
    block[:, :, 0:3] = -_skew(rotated)
    block[:, :, 3:6] = np.eye(3)
    for q in range(m):
        c0 = GLOBAL_DIM + NODE_DIM * q
        wq = w[:, q][:, None, None]
        # [a, 3b + c] = R[a, b] d_c
        kron = np.einsum("ab,pc->pabc", R, offsets[:, q, :]).reshape(P, 3, 9)
        block[:, :, c0:c0 + 9] = wq * kron
        block[:, :, c0 + 9:c0 + 12] = wq * R

    col_map = np.empty((P, width), dtype=np.int64)
    col_map[:, :GLOBAL_DIM] = np.arange(GLOBAL_DIM)
    col_map[:, GLOBAL_DIM:] = (GLOBAL_DIM + NODE_DIM * ids[:, :, None] + np.arange(NODE_DIM)).reshape(P, -1)

    rows = np.broadcast_to((3 * np.arange(P)[:, None] + np.arange(3))[:, :, None], (P, 3, width))
    cols = np.broadcast_to(col_map[:, None, :], (P, 3, width))
    return r.reshape(-1), rows.reshape(-1), cols.reshape(-1), block.reshape(-1)


def e_rot(state: DeformState, nodes: Optional[np.ndarray] = None) -> ResidualBlock:
    """Orthonormality residuals of every node's affine matrix; block-diagonal Jacobian."""
    return _to_block("rot", rot_triplets(state, nodes), state.dim)


def e_reg(state: DeformState, graph: EDGraph, alpha: float = 1.0, edges: Optional[np.ndarray] = None) -> ResidualBlock:
    """As-rigid-as-possible residuals over directed edges."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return _to_block("reg", reg_triplets(state, graph, alpha, edges), state.dim)


def e_data(state: DeformState, design: SparseDesign, targets, pairs: np.ndarray) -> ResidualBlock:
    """Point-pair residuals between deformed model vertices and targets."""
    points = getattr(targets, "points", targets)
    return _to_block("data", data_triplets(state, design, points, pairs), state.dim)


def total_energy(state: DeformState, blocks: Sequence[ResidualBlock], weights: EnergyWeights) -> WeightedSystem:
    """w_rot E_rot + w_reg E_reg + w_data E_data, plus the sqrt(w)-scaled stacked system."""
    terms = {"rot": 0.0, "reg": 0.0, "data": 0.0}
    residuals, jacobians = [], []
    for block in blocks:
        if block.jacobian.shape[1] != state.dim:
            raise ValueError("block evaluated on a different state layout")
        w = getattr(weights, block.term)
        terms[block.term] += block.energy
        s = np.sqrt(w)
        residuals.append(s * block.residuals)
        jacobians.append(s * block.jacobian)

    total = weights.rot * terms["rot"] + weights.reg * terms["reg"] + weights.data * terms["data"]
    if residuals:
        r = np.concatenate(residuals)
        J = sparse.vstack(jacobians, format="csr")
    else:
        r = np.zeros(0)
        J = sparse.csr_matrix((0, state.dim))
    return WeightedSystem(total=float(total), terms=terms, residuals=r, jacobian=J)
