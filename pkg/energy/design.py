"""Matrix form of the deformation.

Conventions (N nodes, n vertices, rows of outputs are vertices):

    M   (3N x n)  M[3j + c, i] = w_ij (v_i - g_j)_c
    C   (N  x n)  C[j, i]      = w_ij
    Pi  (n x 4N)  [M^T  C^T]
    Phi (4N x 3)  [Lambda  T]^T with Lambda = [A_1 .. A_N] and T = [t_1 + g_1 .. t_N + g_N]

so that the deformed vertices are (Pi Phi) R_c^T + 1 T_c^T.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from edgraph.build import BindingTable, EDGraph
from energy.state import DeformState


@dataclass(frozen=True, eq=False)
class SparseDesign:
    """Sparse design matrices plus the dense per-vertex binding arrays they encode."""
    M: sparse.csc_matrix
    C: sparse.csc_matrix
    Pi: sparse.csr_matrix
    node_ids: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    anchors: np.ndarray

    @property
    def vertex_count(self) -> int:
        return len(self.node_ids)

    @property
    def node_count(self) -> int:
        return self.C.shape[0]


def build_design(graph: EDGraph, binding: BindingTable, vertices: np.ndarray) -> SparseDesign:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) != len(binding):
        raise ValueError(f"binding covers {len(binding)} vertices, got {len(vertices)}")
    ids = binding.node_ids
    if ids.size and (ids.min() < 0 or ids.max() >= graph.node_count):
        raise ValueError("binding references a node outside the graph")

    n, m = ids.shape
    N = graph.node_count
    anchors = graph.nodes[ids]                               # (n, m, 3)
    offsets = vertices[:, None, :] - anchors                 # (n, m, 3)
    w = binding.weights

    cols = np.repeat(np.arange(n), m)
    C = sparse.csc_matrix((w.reshape(-1), (ids.reshape(-1), cols)), shape=(N, n))

    e = (w[:, :, None] * offsets).reshape(-1)
    m_rows = (3 * ids[:, :, None] + np.arange(3)).reshape(-1)
    m_cols = np.repeat(np.arange(n), 3 * m)
    M = sparse.csc_matrix((e, (m_rows, m_cols)), shape=(3 * N, n))

    Pi = sparse.hstack([M.T, C.T], format="csr")
    return SparseDesign(M=M, C=C, Pi=Pi, node_ids=ids, weights=w, offsets=offsets, anchors=anchors)


def stack_phi(state: DeformState, graph: EDGraph) -> np.ndarray:
    """Phi = [Lambda  T]^T, shape (4N, 3)."""
    lam_t = np.transpose(state.A, (0, 2, 1)).reshape(-1, 3)   # rows 3j + c hold A_j[:, c]
    T_t = state.t + graph.nodes
    return np.vstack([lam_t, T_t])


def evaluate_design(design: SparseDesign, state: DeformState, graph: EDGraph) -> np.ndarray:
    """Deformed vertices from the matrix form, (n, 3)."""
    if state.node_count != design.node_count:
        raise ValueError("state and design disagree on node count")
    pre = np.asarray(design.Pi @ stack_phi(state, graph))
    return pre @ state.R_c.T + state.T_c
