"""Tests for the deformation model, energy terms and the matrix form."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from edgraph.build import BindingTable, EDGraph, bind_vertices, build_node_edges
from energy.design import build_design, evaluate_design
from energy.state import GLOBAL_DIM, NODE_DIM, DeformState, EnergyWeights, node_columns
from energy.terms import apply_deformation, data_triplets, e_data, e_reg, e_rot, reg_triplets, total_energy


def _graph(nodes) -> EDGraph:
    nodes = np.asarray(nodes, dtype=np.float64)
    return build_node_edges(EDGraph(
        nodes=nodes,
        sampling_radius=1e-3,
        edge_index=np.zeros((0, 2), dtype=np.int64),
        edge_ptr=np.zeros(len(nodes) + 1, dtype=np.int64),
    ))


def _random_setup(rng, nodes=20, vertices=200):
    graph = _graph(rng.uniform(-1, 1, size=(nodes, 3)))
    points = rng.uniform(-1, 1, size=(vertices, 3))
    binding = bind_vertices(points, graph)
    state = DeformState(
        A=np.eye(3) + 0.3 * rng.standard_normal((nodes, 3, 3)),
        t=0.2 * rng.standard_normal((nodes, 3)),
        R_c=Rotation.random(random_state=int(rng.integers(2**31))).as_matrix(),
        T_c=rng.standard_normal(3),
    )
    return graph, points, binding, state


def test_identity_deformation():
    """Test that the identity state leaves vertices unchanged."""
    rng = np.random.default_rng(0)
    graph, points, binding, _ = _random_setup(rng)
    out = apply_deformation(DeformState.identity(graph.node_count), graph, binding, points)
    assert np.allclose(out, points, atol=1e-14)


def test_single_node_translation():
    """Test a vertex bound to one node with weight 1 and a pure translation."""
    graph = EDGraph(nodes=np.zeros((1, 3)), sampling_radius=1.0, edge_index=np.zeros((0, 2), dtype=np.int64), edge_ptr=np.zeros(2, dtype=np.int64))
    binding = BindingTable(node_ids=np.array([[0]]), weights=np.array([[1.0]]))
    state = DeformState.identity(1)
    state.t[0] = [1.0, 0.0, 0.0]
    assert apply_deformation(state, graph, binding, np.array([[2.0, 3.0, 4.0]])).tolist() == [[3.0, 3.0, 4.0]]


def test_count_mismatch_raises():
    """Test that a binding/vertex count mismatch is rejected."""
    rng = np.random.default_rng(1)
    graph, points, binding, state = _random_setup(rng)
    with pytest.raises(ValueError):
        apply_deformation(state, graph, binding, points[:-1])


def test_rigid_motion_null_space():
    """Test that rigid motions encoded per node cost nothing and move vertices rigidly."""
    rng = np.random.default_rng(2)
    for _ in range(20):
        graph, points, binding, _ = _random_setup(rng, nodes=12, vertices=50)
        R = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        t = rng.standard_normal(3)
        state = DeformState.rigid(R, t, graph.nodes)

        assert e_rot(state).energy <= 1e-12
        assert e_reg(state, graph).energy <= 1e-12
        moved = apply_deformation(state, graph, binding, points)
        assert np.max(np.abs(moved - (points @ R.T + t))) <= 1e-10

        design = build_design(graph, binding, points)
        pairs = np.stack([np.arange(50), np.arange(50)], axis=1)
        assert e_data(state, design, points @ R.T + t, pairs).energy <= 1e-20


def test_matrix_form_matches_direct():
    """Test the Pi/Phi evaluation against the per-vertex formula on random states."""
    rng = np.random.default_rng(3)
    for _ in range(100):
        graph, points, binding, state = _random_setup(rng)
        design = build_design(graph, binding, points)
        direct = apply_deformation(state, graph, binding, points)
        assert np.max(np.abs(evaluate_design(design, state, graph) - direct)) <= 1e-12


def test_design_nonzero_pattern():
    """Test column nonzero counts of M and C and the column sums of C."""
    rng = np.random.default_rng(4)
    graph, points, binding, _ = _random_setup(rng, nodes=6, vertices=1)
    design = build_design(graph, binding, points)
    assert design.M.nnz == 12
    assert design.C.nnz == 4

    graph, points, binding, _ = _random_setup(rng)
    design = build_design(graph, binding, points)
    assert np.all(np.diff(design.C.indptr) == 4)
    assert np.all(np.diff(design.M.indptr) == 12)
    assert np.all(np.abs(np.asarray(design.C.sum(axis=0)).ravel() - 1.0) <= 1e-12)
    assert design.Pi.shape == (200, 4 * graph.node_count)


def test_rot_examples():
    """Test E_rot residuals for identity and diag(2, 1, 1)."""
    state = DeformState.identity(2)
    assert np.all(e_rot(state).residuals == 0)

    state.A[1] = np.diag([2.0, 1.0, 1.0])
    block = e_rot(state)
    assert block.residuals[6:].tolist() == [0.0, 0.0, 0.0, 3.0, 0.0, 0.0]
    assert block.energy == pytest.approx(9.0)


def test_rot_jacobian_is_block_diagonal():
    """Test that each node's rot rows touch only its own affine parameters."""
    rng = np.random.default_rng(5)
    state = DeformState(A=rng.standard_normal((4, 3, 3)), t=rng.standard_normal((4, 3)), R_c=np.eye(3), T_c=np.zeros(3))
    J = e_rot(state).jacobian.toarray()
    for j in range(4):
        rows = J[6 * j:6 * j + 6]
        allowed = np.zeros(state.dim, dtype=bool)
        allowed[GLOBAL_DIM + NODE_DIM * j:GLOBAL_DIM + NODE_DIM * j + 9] = True
        assert np.all(rows[:, ~allowed] == 0)


def test_reg_examples():
    """Test E_reg on uniform translation and the two-node hand example."""
    graph = _graph([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    state = DeformState.identity(2)
    state.t[:] = [0.3, -0.2, 0.5]
    assert e_reg(state, graph).energy == pytest.approx(0.0, abs=1e-30)

    state = DeformState.identity(2)
    state.t[0] = [0.0, 0.0, 1.0]
    assert e_reg(state, graph, alpha=1.0).energy == pytest.approx(2.0)
    with pytest.raises(ValueError):
        e_reg(state, graph, alpha=-1.0)


def test_data_example():
    """Test the identity state against a target one unit away."""
    graph = _graph([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    points = np.zeros((1, 3))
    design = build_design(graph, bind_vertices(points, graph), points)
    block = e_data(DeformState.identity(3), design, np.array([[1.0, 0.0, 0.0]]), np.array([[0, 0]]))
    assert np.allclose(block.residuals, [-1.0, 0.0, 0.0])
    assert block.energy == pytest.approx(1.0)
    with pytest.raises(ValueError):
        e_data(DeformState.identity(3), design, np.array([[1.0, 0.0, 0.0]]), np.array([[0, 3]]))


def test_data_jacobian_sparsity():
    """Test that pair rows only touch the global block and the bound nodes."""
    rng = np.random.default_rng(6)
    graph, points, binding, state = _random_setup(rng)
    design = build_design(graph, binding, points)
    pairs = np.stack([rng.integers(0, 200, size=30), np.arange(30)], axis=1)
    J = e_data(state, design, rng.standard_normal((30, 3)), pairs).jacobian.toarray()
    for p, (v, _) in enumerate(pairs):
        allowed = np.zeros(state.dim, dtype=bool)
        allowed[:GLOBAL_DIM] = True
        allowed[node_columns(binding.node_ids[v])] = True
        assert np.all(J[3 * p:3 * p + 3, ~allowed] == 0)


def test_total_energy():
    """Test the weighted sum, the data-only weighting and the stacked system."""
    rng = np.random.default_rng(7)
    graph, points, binding, state = _random_setup(rng)
    design = build_design(graph, binding, points)
    pairs = np.stack([np.arange(40), np.arange(40)], axis=1)
    targets = rng.standard_normal((40, 3))
    blocks = (e_rot(state), e_reg(state, graph), e_data(state, design, targets, pairs))

    weights = EnergyWeights(rot=1.0, reg=10.0, data=100.0)
    system = total_energy(state, blocks, weights)
    expected = blocks[0].energy + 10 * blocks[1].energy + 100 * blocks[2].energy
    assert system.total == pytest.approx(expected, rel=1e-12)
    assert float(system.residuals @ system.residuals) == pytest.approx(system.total, rel=1e-12)
    assert system.jacobian.shape == (len(system.residuals), state.dim)

    data_only = total_energy(state, blocks, EnergyWeights(rot=0.0, reg=0.0, data=1.0))
    assert data_only.total == pytest.approx(blocks[2].energy, rel=1e-12)

    identity = DeformState.identity(graph.node_count)
    zero = total_energy(identity, (e_rot(identity), e_reg(identity, graph)), weights)
    assert zero.total == 0.0


def test_energy_weights_validation():
    """Test that negative or all-zero weights are rejected."""
    with pytest.raises(ValueError):
        EnergyWeights(rot=-1.0)
    with pytest.raises(ValueError):
        EnergyWeights(rot=0.0, reg=0.0, data=0.0)


def test_node_permutation_leaves_residuals_unchanged():
    """Test that relabeling nodes permutes Jacobian columns and nothing else."""
    rng = np.random.default_rng(8)
    graph, points, binding, state = _random_setup(rng, nodes=10, vertices=60)
    perm = rng.permutation(10)
    inv = np.argsort(perm)

    relabeled = EDGraph(nodes=graph.nodes[perm], sampling_radius=graph.sampling_radius, edge_index=inv[graph.edge_index], edge_ptr=graph.edge_ptr)
    binding2 = BindingTable(node_ids=inv[binding.node_ids], weights=binding.weights)
    state2 = state.permuted(perm)
    design1 = build_design(graph, binding, points)
    design2 = build_design(relabeled, binding2, points)
    pairs = np.stack([np.arange(60), np.arange(60)], axis=1)
    targets = rng.standard_normal((60, 3))

    r1, rows1, cols1, vals1 = data_triplets(state, design1, targets, pairs)
    r2, rows2, cols2, vals2 = data_triplets(state2, design2, targets, pairs)
    assert np.allclose(r1, r2, atol=1e-14)

    reg1 = reg_triplets(state, graph, 1.0)[0]
    reg2 = reg_triplets(state2, relabeled, 1.0, relabeled.edge_index)[0]
    assert np.allclose(reg1, reg2, atol=1e-14)

    J1 = e_data(state, design1, targets, pairs).jacobian.toarray()
    J2 = e_data(state2, design2, targets, pairs).jacobian.toarray()
    column_of = np.concatenate([np.arange(GLOBAL_DIM), node_columns(perm)])
    assert np.allclose(J2, J1[:, column_of], atol=1e-14)
