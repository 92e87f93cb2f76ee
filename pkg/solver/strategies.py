"""Batch, Schur-marginalized and two-level decoupled solvers."""

import dataclasses
import logging
import time
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from edgraph.build import Partition
from energy.problem import DeformationProblem, Subproblem
from energy.state import GLOBAL_DIM, NODE_DIM, DeformState
from solver.lm import BatchStrategy, SolveOptions, SolveReport, _ms, lm_driver, solve_spd

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class BlockHessian:
    """Damped normal equations split into x_c (global pose + PR nodes) and x_f (PI nodes).

    Right-hand sides are y = -J^T r so that the step solves Lambda x = y.
    """
    L_cc: np.ndarray
    L_cf: sparse.csr_matrix
    L_ff: sparse.csc_matrix
    y_c: np.ndarray
    y_f: np.ndarray

    @property
    def c_dim(self) -> int:
        return len(self.y_c)

    @property
    def f_dim(self) -> int:
        return len(self.y_f)


def assemble_block_hessian(
    J: sparse.spmatrix,
    r: np.ndarray,
    c_columns: np.ndarray,
    f_columns: np.ndarray,
    damping: float = 0.0,
) -> BlockHessian:
    J = sparse.csc_matrix(J)
    J_c = J[:, c_columns]
    J_f = J[:, f_columns]
    y = -(J.T @ r)
    L_cc = (J_c.T @ J_c).toarray()
    L_cc[np.diag_indices_from(L_cc)] += damping
    L_ff = (J_f.T @ J_f).tocsc()
    if damping > 0 and L_ff.shape[0]:
        L_ff = (L_ff + damping * sparse.identity(L_ff.shape[0], format="csc")).tocsc()
    return BlockHessian(
        L_cc=L_cc,
        L_cf=(J_c.T @ J_f).tocsr(),
        L_ff=L_ff,
        y_c=y[c_columns],
        y_f=y[f_columns],
    )


def schur_solve(blocks: BlockHessian, opts: SolveOptions, leading: int, report: Optional[SolveReport] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Eliminate x_f, solve the reduced system for x_c, back-substitute x_f.

    Raises:
        numpy.linalg.LinAlgError: When L_ff or the reduced system is singular
    """
    if blocks.f_dim == 0:
        return solve_spd(blocks.L_cc, blocks.y_c, opts, leading, report), np.zeros(0)
    try:
        lu = splinalg.splu(blocks.L_ff)
    except RuntimeError as e:
        raise np.linalg.LinAlgError(f"L_ff is singular: {e}")
    z = lu.solve(blocks.y_f)
    if blocks.c_dim == 0:
        return np.zeros(0), z

    Z = lu.solve(blocks.L_cf.T.toarray())          # L_ff^-1 L_fc
    S = blocks.L_cc - blocks.L_cf @ Z
    S = 0.5 * (S + S.T)
    x_c = solve_spd(S, blocks.y_c - blocks.L_cf @ z, opts, leading, report)
    x_f = z - Z @ x_c
    return x_c, x_f


class MarginalizedStrategy:
    """Exact step through the Schur complement of the PI block.

    Expects the subproblem's free nodes in PR-first order (`Partition.order`).
    """
    name = "marginalized"

    def __init__(self, partition: Partition):
        self.partition = partition

    def step(self, J, r, damping, opts, sub, report):
        leading = GLOBAL_DIM if sub.optimize_global else 0
        c_dim = leading + NODE_DIM * len(self.partition.pr_nodes)
        columns = np.arange(sub.dim)
        blocks = assemble_block_hessian(J, r, columns[:c_dim], columns[c_dim:], damping)
        t0 = time.perf_counter()
        x_c, x_f = schur_solve(blocks, opts, leading, report)
        report.add_time("linear", _ms(t0))
        return np.concatenate([x_c, x_f])


def check_partition(problem: DeformationProblem, partition: Partition) -> None:
    """Raise ValueError unless the partition covers the graph and holds every paired node in PR."""
    N = problem.node_count
    if partition.node_count != N:
        raise ValueError(f"partition covers {partition.node_count} nodes, graph has {N}")
    seen = np.zeros(N, dtype=np.int64)
    np.add.at(seen, partition.order, 1)
    if not np.all(seen == 1):
        raise ValueError("PR and PI node sets must be disjoint and cover every node")
    is_pr = np.zeros(N, dtype=bool)
    is_pr[partition.pr_nodes] = True
    stray = problem.paired_nodes()[~is_pr[problem.paired_nodes()]]
    if len(stray):
        raise ValueError(f"partition is stale: paired nodes {stray[:5].tolist()} are marked PI")


def coupling_norm(problem: DeformationProblem, state: DeformState, partition: Partition, optimize_global: bool) -> float:
    """Frobenius norm of the PR-PI block L_cf of J^T J.

    Only reg rows across the PR/PI boundary touch both blocks, so only they
    are linearized.
    """
    edges = problem.graph.edge_index
    if len(edges) == 0 or len(partition.pr_nodes) == 0 or len(partition.pi_nodes) == 0:
        return 0.0
    is_pr = np.zeros(problem.node_count, dtype=bool)
    is_pr[partition.pr_nodes] = True
    boundary = is_pr[edges[:, 0]] != is_pr[edges[:, 1]]
    if not boundary.any():
        return 0.0
    sub = Subproblem(
        rot_nodes=np.zeros(0, dtype=np.int64),
        reg_edges=edges[boundary],
        pairs=np.zeros((0, 2), dtype=np.int64),
        free_nodes=partition.order,
        optimize_global=optimize_global,
    )
    _, J = problem.linearize(state, sub)
    c_dim = (GLOBAL_DIM if optimize_global else 0) + NODE_DIM * len(partition.pr_nodes)
    J = J.tocsc()
    return float(splinalg.norm(J[:, :c_dim].T @ J[:, c_dim:]))


def solve_batch(problem: DeformationProblem, state0: DeformState, opts: SolveOptions) -> Tuple[DeformState, SolveReport]:
    """Damped Gauss-Newton over all 6 + 12 N unknowns."""
    sub = problem.full(opts.optimize_global_pose)
    report = SolveReport(strategy="batch", level1_dim=sub.dim)
    return lm_driver(problem, state0, opts, BatchStrategy(), sub, report)


def solve_marginalized(problem: DeformationProblem, partition: Partition, state0: DeformState, opts: SolveOptions) -> Tuple[DeformState, SolveReport]:
    """Same steps as `solve_batch`, computed through the Schur complement of the PI block."""
    check_partition(problem, partition)
    sub = dataclasses.replace(problem.full(opts.optimize_global_pose), free_nodes=partition.order)
    leading = GLOBAL_DIM if opts.optimize_global_pose else 0
    report = SolveReport(
        strategy="marginalized",
        level1_dim=leading + NODE_DIM * len(partition.pr_nodes),
        level2_dim=NODE_DIM * len(partition.pi_nodes),
        coupling_norm=coupling_norm(problem, state0, partition, opts.optimize_global_pose),
    )
    return lm_driver(problem, state0, opts, MarginalizedStrategy(partition), sub, report)


def solve_with(strategy: str, problem: DeformationProblem, partition: Partition, state0: DeformState, opts: SolveOptions) -> Tuple[DeformState, SolveReport]:
    """Dispatch by strategy name; batch ignores the partition."""
    if strategy == "batch":
        return solve_batch(problem, state0, opts)
    if strategy == "marginalized":
        return solve_marginalized(problem, partition, state0, opts)
    if strategy == "decoupled":
        return solve_decoupled(problem, partition, state0, opts)
    raise ValueError(f"unknown solver strategy {strategy!r}")


def _merge(into: SolveReport, part: SolveReport) -> None:
    into.iterations += part.iterations
    into.pcg_iterations += part.pcg_iterations
    for phase in ("assembly", "linear"):
        into.add_time(phase, part.times.get(phase, 0.0))
    if not part.converged:
        into.converged = False
    if part.status == "linear_solve_failed":
        into.status = part.status


def solve_decoupled(problem: DeformationProblem, partition: Partition, state0: DeformState, opts: SolveOptions) -> Tuple[DeformState, SolveReport]:
    """Two-level solve.

    Level I optimizes the global pose and PR nodes against the rot rows of PR
    nodes, the reg rows leaving a PR node (a PI neighbor's translation held
    constant) and every data row. Level II then optimizes the PI nodes
    against their rot rows and every reg row touching a PI node, with the
    Level I result frozen. Each level is skipped when it has no unknowns.
    """
    check_partition(problem, partition)
    start = time.perf_counter()
    level1 = problem.level_one(partition, opts.optimize_global_pose)
    level2 = problem.level_two(partition)
    report = SolveReport(
        strategy="decoupled",
        level1_dim=level1.dim,
        level2_dim=level2.dim,
        coupling_norm=coupling_norm(problem, state0, partition, opts.optimize_global_pose),
        converged=True,
    )

    state = state0
    for alternation in range(opts.decoupled_alternations):
        t0 = time.perf_counter()
        state, first = lm_driver(problem, state, opts, BatchStrategy(), level1)
        report.add_time("level1", _ms(t0))
        if alternation == 0:
            report.energy_history = list(first.energy_history)
            report.status = first.status

        t0 = time.perf_counter()
        state, second = lm_driver(problem, state, opts, BatchStrategy(), level2)
        report.add_time("level2", _ms(t0))

        _merge(report, first)
        _merge(report, second)
        logger.debug(
            "decoupled pass %d: level I %s after %d iterations, level II %s after %d iterations",
            alternation, first.status, first.iterations, second.status, second.iterations,
        )

    report.energies = problem.energies(state)
    report.total_energy = problem.weighted_energy(state)
    report.add_time("total", _ms(start))
    return state, report
