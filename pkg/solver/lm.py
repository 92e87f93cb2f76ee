"""Damped Gauss-Newton (Levenberg) driver shared by every solver strategy."""

import logging
import time
from typing import Dict, List, Literal, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from energy.problem import DeformationProblem, Subproblem
from energy.state import GLOBAL_DIM, NODE_DIM, DeformState
from solver.pcg import block_jacobi, pcg

logger = logging.getLogger(__name__)

LinearSolver = Literal["auto", "direct-dense", "direct-sparse", "pcg"]

# Below this many unknowns "auto" uses a dense direct solve.
DENSE_LIMIT = 200


class SolveOptions(BaseModel):
    """Levenberg-Marquardt and linear-solver settings."""
    model_config = ConfigDict(extra="forbid")

    max_outer_iterations: int = Field(default=20, ge=1)
    gradient_tolerance: float = Field(default=1e-10, gt=0.0)
    step_tolerance: float = Field(default=1e-10, gt=0.0)
    initial_damping: float = Field(default=1e-4, ge=0.0)
    damping_up: float = Field(default=10.0, gt=1.0)
    damping_down: float = Field(default=0.3, gt=0.0, lt=1.0)
    max_damping: float = Field(default=1e10, gt=0.0)
    max_damping_escalations: int = Field(default=8, ge=1)
    linear_solver: LinearSolver = "auto"
    pcg_tolerance: float = Field(default=1e-10, gt=0.0)
    pcg_max_iterations: int = Field(default=2000, ge=1)
    optimize_global_pose: bool = True
    decoupled_alternations: int = Field(default=1, ge=1)


class SolveReport(BaseModel):
    """Outcome of one solve call. Times are milliseconds."""
    model_config = ConfigDict(extra="forbid")

    strategy: str
    energies: Dict[str, float] = Field(default_factory=dict)
    total_energy: float = 0.0
    iterations: int = 0
    converged: bool = False
    status: str = "not_started"
    times: Dict[str, float] = Field(default_factory=lambda: {"assembly": 0.0, "level1": 0.0, "level2": 0.0, "linear": 0.0, "total": 0.0})
    energy_history: List[float] = Field(default_factory=list)
    level1_dim: int = 0
    level2_dim: int = 0
    coupling_norm: float = 0.0
    pcg_iterations: int = 0

    def add_time(self, phase: str, ms: float) -> None:
        self.times[phase] = self.times.get(phase, 0.0) + ms


class StepStrategy(Protocol):
    name: str

    def step(self, J: sparse.csr_matrix, r: np.ndarray, damping: float, opts: SolveOptions, sub: Subproblem, report: SolveReport) -> np.ndarray:
        """Solve (J^T J + damping I) dx = -J^T r over the compact columns of `sub`."""
        ...


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def solve_spd(H: sparse.spmatrix, y: np.ndarray, opts: SolveOptions, leading: int, report: Optional[SolveReport] = None) -> np.ndarray:
    """Solve an SPD system with the configured linear solver.

    Raises:
        numpy.linalg.LinAlgError: When a direct factorization fails
    """
    n = H.shape[0]
    if n == 0:
        return np.zeros(0)
    method = opts.linear_solver
    if method == "auto":
        method = "direct-dense" if n < DENSE_LIMIT else "pcg"

    if method == "direct-dense":
        dense = H.toarray() if sparse.issparse(H) else np.asarray(H)
        c, low = linalg.cho_factor(dense, check_finite=False)
        return linalg.cho_solve((c, low), y, check_finite=False)
    if method == "direct-sparse":
        try:
            lu = splinalg.splu(sparse.csc_matrix(H))
        except RuntimeError as e:
            raise np.linalg.LinAlgError(str(e))
        return lu.solve(y)

    if sparse.issparse(H) and (n - leading) % NODE_DIM == 0:
        precond = block_jacobi(H, leading, NODE_DIM)
    else:
        precond = np.asarray(H.diagonal())
    result = pcg(H, y, precond, tol=opts.pcg_tolerance, max_iter=opts.pcg_max_iterations)
    if report is not None:
        report.pcg_iterations += result.iterations
    if not np.all(np.isfinite(result.x)):
        raise np.linalg.LinAlgError("PCG produced a non-finite solution")
    return result.x


class BatchStrategy:
    """Solve the damped normal equations over every free column at once."""
    name = "batch"

    def step(self, J, r, damping, opts, sub, report):
        H = (J.T @ J).tocsr()
        if damping > 0:
            H = H + damping * sparse.identity(H.shape[0], format="csr")
        leading = GLOBAL_DIM if sub.optimize_global else 0
        t0 = time.perf_counter()
        dx = solve_spd(H, -(J.T @ r), opts, leading, report)
        report.add_time("linear", _ms(t0))
        return dx


def lm_driver(
    problem: DeformationProblem,
    state0: DeformState,
    opts: SolveOptions,
    strategy: StepStrategy,
    sub: Optional[Subproblem] = None,
    report: Optional[SolveReport] = None,
) -> Tuple[DeformState, SolveReport]:
    """Levenberg loop: accept a step iff the objective of `sub` decreases.

    Stops on gradient infinity-norm < tolerance, step norm < tolerance, the
    iteration cap, or repeated linear-solve failure (best state returned).
    """
    sub = sub or problem.full(opts.optimize_global_pose)
    report = report or SolveReport(strategy=strategy.name)
    start = time.perf_counter()

    state = state0
    if sub.is_empty:
        report.status = "empty"
        report.converged = True
        report.energies = problem.energies(state, sub)
        report.total_energy = problem.weighted_energy(state, sub)
        return state, report

    columns = sub.columns
    lookup = problem.column_map(sub)

    t0 = time.perf_counter()
    r, J = problem.linearize(state, sub, lookup)
    report.add_time("assembly", _ms(t0))
    energy = float(r @ r)
    report.energy_history.append(energy)
    damping = opts.initial_damping
    report.status = "max_iterations"
    failures = 0

    iteration = 0
    while iteration < opts.max_outer_iterations:
        gradient = J.T @ r
        if gradient.size == 0 or np.max(np.abs(gradient)) < opts.gradient_tolerance:
            report.converged = True
            report.status = "gradient_tolerance"
            break

        try:
            dx = strategy.step(J, r, damping, opts, sub, report)
        except np.linalg.LinAlgError as e:
            failures += 1
            logger.warning("Linear solve failed (%s); raising damping to %.3e", e, max(damping, 1e-12) * opts.damping_up)
            if failures >= opts.max_damping_escalations:
                report.status = "linear_solve_failed"
                break
            damping = max(damping, 1e-12) * opts.damping_up
            continue
        failures = 0
        iteration += 1

        step_norm = float(np.linalg.norm(dx))
        if step_norm < opts.step_tolerance:
            report.converged = True
            report.status = "step_tolerance"
            break

        candidate = state.retract(dx, columns)
        t0 = time.perf_counter()
        r_new, J_new = problem.linearize(candidate, sub, lookup)
        report.add_time("assembly", _ms(t0))
        energy_new = float(r_new @ r_new)

        if energy_new < energy:
            state, r, J, energy = candidate, r_new, J_new, energy_new
            report.energy_history.append(energy)
            damping *= opts.damping_down
            logger.debug("%s iter %d: accepted, energy %.6e, damping %.2e", strategy.name, iteration, energy, damping)
        else:
            damping = max(damping, 1e-12) * opts.damping_up
            logger.debug("%s iter %d: rejected (%.6e >= %.6e), damping %.2e", strategy.name, iteration, energy_new, energy, damping)
            if damping > opts.max_damping:
                report.converged = True
                report.status = "damping_limit"
                break

    report.iterations += iteration
    report.energies = problem.energies(state, sub)
    report.total_energy = problem.weighted_energy(state, sub)
    report.add_time("total", _ms(start))
    return state, report
