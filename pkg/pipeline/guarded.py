"""Guarded solver wrapper: journals every call and turns numerical failures
into SolverFailed."""

import logging
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from energy.state import DeformState
from journal.log import append
from solver.lm import SolveReport

logger = logging.getLogger(__name__)

SolveFn = Callable[..., Tuple[DeformState, SolveReport]]


class SolverFailed(Exception):
    """A solve raised a numerical error or produced a non-finite state."""

    def __init__(self, strategy: str, reason: str):
        super().__init__(f"{strategy}: {reason}")
        self.strategy = strategy
        self.reason = reason


def _finite(state: DeformState) -> bool:
    return bool(
        np.all(np.isfinite(state.A)) and np.all(np.isfinite(state.t))
        and np.all(np.isfinite(state.R_c)) and np.all(np.isfinite(state.T_c))
    )


def guarded_solver(
    solve_fn: SolveFn,
    *,
    strategy: str,
    log_path: Optional[Path] = None,
    run_id: str = "",
) -> SolveFn:
    """Wrap a solver so every call is journaled and failures raise SolverFailed.

    Args:
        solve_fn: One of solve_batch / solve_marginalized / solve_decoupled
        strategy: Name written to the journal
        log_path: Journal file; None disables journaling
        run_id: Run id written to the journal

    Returns:
        Function with the same signature as `solve_fn`
    """
    def wrapped(*args, **kwargs) -> Tuple[DeformState, SolveReport]:
        try:
            state, report = solve_fn(*args, **kwargs)
            if not _finite(state):
                raise FloatingPointError("non-finite parameters in the solved state")
            if report.status == "linear_solve_failed":
                raise np.linalg.LinAlgError("linear solve failed after damping escalation")
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
            logger.warning("Solver %s failed: %s", strategy, e)
            if log_path is not None:
                append({"event": "solve", "run_id": run_id, "data": {"strategy": strategy, "outcome": "failed", "reason": str(e)}}, log_path)
            raise SolverFailed(strategy, str(e)) from e

        if log_path is not None:
            append({
                "event": "solve",
                "run_id": run_id,
                "data": {
                    "strategy": strategy,
                    "outcome": report.status,
                    "iterations": report.iterations,
                    "total_energy": report.total_energy,
                    "level1_dim": report.level1_dim,
                },
            }, log_path)
        return state, report

    wrapped.__name__ = getattr(solve_fn, "__name__", strategy)
    wrapped.__doc__ = solve_fn.__doc__ or f"Guarded version of {strategy}"
    return wrapped
