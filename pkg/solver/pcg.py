"""Preconditioned conjugate gradient with (block-)Jacobi preconditioning."""

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

LinearOperator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PCGResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def pcg(
    apply_A: Union[LinearOperator, np.ndarray, sparse.spmatrix],
    b: np.ndarray,
    precond: Union[LinearOperator, np.ndarray, None] = None,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> PCGResult:
    """Solve A x = b for symmetric positive definite A.

    Args:
        apply_A: Callable x -> A x, or a matrix
        b: Right-hand side
        precond: Callable r -> M^-1 r, or the diagonal of A (Jacobi), or None
        tol: Stop when ||A x - b|| <= tol * ||b||
        max_iter: Iteration cap

    Returns:
        PCGResult; `converged` is False when the cap is hit first.
    """
    if not callable(apply_A):
        matrix = apply_A
        apply_A = lambda v: matrix @ v
    if precond is None:
        apply_M = lambda r: r
    elif callable(precond):
        apply_M = precond
    else:
        inv_diag = 1.0 / np.asarray(precond, dtype=np.float64)
        apply_M = lambda r: inv_diag * r

    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return PCGResult(x=x, iterations=0, residual_norm=0.0, converged=True)

    threshold = tol * b_norm
    r = b.copy()
    z = apply_M(r)
    p = z.copy()
    rz = r @ z
    r_norm = b_norm

    for i in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            logger.warning("PCG: operator not positive definite (p^T A p = %g)", pAp)
            return PCGResult(x=x, iterations=i - 1, residual_norm=r_norm, converged=False)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        r_norm = np.linalg.norm(r)
        if r_norm <= threshold:
            return PCGResult(x=x, iterations=i, residual_norm=r_norm, converged=True)
        z = apply_M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    logger.warning("PCG: no convergence after %d iterations (residual %.3e, target %.3e)", max_iter, r_norm, threshold)
    return PCGResult(x=x, iterations=max_iter, residual_norm=r_norm, converged=False)


def block_jacobi(H: sparse.spmatrix, leading: int, block: int) -> LinearOperator:
    """Inverse of H's block diagonal: one `leading` x `leading` block, then `block` x `block` blocks.

    Blocks that fail to invert fall back to their diagonal.
    """
    H = sparse.csr_matrix(H)
    n = H.shape[0]
    if (n - leading) % block != 0:
        raise ValueError(f"dimension {n} does not split into {leading} + k*{block}")
    count = (n - leading) // block
    dense_diag = H.diagonal()

    head = None
    if leading:
        H_head = H[:leading, :leading].toarray()
        try:
            head = np.linalg.inv(H_head)
        except np.linalg.LinAlgError:
            head = np.diag(1.0 / dense_diag[:leading])

    blocks = np.zeros((count, block, block))
    if count:
        tail = H[leading:, leading:].tocoo()
        same = (tail.row // block) == (tail.col // block)
        blocks[tail.row[same] // block, tail.row[same] % block, tail.col[same] % block] = tail.data[same]
        try:
            blocks = np.linalg.inv(blocks)
        except np.linalg.LinAlgError:
            d = dense_diag[leading:].reshape(count, block)
            blocks = np.zeros((count, block, block))
            blocks[:, np.arange(block), np.arange(block)] = 1.0 / d

    def apply(r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        if leading:
            out[:leading] = head @ r[:leading]
        if count:
            out[leading:] = np.einsum("kab,kb->ka", blocks, r[leading:].reshape(count, block)).reshape(-1)
        return out

    return apply
