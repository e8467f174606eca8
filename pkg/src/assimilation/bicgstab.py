"""
Matrix-free BiCGSTAB (van der Vorst) for the non-symmetric inner-loop systems.
"""

import logging
from typing import Callable, Optional, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator

try:
    from ..exceptions import NumericalError
    from ..models import SolveResult
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import NumericalError
    from models import SolveResult

logger = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-30

Operator = Union[Callable[[np.ndarray], np.ndarray], LinearOperator, np.ndarray]


class _Breakdown(Exception):
    def __init__(self, reason: str, x: np.ndarray, iterations: int):
        super().__init__(reason)
        self.x = x
        self.iterations = iterations


def _as_callable(apply_A: Operator) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(apply_A, LinearOperator):
        return apply_A.matvec
    if isinstance(apply_A, np.ndarray):
        return lambda v: apply_A @ v
    return apply_A


def _iterate(apply: Callable, b: np.ndarray, x: np.ndarray, r_hat: np.ndarray,
             tol_abs: float, max_iter: int, start_iter: int):
    """Run BiCGSTAB from x; returns (x, residual_norm, iterations, converged, best_x, best_res)"""
    r = b - apply(x)
    r_norm = np.linalg.norm(r)
    best_x, best_res = x.copy(), r_norm
    if r_norm <= tol_abs:
        return x, r_norm, start_iter, True, best_x, best_res

    rho_old = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    it = start_iter
    while it < max_iter:
        it += 1
        rho = np.dot(r_hat, r)
        if abs(rho) < BREAKDOWN_TOL:
            raise _Breakdown('rho', best_x, it)
        if it == start_iter + 1:
            p = r.copy()
        else:
            p = r + (rho / rho_old) * (alpha / omega) * (p - omega * v)

        v = apply(p)
        r_hat_v = np.dot(r_hat, v)
        if abs(r_hat_v) < BREAKDOWN_TOL:
            raise _Breakdown('alpha', best_x, it)
        alpha = rho / r_hat_v
        s = r - alpha * v

        s_norm = np.linalg.norm(s)
        if s_norm <= tol_abs:
            x = x + alpha * p
            return x, s_norm, it, True, x, s_norm

        t = apply(s)
        t_dot_t = np.dot(t, t)
        if t_dot_t == 0.0:
            raise _Breakdown('omega', best_x, it)
        omega = np.dot(t, s) / t_dot_t
        if abs(omega) < BREAKDOWN_TOL:
            raise _Breakdown('omega', best_x, it)

        x = x + alpha * p + omega * s
        r = s - omega * t
        r_norm = np.linalg.norm(r)
        if not np.isfinite(r_norm):
            raise _Breakdown('non-finite residual', best_x, it)
        if r_norm < best_res:
            best_x, best_res = x.copy(), r_norm
        logger.debug(f"BiCGSTAB iteration {it}: residual {r_norm:.3e}")
        if r_norm <= tol_abs:
            return x, r_norm, it, True, x, r_norm
        rho_old = rho

    return x, r_norm, it, False, best_x, best_res


def bicgstab(apply_A: Operator, b: np.ndarray, tol: float = 1e-6, max_iter: int = 500,
             x0: Optional[np.ndarray] = None, seed: int = 0) -> SolveResult:
    """
    Solve A x = b until ||b - A x|| <= tol ||b|| or max_iter is reached.
    On breakdown the iteration restarts once from the best iterate with a
    perturbed shadow residual; a second breakdown raises NumericalError.
    Non-convergence returns the best iterate with converged=False.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    b = np.asarray(b, dtype=np.float64).ravel()
    apply = _as_callable(apply_A)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return SolveResult(np.zeros_like(b), 0.0, 0, True)

    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    tol_abs = tol * b_norm
    r_hat = b - apply(x)

    try:
        x, res, its, converged, best_x, best_res = _iterate(apply, b, x, r_hat, tol_abs, max_iter, 0)
        restarted = False
    except _Breakdown as first:
        logger.warning(f"BiCGSTAB {first} breakdown at iteration {first.iterations}; restarting")
        rng = np.random.default_rng(seed)
        x = first.x
        r0 = b - apply(x)
        r_hat = r0 + 1e-3 * np.linalg.norm(r0) * rng.standard_normal(r0.shape) / np.sqrt(r0.size)
        try:
            x, res, its, converged, best_x, best_res = _iterate(
                apply, b, x, r_hat, tol_abs, max_iter, first.iterations
            )
        except _Breakdown as second:
            raise NumericalError(
                f"BiCGSTAB broke down twice ({first}, then {second}) after {second.iterations} iterations"
            )
        restarted = True

    if not converged:
        logger.warning(f"BiCGSTAB did not converge in {its} iterations (relative residual {best_res / b_norm:.3e})")
        return SolveResult(best_x, float(best_res), its, False, restarted)
    return SolveResult(x, float(res), its, True, restarted)
