"""
Strong-constraint incremental 4D-Var with the control vector at the start
of the window.

Outer loop: nonlinear trajectory from the current guess, innovations
d_t = y_t - H G(s(t)). Inner loop: BiCGSTAB on

    (I + B sum_t M_t^T G^T H^T R^-1 H G M_t) ds = B sum_t M_t^T G^T H^T R^-1 d_t + ds_b

with M_t the chained one-step tangent operators and B = sigma_b^2 I.
The left side is the gradient of the incremental cost multiplied by B.
"""

import logging
from typing import Dict, List

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .base_forecaster import BaseForecaster
from .bicgstab import bicgstab

try:
    from ..exceptions import DivergenceError, NumericalError
    from ..models import ObsOperator, ObsWindow, VarConfig
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import DivergenceError, NumericalError
    from models import ObsOperator, ObsWindow, VarConfig

logger = logging.getLogger(__name__)


class TangentChain:
    """
    Tangent linear and adjoint chains along one nonlinear window trajectory.
    `trajectory[i]` is the state at offset i; the operator at index i maps
    perturbations at offset i to offset i + 1.
    """

    def __init__(self, forecaster: BaseForecaster, trajectory: List[np.ndarray]):
        self.forecaster = forecaster
        self.trajectory = trajectory
        self.operators: List[LinearOperator] = [forecaster.propagator(s) for s in trajectory[:-1]]

    @property
    def n_steps(self) -> int:
        return len(self.operators)

    def forward(self, v: np.ndarray, offsets: np.ndarray) -> Dict[int, np.ndarray]:
        """M_{[t,0]} v at each requested offset"""
        wanted = set(int(t) for t in offsets)
        out = {}
        x = np.asarray(v, dtype=np.float64)
        if 0 in wanted:
            out[0] = x.copy()
        for t, op in enumerate(self.operators, start=1):
            if t > max(wanted, default=0):
                break
            x = op.matvec(x)
            if t in wanted:
                out[t] = x.copy()
        return out

    def adjoint(self, forcings: Dict[int, np.ndarray]) -> np.ndarray:
        """sum_t M_{[t,0]}^T f_t accumulated backward in one sweep"""
        n = self.forecaster.state_dim
        last = max(forcings, default=0)
        lam = np.zeros(n)
        for t in range(last, -1, -1):
            if t in forcings:
                lam = lam + forcings[t]
            if t > 0:
                lam = self.operators[t - 1].rmatvec(lam)
        return lam


def _nonlinear_window(forecaster: BaseForecaster, s0: np.ndarray, n_steps: int) -> List[np.ndarray]:
    states = [np.asarray(s0, dtype=np.float64).copy()]
    for _ in range(n_steps):
        states.append(forecaster.advance(states[-1], 1))
    if not np.all(np.isfinite(states[-1])):
        raise DivergenceError("Non-finite 4D-Var window trajectory", step=n_steps)
    return states


def _innovations(obs_op: ObsOperator, states: List[np.ndarray], window: ObsWindow) -> Dict[int, np.ndarray]:
    return {int(t): window.values[:, j] - obs_op.apply(states[int(t)]) for j, t in enumerate(window.offsets)}


def _obs_cost(residuals: Dict[int, np.ndarray], r_diagonal: np.ndarray) -> float:
    return 0.5 * float(sum(np.sum(r ** 2 / r_diagonal) for r in residuals.values()))


def fourdvar_cost(forecaster: BaseForecaster, s0: np.ndarray, s_b0: np.ndarray, window: ObsWindow,
                  obs_op: ObsOperator, sigma_b: float) -> float:
    """Nonlinear cost J = J_b + J_o at initial state s0"""
    states = _nonlinear_window(forecaster, s0, window.last_offset)
    jb = 0.5 * float(np.sum((s0 - s_b0) ** 2)) / sigma_b ** 2
    return jb + _obs_cost(_innovations(obs_op, states, window), window.r_diagonal)


def fourdvar_analysis(forecaster: BaseForecaster, s_f0: np.ndarray, s_b0: np.ndarray,
                      window: ObsWindow, var_cfg: VarConfig, obs_op: ObsOperator) -> Dict[str, object]:
    """
    Incremental analysis at the window start.

    Returns:
        dict with 'analysis' (state at window start), 'trace' (one dict per
        outer loop) and 'final_cost'
    """
    s_f0 = np.asarray(s_f0, dtype=np.float64).copy()
    s_b0 = np.asarray(s_b0, dtype=np.float64)
    sigma_b2 = var_cfg.sigma_b ** 2
    r_diag = window.r_diagonal
    G = obs_op.readout
    trace: List[Dict[str, float]] = []

    def obs_to_state(residual: np.ndarray) -> np.ndarray:
        """G^T H^T R^-1 residual"""
        in_system = np.zeros(obs_op.system_dim)
        in_system[obs_op.obs_indices] = residual / r_diag
        return in_system if G is None else G.T @ in_system

    for outer in range(var_cfg.outer_loops):
        states = _nonlinear_window(forecaster, s_f0, window.last_offset)
        innovations = _innovations(obs_op, states, window)
        background_increment = s_b0 - s_f0
        cost_before = (0.5 * float(np.sum(background_increment ** 2)) / sigma_b2
                       + _obs_cost(innovations, r_diag))

        chain = TangentChain(forecaster, states)

        def tangent_obs(v: np.ndarray) -> Dict[int, np.ndarray]:
            return {t: obs_op.apply(x) for t, x in chain.forward(v, window.offsets).items()}

        def apply_A(v: np.ndarray) -> np.ndarray:
            forcings = {t: obs_to_state(hv) for t, hv in tangent_obs(v).items()}
            return v + sigma_b2 * chain.adjoint(forcings)

        b = sigma_b2 * chain.adjoint({t: obs_to_state(d) for t, d in innovations.items()}) + background_increment
        gradient_norm_initial = float(np.linalg.norm(b)) / sigma_b2

        try:
            solve = bicgstab(apply_A, b, tol=var_cfg.inner_tol, max_iter=var_cfg.inner_max_iter)
        except NumericalError as e:
            logger.warning(f"Inner solve failed in outer loop {outer}: {e}; keeping the current guess")
            solve = None

        increment = np.zeros_like(s_f0) if solve is None else solve.x
        residual = b - apply_A(increment)
        linear_residuals = {t: hv - innovations[t] for t, hv in tangent_obs(increment).items()}
        cost_linearized = (0.5 * float(np.sum((increment - background_increment) ** 2)) / sigma_b2
                           + _obs_cost(linear_residuals, r_diag))

        trace.append({
            'outer': outer,
            'cost_before': cost_before,
            'cost_linearized': cost_linearized,
            'iterations': 0 if solve is None else solve.iterations,
            'residual': float(np.linalg.norm(residual)),
            'converged': bool(solve is not None and solve.converged),
            'gradient_norm': float(np.linalg.norm(residual)) / sigma_b2,
            'gradient_norm_initial': gradient_norm_initial,
        })
        logger.debug(
            f"4D-Var outer {outer}: J={cost_before:.4e} -> {cost_linearized:.4e}, "
            f"{trace[-1]['iterations']} inner iterations"
        )
        s_f0 = s_f0 + increment

    final_cost = fourdvar_cost(forecaster, s_f0, s_b0, window, obs_op, var_cfg.sigma_b)
    return {'analysis': s_f0, 'trace': trace, 'final_cost': final_cost}
