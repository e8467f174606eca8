"""
Reservoir-style recurrent forecast model.

    s(t+1) = l * tanh(rho W_res s(t) + sigma W_in x(t)) + (1 - l) s(t)
    x'(t+1) = W_out s(t+1)

Hidden trajectories are stored column-per-step (N x T). Training streams the
normal equations so the full N x T hidden matrix never has to be materialized.
"""

import dataclasses
import logging
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

try:
    from .exceptions import DivergenceError, InitializationError, InvalidDimensionError, NotTrainedError, NumericalError
    from .models import MacroParams, ReservoirModel, Trajectory
except ImportError:
    from exceptions import DivergenceError, InitializationError, InvalidDimensionError, NotTrainedError, NumericalError
    from models import MacroParams, ReservoirModel, Trajectory

logger = logging.getLogger(__name__)

DEFAULT_DENSITY = 0.01
DEFAULT_WASHOUT = 1000
SPECTRAL_TOL = 1e-8
SPECTRAL_MAX_ITER = 10_000
MAX_INIT_ATTEMPTS = 5


def _spectral_radius(W: sp.csr_matrix) -> float:
    """Magnitude of the dominant eigenvalue"""
    n = W.shape[0]
    if n < 16:
        return float(np.max(np.abs(np.linalg.eigvals(W.toarray()))))
    vals = eigs(W, k=1, which='LM', tol=SPECTRAL_TOL, maxiter=SPECTRAL_MAX_ITER, return_eigenvectors=False)
    return float(np.abs(vals[0]))


def _random_reservoir(N: int, density: float, rng: np.random.Generator) -> sp.csr_matrix:
    W = sp.random(N, N, density=density, format='csr', random_state=rng,
                  data_rvs=lambda size: rng.uniform(-1.0, 1.0, size))
    W.sum_duplicates()
    return W


def init_reservoir(N: int, D_in: int, D_out: int, density: float = DEFAULT_DENSITY,
                   seed: int = 0, macro: Optional[MacroParams] = None) -> ReservoirModel:
    """
    Untrained reservoir: sparse W_res with uniform entries centred at 0,
    rescaled to unit spectral radius, and W_in uniform on [-1, 1].
    """
    if N <= 0:
        raise ValueError(f"Hidden dimension must be positive, got {N}")
    if not 0 < density <= 1:
        raise ValueError(f"Density must lie in (0, 1], got {density}")

    macro = macro or MacroParams(rho=1.0, sigma_in=1.0, leak=1.0, tikhonov=1e-8)

    for attempt in range(MAX_INIT_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        W_res = _random_reservoir(N, density, rng)
        try:
            radius = _spectral_radius(W_res)
        except ArpackNoConvergence as e:
            logger.warning(f"Spectral radius did not converge (seed {seed}, offset {attempt}): {e}")
            continue
        if not np.isfinite(radius) or radius <= 1e-12:
            logger.warning(f"Degenerate reservoir (radius={radius}) for seed {seed}, offset {attempt}")
            continue

        W_res = (W_res / radius).tocsr()
        W_in = rng.uniform(-1.0, 1.0, size=(N, D_in))
        logger.info(f"Initialized reservoir N={N}, D_in={D_in}, D_out={D_out}, nnz={W_res.nnz}")
        return ReservoirModel(W_res=W_res, W_in=W_in, macro=macro, W_out=None, d_out=D_out, seed=seed)

    raise InitializationError(f"Could not build a reservoir with unit spectral radius for seed {seed}")


def step_hidden(model: ReservoirModel, s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One recurrence step; s may be N or N x k with x D_in or D_in x k"""
    m = model.macro
    pre = m.rho * (model.W_res @ s) + m.sigma_in * (model.W_in @ x)
    return m.leak * np.tanh(pre) + (1.0 - m.leak) * s


def readout(model: ReservoirModel, s: np.ndarray) -> np.ndarray:
    if model.W_out is None:
        raise NotTrainedError("Readout requested from an untrained reservoir")
    return model.W_out @ s


def closed_loop_step(model: ReservoirModel, s: np.ndarray) -> np.ndarray:
    """Advance hidden state(s) feeding the readout back as input"""
    return step_hidden(model, s, readout(model, s))


def _check_driving(model: ReservoirModel, driving: Trajectory) -> None:
    if driving.dim != model.d_in:
        raise InvalidDimensionError(f"Driving dimension {driving.dim} does not match D_in={model.d_in}")


def synchronize(model: ReservoirModel, driving: Trajectory, s0: Optional[np.ndarray] = None) -> Trajectory:
    """
    Input-driven (open-loop) recurrence. Column i is s(t_i), built from inputs up to
    x(t_{i-1}); column 0 is s0 (zero by default).
    """
    _check_driving(model, driving)
    s = np.zeros(model.n_hidden) if s0 is None else np.asarray(s0, dtype=np.float64).copy()
    hidden = np.empty((model.n_hidden, driving.n_times))
    hidden[:, 0] = s
    for i in range(1, driving.n_times):
        s = step_hidden(model, s, driving.states[:, i - 1])
        hidden[:, i] = s
    return Trajectory(hidden, driving.dt, driving.t0)


def synchronize_final(model: ReservoirModel, driving: np.ndarray, s0: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Final hidden state after consuming every column of `driving`
    (D_in x T, or D_in x T x k for k members at once).
    """
    driving = np.asarray(driving, dtype=np.float64)
    shape = (model.n_hidden,) + driving.shape[2:]
    s = np.zeros(shape) if s0 is None else np.asarray(s0, dtype=np.float64).copy()
    for i in range(driving.shape[1]):
        s = step_hidden(model, s, driving[:, i])
    return s


def iterate_hidden(model: ReservoirModel, driving: Trajectory, s0: Optional[np.ndarray] = None,
                   chunk: int = 2000) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (first column index, N x c block) of the synchronized hidden trajectory"""
    _check_driving(model, driving)
    s = np.zeros(model.n_hidden) if s0 is None else np.asarray(s0, dtype=np.float64).copy()
    T = driving.n_times
    start = 0
    while start < T:
        stop = min(start + chunk, T)
        block = np.empty((model.n_hidden, stop - start))
        for j, i in enumerate(range(start, stop)):
            if i > 0:
                s = step_hidden(model, s, driving.states[:, i - 1])
            block[:, j] = s
        yield start, block
        start = stop


def train_readout(S_data: np.ndarray, X_data: np.ndarray, beta: float) -> np.ndarray:
    """
    Ridge solution W_out = X S^T (S S^T + beta I)^-1 via a Cholesky solve.
    Minimizes ||W S - X||^2 + beta ||W||^2.
    """
    S_data = np.asarray(S_data, dtype=np.float64)
    X_data = np.asarray(X_data, dtype=np.float64)
    return solve_readout(S_data @ S_data.T, X_data @ S_data.T, beta)


def solve_readout(gram: np.ndarray, cross: np.ndarray, beta: float) -> np.ndarray:
    """W_out from accumulated S S^T and X S^T"""
    if not beta > 0:
        raise ValueError(f"Tikhonov parameter must be positive, got {beta}")
    system = gram + beta * np.eye(gram.shape[0])
    try:
        factor = la.cho_factor(system, lower=True, check_finite=True)
        W_out_T = la.cho_solve(factor, cross.T, check_finite=False)
    except (la.LinAlgError, ValueError) as e:
        raise NumericalError(f"Readout factorization failed ({e}); try a larger Tikhonov parameter") from e
    return W_out_T.T


def readout_normal_equations(model: ReservoirModel, driving: Trajectory, washout: int = DEFAULT_WASHOUT,
                             target: Optional[Trajectory] = None,
                             collect: Sequence[int] = ()) -> Dict[str, np.ndarray]:
    """
    Stream the synchronized hidden trajectory and accumulate S S^T and X S^T
    over columns >= washout. Targets default to the driving data itself.
    Hidden states at the `collect` column indices are returned as well.
    """
    target = target or driving
    if target.n_times != driving.n_times:
        raise InvalidDimensionError("Target and driving trajectories must have equal length")
    if washout >= driving.n_times:
        raise ValueError(f"Washout {washout} leaves no training data (T={driving.n_times})")

    N = model.n_hidden
    gram = np.zeros((N, N))
    cross = np.zeros((target.dim, N))
    wanted = {int(c): pos for pos, c in enumerate(collect)}
    collected = np.empty((N, len(wanted)))

    for start, block in iterate_hidden(model, driving):
        stop = start + block.shape[1]
        for col, pos in wanted.items():
            if start <= col < stop:
                collected[:, pos] = block[:, col - start]
        lo = max(washout, start)
        if lo >= stop:
            continue
        S = block[:, lo - start:]
        if not np.all(np.isfinite(S)):
            raise DivergenceError(f"Hidden state became non-finite near step {lo}", step=lo)
        gram += S @ S.T
        cross += target.states[:, lo:stop] @ S.T

    return {'gram': gram, 'cross': cross, 'collected': collected}


def fit_readout(model: ReservoirModel, driving: Trajectory, washout: int = DEFAULT_WASHOUT,
                target: Optional[Trajectory] = None) -> ReservoirModel:
    """Train W_out at the model's own Tikhonov parameter; returns a new trained model"""
    eqs = readout_normal_equations(model, driving, washout, target)
    W_out = solve_readout(eqs['gram'], eqs['cross'], model.macro.tikhonov)
    logger.info(f"Trained readout on {driving.n_times - washout} steps (beta={model.macro.tikhonov:.3e})")
    return dataclasses.replace(model, W_out=W_out, d_out=W_out.shape[0])


def free_forecast(model: ReservoirModel, s0: np.ndarray, x0: np.ndarray, n_steps: int,
                  dt: float = 0.01, t0: float = 0.0) -> Dict[str, Trajectory]:
    """
    Closed-loop forecast: the first step consumes x0, later steps consume
    the network's own readout. Returns system and hidden trajectories,
    each with n_steps + 1 columns starting at (x0, s0).
    """
    if model.d_in != model.d_out:
        raise InvalidDimensionError("Closed-loop forecasting needs D_in == D_out")
    s = np.asarray(s0, dtype=np.float64).copy()
    x = np.asarray(x0, dtype=np.float64).copy()
    hidden = np.empty((model.n_hidden, n_steps + 1))
    states = np.empty((model.d_out, n_steps + 1))
    hidden[:, 0] = s
    states[:, 0] = x

    for step in range(1, n_steps + 1):
        s = step_hidden(model, s, x)
        x = readout(model, s)
        if not np.all(np.isfinite(s)):
            raise DivergenceError(f"Free forecast diverged at step {step}", step=step)
        hidden[:, step] = s
        states[:, step] = x

    return {'states': Trajectory(states, dt, t0), 'hidden': Trajectory(hidden, dt, t0)}


def combined_matrix(model: ReservoirModel) -> LinearOperator:
    """W = rho W_res + sigma W_in W_out, applied matrix-free"""
    if model.W_out is None:
        raise NotTrainedError("The combined matrix needs a trained readout")
    m = model.macro
    W_res, W_in, W_out = model.W_res, model.W_in, model.W_out
    W_res_T = model.W_res_T

    def matmat(V):
        return m.rho * (W_res @ V) + m.sigma_in * (W_in @ (W_out @ V))

    def rmatmat(U):
        return m.rho * (W_res_T @ U) + m.sigma_in * (W_out.T @ (W_in.T @ U))

    N = model.n_hidden
    return LinearOperator(
        (N, N), dtype=np.float64,
        matvec=lambda v: matmat(np.ravel(v)), rmatvec=lambda u: rmatmat(np.ravel(u)),
        matmat=matmat, rmatmat=rmatmat,
    )


def rnn_propagator(model: ReservoirModel, s: np.ndarray) -> LinearOperator:
    """
    Closed-loop tangent linear model at hidden state s:
        M = l diag(1 - tanh^2(W s)) W + (1 - l) I
    with its adjoint as rmatvec.
    """
    W = combined_matrix(model)
    leak = model.macro.leak
    slope = leak * (1.0 - np.tanh(W.matvec(np.asarray(s, dtype=np.float64))) ** 2)

    def matmat(V):
        V = np.asarray(V, dtype=np.float64)
        scale = slope if V.ndim == 1 else slope[:, None]
        return scale * W.matmat(V.reshape(V.shape[0], -1)).reshape(V.shape) + (1.0 - leak) * V

    def rmatmat(U):
        U = np.asarray(U, dtype=np.float64)
        scale = slope if U.ndim == 1 else slope[:, None]
        weighted = (scale * U).reshape(U.shape[0], -1)
        return W.rmatmat(weighted).reshape(U.shape) + (1.0 - leak) * U

    N = model.n_hidden
    return LinearOperator(
        (N, N), dtype=np.float64,
        matvec=lambda v: matmat(np.ravel(v)), rmatvec=lambda u: rmatmat(np.ravel(u)),
        matmat=matmat, rmatmat=rmatmat,
    )
