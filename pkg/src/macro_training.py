"""
Macro-scale training: Bayesian optimization (Kriging surrogate + expected
improvement) of a long-forecast loss over rho, sigma_in, leak and log(beta).
"""

import dataclasses
import logging
import warnings
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel

try:
    from .exceptions import DivergenceError, MacroTrainingError, NumericalError, SurrogateError
    from .metrics import climatological_std
    from .models import EGOBudget, MacroLossSpec, MacroParams, SurrogateState, Trajectory
    from .reservoir import free_forecast, init_reservoir, readout_normal_equations, solve_readout
except ImportError:
    from exceptions import DivergenceError, MacroTrainingError, NumericalError, SurrogateError
    from metrics import climatological_std
    from models import EGOBudget, MacroLossSpec, MacroParams, SurrogateState, Trajectory
    from reservoir import free_forecast, init_reservoir, readout_normal_equations, solve_readout

logger = logging.getLogger(__name__)

# Order of the search coordinates
MACRO_KEYS = ('sigma_in', 'leak', 'rho', 'log_tikhonov')
JITTER_LEVELS = (1e-10, 1e-6)
DIVERGENCE_SCALE = 10.0


def loss_weights(N: int) -> np.ndarray:
    """exp(-j / N) for lead j = 0..N: 1 at the forecast start, exp(-1) at its end"""
    if N < 1:
        raise ValueError("Forecast length must be at least 1")
    return np.exp(-np.arange(N + 1) / N)


def divergence_penalty(N: int, sigma_clim: np.ndarray) -> float:
    """Loss charged for one diverged N-step forecast"""
    return float(N * np.sum((DIVERGENCE_SCALE * np.asarray(sigma_clim)) ** 2))


def weighted_forecast_loss(forecasts: Sequence[np.ndarray], truths: Sequence[np.ndarray],
                           sigma_clim: Optional[np.ndarray] = None) -> float:
    """
    Sum over forecasts and leads of ||x_f - x||^2 weighted by exp(-j/N).
    Each forecast and truth is D x (N + 1), column 0 at the forecast start.
    Non-finite forecasts are charged the divergence penalty when sigma_clim
    is given; the total is capped at M times that penalty.
    """
    total = 0.0
    N = None
    for forecast, truth in zip(forecasts, truths):
        forecast = np.asarray(forecast, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        N = forecast.shape[1] - 1
        if not np.all(np.isfinite(forecast)):
            if sigma_clim is None:
                return float('inf')
            total += divergence_penalty(N, sigma_clim)
            continue
        total += float(np.sum(np.sum((forecast - truth) ** 2, axis=0) * loss_weights(N)))

    if sigma_clim is not None and N is not None:
        total = min(total, len(forecasts) * divergence_penalty(N, sigma_clim))
    return total


def sample_start_indices(n_times: int, spec: MacroLossSpec) -> np.ndarray:
    """
    M distinct forecast start columns drawn without replacement from
    non-overlapping (N + 1)-column slots after the washout.
    """
    slots = np.arange(spec.washout, n_times - spec.N, spec.N + 1)
    if slots.size < spec.M:
        raise ValueError(
            f"Training set of {n_times} steps holds {slots.size} non-overlapping "
            f"{spec.N}-step forecasts after washout; {spec.M} requested"
        )
    rng = np.random.default_rng(spec.seed)
    return np.sort(rng.choice(slots, size=spec.M, replace=False))


def macro_loss(macro: MacroParams, train: Trajectory, spec: MacroLossSpec,
               start_indices: Optional[np.ndarray] = None,
               sigma_clim: Optional[np.ndarray] = None) -> float:
    """
    Fresh reservoir (fixed seed) with readout trained at the candidate beta,
    then M free forecasts scored by the weighted long-range loss.
    """
    sigma_clim = climatological_std(train) if sigma_clim is None else sigma_clim
    starts = sample_start_indices(train.n_times, spec) if start_indices is None else np.asarray(start_indices)
    cap = spec.M * divergence_penalty(spec.N, sigma_clim)

    model = init_reservoir(spec.n_hidden, train.dim, train.dim, spec.density, spec.model_seed, macro)
    try:
        eqs = readout_normal_equations(model, train, spec.washout, collect=starts)
        W_out = solve_readout(eqs['gram'], eqs['cross'], macro.tikhonov)
    except (DivergenceError, NumericalError) as e:
        logger.warning(f"Candidate {macro.as_dict()} failed during training: {e}")
        return cap

    model = dataclasses.replace(model, W_out=W_out, d_out=W_out.shape[0])

    forecasts, truths = [], []
    for pos, start in enumerate(starts):
        truth = train.states[:, start:start + spec.N + 1]
        try:
            run = free_forecast(model, eqs['collected'][:, pos], train.states[:, start], spec.N, train.dt)
            forecasts.append(run['states'].states)
        except DivergenceError:
            forecasts.append(np.full_like(truth, np.nan))
        truths.append(truth)

    loss = weighted_forecast_loss(forecasts, truths, sigma_clim)
    logger.debug(f"Macro loss {loss:.6e} at {macro.as_dict()}")
    return min(loss, cap)


def fit_surrogate(points: np.ndarray, values: np.ndarray, seed: int = 0,
                  optimize_kernel: bool = True, kernel=None) -> SurrogateState:
    """
    Gaussian-process (Kriging) fit with an anisotropic squared-exponential
    kernel. Hyperparameters maximize the marginal likelihood; the nugget
    escalates from 1e-10 to 1e-6 before giving up.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.asarray(values, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise SurrogateError(f"{X.shape[0]} points but {y.size} values")
    if np.unique(X, axis=0).shape[0] < 2:
        raise SurrogateError("Surrogate needs at least two distinct points")
    if not np.all(np.isfinite(y)):
        raise SurrogateError("Surrogate values must be finite")

    if kernel is None:
        kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(
            length_scale=np.ones(X.shape[1]), length_scale_bounds=(1e-3, 1e3)
        )

    last_error = None
    for jitter in JITTER_LEVELS:
        regressor = GaussianProcessRegressor(
            kernel=kernel,
            alpha=jitter,
            normalize_y=True,
            optimizer='fmin_l_bfgs_b' if optimize_kernel else None,
            n_restarts_optimizer=3 if optimize_kernel else 0,
            random_state=seed,
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter('ignore', ConvergenceWarning)
                regressor.fit(X, y)
        except (np.linalg.LinAlgError, ValueError) as e:
            last_error = e
            logger.warning(f"Surrogate fit failed with jitter {jitter:g}: {e}")
            continue
        return SurrogateState(
            points=X, values=y, regressor=regressor, jitter=jitter,
            kernel_params={'kernel': str(regressor.kernel_),
                           'log_marginal_likelihood': float(regressor.log_marginal_likelihood_value_)},
        )

    raise SurrogateError(f"Kernel matrix not positive definite after jitter {JITTER_LEVELS[-1]:g}: {last_error}")


def expected_improvement(surrogate: SurrogateState, points: np.ndarray, best_value: float) -> np.ndarray:
    """
    Closed-form EI for minimization, (best - mu) Phi(z) + sd phi(z) with
    z = (best - mu) / sd; zero where the predictive sd vanishes.
    """
    mean, std = surrogate.predict(points)
    ei = np.zeros_like(mean)
    positive = std > 1e-12
    z = (best_value - mean[positive]) / std[positive]
    ei[positive] = (best_value - mean[positive]) * norm.cdf(z) + std[positive] * norm.pdf(z)
    return np.maximum(ei, 0.0)


def _propose(surrogate: SurrogateState, best_value: float, budget: EGOBudget,
             rng: np.random.Generator) -> np.ndarray:
    """EI maximizer in the unit box from n_starts random points, best n_polish refined by L-BFGS-B"""
    d = surrogate.points.shape[1]
    starts = rng.uniform(size=(budget.n_starts, d))
    start_ei = expected_improvement(surrogate, starts, best_value)
    order = np.argsort(-start_ei)[:budget.n_polish]

    best_u, best_ei = starts[order[0]], start_ei[order[0]]
    for idx in order:
        res = minimize(
            lambda u: -expected_improvement(surrogate, u[None, :], best_value)[0],
            starts[idx], method='L-BFGS-B', bounds=[(0.0, 1.0)] * d,
        )
        if res.success or np.isfinite(res.fun):
            if -res.fun > best_ei:
                best_u, best_ei = np.clip(res.x, 0.0, 1.0), -res.fun

    if best_ei <= 0.0 or np.min(np.linalg.norm(surrogate.points - best_u, axis=1)) < 1e-9:
        best_u = rng.uniform(size=d)
    return best_u


def ego_minimize(objective: Callable[[np.ndarray], float], bounds: np.ndarray,
                 budget: Optional[EGOBudget] = None, seed: int = 0, n_jobs: int = 1,
                 param_names: Optional[Sequence[str]] = None) -> Dict[str, object]:
    """
    Efficient global optimization over a box.

    Latin-hypercube initial design, then per iteration a batch of points
    chosen by maximizing EI with the kriging-believer heuristic, evaluated
    concurrently.

    Returns:
        dict with best_x, best_value and a history DataFrame
        (iteration, candidate, parameters, loss, incumbent)
    """
    budget = budget or EGOBudget()
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, span = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    d = bounds.shape[0]
    names = list(param_names) if param_names else [f"x{i}" for i in range(d)]
    rng = np.random.default_rng(seed)

    def to_box(u: np.ndarray) -> np.ndarray:
        return lo + u * span

    U = qmc.LatinHypercube(d=d, seed=rng).random(budget.n_initial)
    values = np.asarray(Parallel(n_jobs=n_jobs)(delayed(objective)(to_box(u)) for u in U), dtype=np.float64)
    rows: List[Dict[str, float]] = []
    incumbent = np.inf

    def log_rows(iteration: int, batch_u: np.ndarray, batch_values: np.ndarray) -> None:
        nonlocal incumbent
        for c, (u, v) in enumerate(zip(batch_u, batch_values)):
            if np.isfinite(v):
                incumbent = min(incumbent, v)
            rows.append({'iteration': iteration, 'candidate': c,
                         **dict(zip(names, to_box(u))), 'loss': v, 'incumbent': incumbent})

    log_rows(0, U, values)

    for iteration in range(1, budget.n_iter + 1):
        finite = np.isfinite(values)
        if finite.sum() < 2:
            raise MacroTrainingError("Fewer than two finite evaluations; cannot fit a surrogate",
                                     history=pd.DataFrame(rows))
        fill = np.where(finite, values, values[finite].max())
        surrogate = fit_surrogate(U, fill, seed=seed)
        best = float(fill.min())

        believer_U, believer_y = U.copy(), fill.copy()
        batch = []
        for _ in range(budget.batch_size):
            u_next = _propose(surrogate, best, budget, rng)
            batch.append(u_next)
            believed = surrogate.predict(u_next[None, :])[0][0]
            believer_U = np.vstack([believer_U, u_next])
            believer_y = np.append(believer_y, believed)
            surrogate = fit_surrogate(believer_U, believer_y, seed=seed, optimize_kernel=False,
                                      kernel=surrogate.regressor.kernel_)
        batch = np.vstack(batch)

        batch_values = np.asarray(
            Parallel(n_jobs=n_jobs)(delayed(objective)(to_box(u)) for u in batch), dtype=np.float64
        )
        U = np.vstack([U, batch])
        values = np.append(values, batch_values)
        log_rows(iteration, batch, batch_values)
        logger.info(f"EGO iteration {iteration}/{budget.n_iter}: batch best {np.nanmin(batch_values):.6g}, "
                    f"incumbent {incumbent:.6g}")

    if not np.any(np.isfinite(values)):
        raise MacroTrainingError("Every candidate evaluation failed", history=pd.DataFrame(rows))
    best_idx = int(np.nanargmin(np.where(np.isfinite(values), values, np.nan)))
    return {'best_x': to_box(U[best_idx]), 'best_value': float(values[best_idx]), 'history': pd.DataFrame(rows)}


def _vector_to_macro(x: np.ndarray) -> MacroParams:
    params = dict(zip(MACRO_KEYS, x))
    return MacroParams(rho=float(params['rho']), sigma_in=float(params['sigma_in']),
                       leak=float(params['leak']), tikhonov=float(np.exp(params['log_tikhonov'])))


def optimize_macro(train: Trajectory, spec: MacroLossSpec, budget: Optional[EGOBudget] = None,
                   n_jobs: int = 1) -> Dict[str, object]:
    """
    Bayesian optimization of the macro loss. Start times are drawn once and
    shared by every candidate; beta is searched in log space.
    """
    sigma_clim = climatological_std(train)
    starts = sample_start_indices(train.n_times, spec)
    bounds = np.array([spec.bounds[key] for key in MACRO_KEYS])
    cap = spec.M * divergence_penalty(spec.N, sigma_clim)

    def objective(x: np.ndarray) -> float:
        return macro_loss(_vector_to_macro(x), train, spec, starts, sigma_clim)

    logger.info(f"Optimizing macro parameters: M={spec.M}, N={spec.N}, hidden={spec.n_hidden}")
    result = ego_minimize(objective, bounds, budget, seed=spec.seed, n_jobs=n_jobs, param_names=MACRO_KEYS)
    history = result['history']
    if np.all(history['loss'] >= cap):
        raise MacroTrainingError("Every candidate forecast diverged", history=history)

    macro = _vector_to_macro(result['best_x'])
    logger.info(f"Best macro parameters {macro.as_dict()} with loss {result['best_value']:.6e}")
    return {'macro': macro, 'loss': result['best_value'], 'history': history}


def macro_loss_landscape(train: Trajectory, spec: MacroLossSpec, sigma_grid: Sequence[float],
                         rho_grid: Sequence[float], M_values: Sequence[int], seeds: Sequence[int],
                         leak: float, log_tikhonov: float, n_jobs: int = 1) -> pd.DataFrame:
    """Macro loss over a (sigma_in, rho) grid for several M and start-time seeds"""
    sigma_clim = climatological_std(train)
    tasks = []
    for M in M_values:
        for seed in seeds:
            run_spec = dataclasses.replace(spec, M=int(M), seed=int(seed))
            starts = sample_start_indices(train.n_times, run_spec)
            for sigma_in in sigma_grid:
                for rho in rho_grid:
                    macro = MacroParams(rho=float(rho), sigma_in=float(sigma_in), leak=leak,
                                        tikhonov=float(np.exp(log_tikhonov)))
                    tasks.append((M, seed, macro, run_spec, starts))

    logger.info(f"Evaluating {len(tasks)} landscape points")
    losses = Parallel(n_jobs=n_jobs)(
        delayed(macro_loss)(macro, train, run_spec, starts, sigma_clim) for _, _, macro, run_spec, starts in tasks
    )
    return pd.DataFrame([
        {'M': M, 'seed': seed, 'sigma_in': macro.sigma_in, 'rho': macro.rho, 'loss': loss,
         'loss_per_forecast': loss / M}
        for (M, seed, macro, _, _), loss in zip(tasks, losses)
    ])


def landscape_seed_variance(landscape: pd.DataFrame) -> pd.Series:
    """Mean over the grid of the across-seed variance of the per-forecast loss, indexed by M"""
    per_point = landscape.groupby(['M', 'sigma_in', 'rho'])['loss_per_forecast'].var(ddof=0)
    return per_point.groupby(level='M').mean()
