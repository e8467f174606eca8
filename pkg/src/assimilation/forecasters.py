import logging
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .base_forecaster import BaseForecaster

try:
    from ..exceptions import DivergenceError, NotTrainedError
    from ..l96_model import DEFAULT_FORCING, l96_linear_propagator, rk4_step
    from ..models import ReservoirModel, Trajectory
    from ..reservoir import closed_loop_step, rnn_propagator, step_hidden, synchronize_final
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import DivergenceError, NotTrainedError
    from l96_model import DEFAULT_FORCING, l96_linear_propagator, rk4_step
    from models import ReservoirModel, Trajectory
    from reservoir import closed_loop_step, rnn_propagator, step_hidden, synchronize_final

logger = logging.getLogger(__name__)


def _check_finite(states: np.ndarray, step: int, label: str) -> None:
    if not np.all(np.isfinite(states)):
        raise DivergenceError(f"{label} forecast became non-finite at step {step}", step=step)


class L96Forecaster(BaseForecaster):
    """Perfect-model baseline: the state is the L96 system vector itself"""

    def __init__(self, D: int, dt: float = 0.01, forcing: float = DEFAULT_FORCING):
        self.system_dim = D
        self.dt = dt
        self.forcing = forcing

    @property
    def state_dim(self) -> int:
        return self.system_dim

    def advance(self, states: np.ndarray, n_steps: int) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        for step in range(1, n_steps + 1):
            x = rk4_step(x, self.dt, self.forcing)
            _check_finite(x, step, 'L96')
        return x

    def step_driven(self, states: np.ndarray, system_input: np.ndarray) -> np.ndarray:
        x = rk4_step(np.asarray(system_input, dtype=np.float64), self.dt, self.forcing)
        _check_finite(x, 1, 'L96')
        return x

    def readout_operator(self):
        return None

    def propagator(self, state: np.ndarray) -> LinearOperator:
        return l96_linear_propagator(state, self.dt, self.forcing)

    def initial_ensemble(self, nature: Trajectory, start_step: int, k: int, sigma_init: float,
                         spinup: int, rng: np.random.Generator,
                         offset: Optional[np.ndarray] = None) -> np.ndarray:
        self._check_spinup_window(nature, start_step, 0)
        truth = nature.states[:, start_step]
        members = truth[:, None] + rng.normal(0.0, sigma_init, size=(self.system_dim, k))
        if offset is not None:
            members += np.asarray(offset)[:, None]
        return members


class ReservoirForecaster(BaseForecaster):
    """Trained network run in closed loop; the state is its hidden vector"""

    def __init__(self, model: ReservoirModel, dt: float = 0.01):
        if not model.is_trained:
            raise NotTrainedError("Forecasting needs a trained readout")
        self.model = model
        self.system_dim = model.d_out
        self.dt = dt

    @property
    def state_dim(self) -> int:
        return self.model.n_hidden

    def advance(self, states: np.ndarray, n_steps: int) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        for step in range(1, n_steps + 1):
            s = closed_loop_step(self.model, s)
            _check_finite(s, step, 'Network')
        return s

    def step_driven(self, states: np.ndarray, system_input: np.ndarray) -> np.ndarray:
        s = step_hidden(self.model, np.asarray(states, dtype=np.float64), system_input)
        _check_finite(s, 1, 'Network')
        return s

    def readout_operator(self):
        return self.model.W_out

    def propagator(self, state: np.ndarray) -> LinearOperator:
        return rnn_propagator(self.model, state)

    def initial_ensemble(self, nature: Trajectory, start_step: int, k: int, sigma_init: float,
                         spinup: int, rng: np.random.Generator,
                         offset: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Each member is synchronized on its own noisy copy of the `spinup`
        truth samples preceding start_step, so its readout estimates
        the truth at start_step.
        """
        self._check_spinup_window(nature, start_step, spinup)
        window = nature.states[:, start_step - spinup:start_step]
        driving = window[:, :, None] + rng.normal(0.0, sigma_init, size=window.shape + (k,))
        if offset is not None:
            driving += np.asarray(offset)[:, None, None]
        logger.debug(f"Synchronizing {k} members over {spinup} steps")
        return synchronize_final(self.model, driving)
