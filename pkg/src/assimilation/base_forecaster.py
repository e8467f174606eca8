from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

try:
    from ..exceptions import AlignmentError
    from ..models import ObsOperator, Trajectory
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import AlignmentError
    from models import ObsOperator, Trajectory


class BaseForecaster(ABC):
    """
    Forecast model seen by the assimilation schemes.
    The analysed state may differ from the system state (a hidden vector for
    the network); `to_system` maps one onto the other.
    """

    dt: float
    system_dim: int

    @property
    @abstractmethod
    def state_dim(self) -> int:
        """Length of the state vector the schemes update"""
        pass

    @abstractmethod
    def advance(self, states: np.ndarray, n_steps: int) -> np.ndarray:
        """
        Nonlinear forecast of n_steps model steps.

        Args:
            states: n-vector or n x k matrix of members

        Returns:
            States after n_steps, same shape as the input
        """
        pass

    @abstractmethod
    def step_driven(self, states: np.ndarray, system_input: np.ndarray) -> np.ndarray:
        """One step started from a corrected system-space estimate"""
        pass

    @abstractmethod
    def readout_operator(self):
        """D x n linear map to system space (None for identity)"""
        pass

    @abstractmethod
    def propagator(self, state: np.ndarray) -> LinearOperator:
        """One-step tangent linear model at `state`; rmatvec applies the adjoint"""
        pass

    @abstractmethod
    def initial_ensemble(self, nature: Trajectory, start_step: int, k: int, sigma_init: float,
                         spinup: int, rng: np.random.Generator,
                         offset: Optional[np.ndarray] = None) -> np.ndarray:
        """
        k initial states at nature column `start_step`, each spun up from
        truth perturbed with N(0, sigma_init^2) noise.

        Returns:
            n x k matrix
        """
        pass

    def to_system(self, states: np.ndarray) -> np.ndarray:
        readout = self.readout_operator()
        return np.asarray(states, dtype=np.float64) if readout is None else readout @ states

    def obs_operator(self, obs_indices) -> ObsOperator:
        return ObsOperator(np.asarray(obs_indices), self.system_dim, self.readout_operator())

    def _check_spinup_window(self, nature: Trajectory, start_step: int, spinup: int) -> None:
        if start_step - spinup < 0 or start_step >= nature.n_times:
            raise AlignmentError(
                f"Start step {start_step} needs {spinup} preceding nature steps "
                f"(nature has {nature.n_times})"
            )
