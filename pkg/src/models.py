from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp


@dataclass
class Trajectory:
    """
    Time-indexed states on a fixed step.
    `states` is D x T, one column per time step, float64.
    """
    states: np.ndarray     # D x T
    dt: float              # MTU per step
    t0: float = 0.0        # MTU of column 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[1] < 1:
            raise ValueError("Trajectory needs at least one time step")
        if not self.dt > 0:
            raise ValueError(f"Trajectory dt must be positive, got {self.dt}")
        if not np.isfinite(self.states).all():
            raise ValueError("Trajectory states must all be finite")

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def n_times(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_times)

    def segment(self, start: int, stop: int) -> 'Trajectory':
        """Columns [start, stop) as a new trajectory with shifted t0"""
        return Trajectory(self.states[:, start:stop].copy(), self.dt, self.t0 + start * self.dt)


@dataclass
class ObservationSequence:
    """Timestamped partial, noisy measurements of a truth trajectory"""
    times: np.ndarray          # MTU, strictly increasing
    steps: np.ndarray          # integer truth-grid index of each time
    obs_indices: np.ndarray    # observed node indices
    values: np.ndarray         # p x n_times
    noise_std: float           # sigma_noise used to perturb
    assumed_std: float         # sigma_obs used to build R

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.obs_indices = np.asarray(self.obs_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("Observation times must be strictly increasing")
        if len(set(self.obs_indices.tolist())) != self.obs_indices.size:
            raise ValueError("Observation indices must be distinct")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def n_obs(self) -> int:
        return int(self.obs_indices.size)

    @property
    def R(self) -> np.ndarray:
        return (self.assumed_std ** 2) * np.eye(self.n_obs)

    @property
    def r_diagonal(self) -> np.ndarray:
        return np.full(self.n_obs, self.assumed_std ** 2)

    def step_lookup(self) -> Dict[int, int]:
        """Map truth-grid step -> column of `values`"""
        return {int(step): col for col, step in enumerate(self.steps)}


@dataclass
class MacroParams:
    """The four macro-scale scalars of the recurrent network"""
    rho: float        # spectral-radius scale
    sigma_in: float   # input scale
    leak: float       # leak rate l
    tikhonov: float   # ridge regularizer beta > 0

    @property
    def log_tikhonov(self) -> float:
        return float(np.log(self.tikhonov))

    def as_dict(self) -> Dict[str, float]:
        return {'rho': self.rho, 'sigma_in': self.sigma_in, 'leak': self.leak, 'tikhonov': self.tikhonov}


@dataclass
class ReservoirModel:
    """
    Fixed sparse recurrence and input map with a trained linear readout.
    W_res has unit spectral radius before rho scaling; W_out is None until trained.
    """
    W_res: sp.csr_matrix     # N x N
    W_in: np.ndarray         # N x D_in
    macro: MacroParams
    W_out: Optional[np.ndarray] = None   # D_out x N
    d_out: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.d_out == 0:
            self.d_out = self.W_out.shape[0] if self.W_out is not None else self.W_in.shape[1]

    @cached_property
    def W_res_T(self) -> sp.csr_matrix:
        """W_res transposed to CSR, built once per model"""
        return self.W_res.T.tocsr()

    @property
    def n_hidden(self) -> int:
        return self.W_res.shape[0]

    @property
    def d_in(self) -> int:
        return self.W_in.shape[1]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.n_hidden, self.d_in, self.d_out

    @property
    def is_trained(self) -> bool:
        return self.W_out is not None


@dataclass
class HiddenEnsemble:
    """k hidden (or system) states stored as the columns of an n x k matrix"""
    members: np.ndarray

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.float64)
        if self.members.ndim == 1:
            self.members = self.members[:, None]

    @property
    def k(self) -> int:
        return self.members.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    @property
    def perturbations(self) -> np.ndarray:
        return self.members - self.mean[:, None]


@dataclass
class GainDiagnostics:
    """Kalman gain (n x p) and ensemble-space analysis covariance (k x k)"""
    gain: np.ndarray
    analysis_cov_ensemble: np.ndarray
    transform: np.ndarray
    mean_weights: np.ndarray


@dataclass
class VarConfig:
    """Settings of the strong-constraint incremental 4D-Var"""
    sigma_b: float = 0.5
    window_steps: int = 20
    outer_loops: int = 2
    inner_tol: float = 1e-6
    inner_max_iter: int = 500

    def __post_init__(self):
        if not self.sigma_b > 0:
            raise ValueError("sigma_b must be positive")
        if self.outer_loops < 1:
            raise ValueError("outer_loops must be at least 1")


@dataclass
class ObsOperator:
    """
    Point observations of system nodes, composed with the map from the
    forecast state to system space (W_out for the network, None for identity).
    """
    obs_indices: np.ndarray
    system_dim: int
    readout: Any = None     # D x n matrix or LinearOperator

    def __post_init__(self):
        self.obs_indices = np.asarray(self.obs_indices, dtype=np.int64)

    @property
    def n_obs(self) -> int:
        return int(self.obs_indices.size)

    def to_system(self, states: np.ndarray) -> np.ndarray:
        if self.readout is None:
            return np.asarray(states, dtype=np.float64)
        return self.readout @ states

    def apply(self, states: np.ndarray) -> np.ndarray:
        """H(G(states)) for an n-vector or n x k matrix"""
        return self.to_system(states)[self.obs_indices]

    def selection(self) -> np.ndarray:
        """p x D matrix whose rows are unit basis vectors"""
        H = np.zeros((self.n_obs, self.system_dim))
        H[np.arange(self.n_obs), self.obs_indices] = 1.0
        return H


@dataclass
class ObsWindow:
    """Observations falling inside one 4D-Var window, offsets in model steps"""
    offsets: np.ndarray        # step offset of each observation time from window start
    values: np.ndarray         # p x n_times
    r_diagonal: np.ndarray     # p

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.r_diagonal = np.asarray(self.r_diagonal, dtype=np.float64)
        if np.any(self.offsets < 0):
            raise ValueError("Observation offsets must be non-negative")

    @property
    def n_times(self) -> int:
        return int(self.offsets.size)

    @property
    def last_offset(self) -> int:
        return int(self.offsets.max()) if self.offsets.size else 0


@dataclass
class CycleConfig:
    """Settings shared by every cycled assimilation scheme"""
    tau_da: float = 0.2
    duration: float = 100.0               # MTU of cycling
    ensemble_size: int = 10
    inflation: float = 1.2
    sigma_init: float = 0.5
    spinup: int = 1000                    # synchronization steps before t0
    init_offset_std: float = 0.0
    divergence_threshold: float = 10.0
    divergence_patience: int = 50
    record_node_nrse: bool = False
    var: VarConfig = field(default_factory=VarConfig)

    def __post_init__(self):
        if not self.tau_da > 0 or not self.duration > 0:
            raise ValueError("tau_da and duration must be positive")
        if self.inflation < 1.0:
            raise ValueError(f"Inflation must be >= 1, got {self.inflation}")


@dataclass
class SolveResult:
    """Outcome of an iterative linear solve"""
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    restarted: bool = False


@dataclass
class Patch:
    core: np.ndarray      # global indices forecast by this patch
    inputs: np.ndarray    # core plus halo on both sides, cyclic


@dataclass
class PatchLayout:
    """Cyclic decomposition of D nodes into equal cores with halos"""
    D: int
    patch_size: int
    halo: int
    patches: List[Patch] = field(default_factory=list)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def input_dim(self) -> int:
        return self.patch_size + 2 * self.halo


@dataclass
class MacroLossSpec:
    """How the long-forecast macro loss is evaluated"""
    M: int = 100                  # number of forecast start times
    N: int = 1000                 # forecast length in steps
    seed: int = 0
    n_hidden: int = 1600
    density: float = 0.01
    washout: int = 1000
    model_seed: int = 0
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=lambda: {
        'sigma_in': (0.001, 1.0),
        'leak': (0.001, 1.0),
        'rho': (0.1, 1.5),
        'log_tikhonov': (float(np.log(1e-8)), float(np.log(1.0))),
    })

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("MacroLossSpec needs M >= 1 and N >= 1")


@dataclass
class SurrogateState:
    """Fitted Kriging surrogate over the unit search box"""
    points: np.ndarray
    values: np.ndarray
    regressor: Any
    jitter: float
    kernel_params: Dict[str, Any] = field(default_factory=dict)

    def predict(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation at query points (n x d)"""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        mean, std = self.regressor.predict(pts, return_std=True)
        return np.asarray(mean, dtype=np.float64).ravel(), np.asarray(std, dtype=np.float64).ravel()


@dataclass
class CycleRecord:
    """One analysis cycle, all errors in system space"""
    cycle: int
    time: float
    analysis_nrmse_obs: float
    analysis_nrmse_unobs: float
    analysis_nrmse_all: float
    background_nrmse_all: float
    spread: float
    innovation_mean: float
    innovation_var: float
    node_nrse: Optional[np.ndarray] = None


@dataclass
class CycleDiagnostics:
    """Per-cycle records plus run-level flags and analysis states"""
    scheme: str
    records: List[CycleRecord] = field(default_factory=list)
    analysis_states: Optional[np.ndarray] = None   # D x n_cycles
    diverged: bool = False
    stopped_early: bool = False
    fourdvar_traces: List[List[Dict[str, float]]] = field(default_factory=list)
    wall_seconds: float = 0.0

    def time_mean(self, field_name: str, start_time: float = 0.0) -> float:
        values = [getattr(r, field_name) for r in self.records if r.time >= start_time]
        return float(np.mean(values)) if values else float('nan')


@dataclass
class EGOBudget:
    """Efficient-global-optimization budget"""
    n_initial: int = 10     # Latin-hypercube design size
    n_iter: int = 15
    batch_size: int = 4
    n_starts: int = 100     # EI multistart points per proposal
    n_polish: int = 10      # best starts refined by L-BFGS-B

    def __post_init__(self):
        if self.n_initial < 2:
            raise ValueError("EGO needs at least 2 initial points")
        if min(self.n_iter, self.batch_size, self.n_starts, self.n_polish) < 1:
            raise ValueError("EGO iteration, batch and start counts must be positive")
