"""
Domain localization: one network per cyclic patch, fed its core plus halo
nodes, and a local ETKF per patch in that patch's hidden space.

Halo values are exchanged every step from the neighbouring patches'
readouts. Predicted observations are assembled globally before the local
analyses, so patch updates never see each other's results.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.sparse.linalg import LinearOperator

try:
    from .assimilation.base_forecaster import BaseForecaster
    from .assimilation.cycling import AssimilationCycler
    from .assimilation.etkf import etkf_transform
    from .exceptions import DivergenceError, LayoutError, NotTrainedError
    from .models import (CycleConfig, CycleDiagnostics, MacroParams, ObservationSequence, Patch,
                         PatchLayout, ReservoirModel, Trajectory)
    from .random_streams import SeedStreams
    from .reservoir import fit_readout, init_reservoir, step_hidden, synchronize_final
except ImportError:
    from assimilation.base_forecaster import BaseForecaster
    from assimilation.cycling import AssimilationCycler
    from assimilation.etkf import etkf_transform
    from exceptions import DivergenceError, LayoutError, NotTrainedError
    from models import (CycleConfig, CycleDiagnostics, MacroParams, ObservationSequence, Patch,
                        PatchLayout, ReservoirModel, Trajectory)
    from random_streams import SeedStreams
    from reservoir import fit_readout, init_reservoir, step_hidden, synchronize_final

logger = logging.getLogger(__name__)

# Observed nodes of the 40-node localized experiment
FORTY_NODE_OBS_LAYOUT = (0, 3, 5, 8, 10, 14, 16, 19, 20, 25, 27, 30, 34, 36, 39)


def build_layout(D: int, patch_size: int, halo: int) -> PatchLayout:
    """Cyclic tiling of D nodes into D / patch_size cores with halos on both sides"""
    if patch_size < 1 or D < 1:
        raise LayoutError(f"D and patch_size must be positive (D={D}, patch_size={patch_size})")
    if D % patch_size != 0:
        raise LayoutError(f"D={D} is not divisible by patch_size={patch_size}")
    if halo < 0:
        raise LayoutError(f"Halo must be non-negative, got {halo}")

    patches = []
    for j in range(D // patch_size):
        lo, hi = j * patch_size, (j + 1) * patch_size
        patches.append(Patch(
            core=np.arange(lo, hi),
            inputs=np.arange(lo - halo, hi + halo) % D,
        ))
    if 2 * halo + patch_size > D:
        logger.warning(f"Input windows of size {2 * halo + patch_size} wrap past D={D}")
    return PatchLayout(D=D, patch_size=patch_size, halo=halo, patches=patches)


def gather_inputs(layout: PatchLayout, state: np.ndarray) -> List[np.ndarray]:
    """Per-patch input windows copied from a global D-vector (or D x k matrix)"""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[0] != layout.D:
        raise LayoutError(f"State has {state.shape[0]} nodes, layout expects {layout.D}")
    return [state[patch.inputs].copy() for patch in layout.patches]


def select_local_obs(layout: PatchLayout, patch_id: int, obs_indices: Sequence[int],
                     values: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """
    Observations whose node lies inside the patch's input window.

    Returns:
        mask over the global observation vector, the selected node indices
        and values, their positions within the input window, and the local
        selection matrix H (p_local x input_dim)
    """
    patch = layout.patches[patch_id]
    obs_indices = np.asarray(obs_indices, dtype=np.int64)
    window = patch.inputs.tolist()
    mask = np.isin(obs_indices, patch.inputs)
    selected = obs_indices[mask]
    positions = np.array([window.index(int(i)) for i in selected], dtype=np.int64)

    H = np.zeros((selected.size, layout.input_dim))
    H[np.arange(selected.size), positions] = 1.0
    return {
        'mask': mask,
        'obs_indices': selected,
        'values': None if values is None else np.asarray(values)[mask],
        'window_positions': positions,
        'H': H,
    }


def _train_patch(layout: PatchLayout, patch_id: int, train: Trajectory, macro: MacroParams,
                 n_hidden: int, density: float, washout: int, seed: int) -> ReservoirModel:
    patch = layout.patches[patch_id]
    model = init_reservoir(n_hidden, layout.input_dim, layout.patch_size, density, seed, macro)
    driving = Trajectory(train.states[patch.inputs], train.dt, train.t0)
    target = Trajectory(train.states[patch.core], train.dt, train.t0)
    return fit_readout(model, driving, washout, target)


def train_local_models(layout: PatchLayout, train: Trajectory, macro: MacroParams, n_hidden: int,
                       density: float = 0.01, washout: int = 1000, seed: int = 0,
                       n_jobs: int = 1) -> List[ReservoirModel]:
    """One network per patch; shared macro parameters, independent seeds"""
    streams = SeedStreams(seed)
    logger.info(f"Training {layout.n_patches} patch models (N={n_hidden}, n_jobs={n_jobs})")
    return Parallel(n_jobs=n_jobs)(
        delayed(_train_patch)(layout, j, train, macro, n_hidden, density, washout,
                              streams.integer_seed('patches', j))
        for j in range(layout.n_patches)
    )


class LocalizedReservoirForecaster(BaseForecaster):
    """
    Patch networks run together in closed loop. The state is the
    concatenation of all patch hidden vectors in patch order.
    """

    def __init__(self, layout: PatchLayout, models: List[ReservoirModel], dt: float = 0.01):
        if len(models) != layout.n_patches:
            raise LayoutError(f"{len(models)} models for {layout.n_patches} patches")
        for j, model in enumerate(models):
            if not model.is_trained:
                raise NotTrainedError(f"Patch {j} model has no readout")
            if model.d_in != layout.input_dim or model.d_out != layout.patch_size:
                raise LayoutError(f"Patch {j} model dims {model.dims} do not fit the layout")
        self.layout = layout
        self.models = models
        self.dt = dt
        self.system_dim = layout.D
        sizes = [m.n_hidden for m in models]
        self.bounds = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def state_dim(self) -> int:
        return int(self.bounds[-1])

    def block(self, states: np.ndarray, patch_id: int) -> np.ndarray:
        return states[self.bounds[patch_id]:self.bounds[patch_id + 1]]

    def to_system(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        x = np.empty((self.system_dim,) + states.shape[1:])
        for j, (patch, model) in enumerate(zip(self.layout.patches, self.models)):
            x[patch.core] = model.W_out @ self.block(states, j)
        return x

    def _step(self, states: np.ndarray, system: np.ndarray) -> np.ndarray:
        blocks = [
            step_hidden(model, self.block(states, j), system[patch.inputs])
            for j, (patch, model) in enumerate(zip(self.layout.patches, self.models))
        ]
        return np.concatenate(blocks, axis=0)

    def advance(self, states: np.ndarray, n_steps: int) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        for step in range(1, n_steps + 1):
            s = self._step(s, self.to_system(s))
            if not np.all(np.isfinite(s)):
                raise DivergenceError(f"Localized forecast became non-finite at step {step}", step=step)
        return s

    def step_driven(self, states: np.ndarray, system_input: np.ndarray) -> np.ndarray:
        return self._step(np.asarray(states, dtype=np.float64), np.asarray(system_input, dtype=np.float64))

    def readout_operator(self) -> LinearOperator:
        def rmatvec(u):
            u = np.ravel(u)
            return np.concatenate([m.W_out.T @ u[p.core] for p, m in zip(self.layout.patches, self.models)])

        def rmatmat(U):
            return np.concatenate([m.W_out.T @ U[p.core] for p, m in zip(self.layout.patches, self.models)])

        return LinearOperator(
            (self.system_dim, self.state_dim), dtype=np.float64,
            matvec=lambda v: self.to_system(np.ravel(v)), matmat=self.to_system,
            rmatvec=rmatvec, rmatmat=rmatmat,
        )

    def propagator(self, state: np.ndarray) -> LinearOperator:
        """Coupled tangent model: each patch sees its neighbours' readout perturbations as halo"""
        state = np.asarray(state, dtype=np.float64)
        x = self.to_system(state)
        slopes = []
        for j, (patch, model) in enumerate(zip(self.layout.patches, self.models)):
            m = model.macro
            pre = m.rho * (model.W_res @ self.block(state, j)) + m.sigma_in * (model.W_in @ x[patch.inputs])
            slopes.append(m.leak * (1.0 - np.tanh(pre) ** 2))

        def matvec(v):
            v = np.ravel(v)
            dx = self.to_system(v)
            out = []
            for j, (patch, model) in enumerate(zip(self.layout.patches, self.models)):
                m = model.macro
                dv = self.block(v, j)
                lin = m.rho * (model.W_res @ dv) + m.sigma_in * (model.W_in @ dx[patch.inputs])
                out.append(slopes[j] * lin + (1.0 - m.leak) * dv)
            return np.concatenate(out)

        def rmatvec(w):
            w = np.ravel(w)
            dx = np.zeros(self.system_dim)
            out = []
            for j, (patch, model) in enumerate(zip(self.layout.patches, self.models)):
                m = model.macro
                wj = self.block(w, j)
                g = slopes[j] * wj
                out.append(m.rho * (model.W_res.T @ g) + (1.0 - m.leak) * wj)
                np.add.at(dx, patch.inputs, m.sigma_in * (model.W_in.T @ g))
            for j, (patch, model) in enumerate(zip(self.layout.patches, self.models)):
                out[j] = out[j] + model.W_out.T @ dx[patch.core]
            return np.concatenate(out)

        n = self.state_dim
        return LinearOperator((n, n), dtype=np.float64, matvec=matvec, rmatvec=rmatvec)

    def initial_ensemble(self, nature: Trajectory, start_step: int, k: int, sigma_init: float,
                         spinup: int, rng: np.random.Generator,
                         offset: Optional[np.ndarray] = None) -> np.ndarray:
        self._check_spinup_window(nature, start_step, spinup)
        window = nature.states[:, start_step - spinup:start_step]
        driving = window[:, :, None] + rng.normal(0.0, sigma_init, size=window.shape + (k,))
        if offset is not None:
            driving += np.asarray(offset)[:, None, None]
        blocks = [synchronize_final(model, driving[patch.inputs])
                  for patch, model in zip(self.layout.patches, self.models)]
        return np.concatenate(blocks, axis=0)


class LocalEnsembleUpdate:
    """
    LETKF analysis of one cycle. Every patch is updated from the same
    background and the same globally assembled predicted observations.
    """

    def __init__(self, forecaster: LocalizedReservoirForecaster, r_diagonal: np.ndarray, inflation: float,
                 patch_order: Optional[Sequence[int]] = None, n_jobs: int = 1):
        self.forecaster = forecaster
        self.r_diagonal = np.asarray(r_diagonal, dtype=np.float64)
        self.inflation = inflation
        n_patches = forecaster.layout.n_patches
        self.patch_order = list(range(n_patches)) if patch_order is None else list(patch_order)
        if sorted(self.patch_order) != list(range(n_patches)):
            raise LayoutError("patch_order must be a permutation of the patch ids")
        self.n_jobs = n_jobs

    def _local_analysis(self, patch_id: int, members: np.ndarray, predicted: np.ndarray,
                        y: np.ndarray, obs_indices: np.ndarray) -> np.ndarray:
        local = select_local_obs(self.forecaster.layout, patch_id, obs_indices)
        mask = local['mask']
        block = self.forecaster.block(members, patch_id)
        mean = block.mean(axis=1)
        Sb = block - mean[:, None]
        result = etkf_transform(Sb, predicted[mask], y[mask], self.r_diagonal[mask], self.inflation)
        return (mean + result['mean_increment'])[:, None] + result['perturbations']

    def __call__(self, members: np.ndarray, y: np.ndarray, obs_indices: np.ndarray) -> np.ndarray:
        predicted = self.forecaster.to_system(members)[obs_indices]
        blocks = Parallel(n_jobs=self.n_jobs, prefer='threads')(
            delayed(self._local_analysis)(j, members, predicted, y, obs_indices) for j in self.patch_order
        )
        by_patch = dict(zip(self.patch_order, blocks))
        return np.concatenate([by_patch[j] for j in range(len(self.patch_order))], axis=0)


def letkf_cycle(forecaster: LocalizedReservoirForecaster, obs: ObservationSequence, nature: Trajectory,
                cfg: CycleConfig, sigma_clim: np.ndarray, rng: np.random.Generator,
                patch_order: Optional[Sequence[int]] = None, n_jobs: int = 1,
                start_step: Optional[int] = None) -> CycleDiagnostics:
    """Cycled RNN-LETKF over the experiment window"""
    if cfg.ensemble_size < 2:
        raise ValueError("LETKF needs an ensemble of at least 2 members")
    update = LocalEnsembleUpdate(
        forecaster, np.full(obs.n_obs, obs.assumed_std ** 2), cfg.inflation, patch_order, n_jobs
    )
    cycler = AssimilationCycler(forecaster, nature, obs, cfg, sigma_clim, rng, start_step)
    return cycler.run_ensemble(update, 'letkf')
