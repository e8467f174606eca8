"""
Assimilation Package

State estimation with a trained network (or the L96 model itself) as the
forecast model. Schemes talk to the model only through BaseForecaster, so
the same cycling code drives the network in hidden space and the
perfect-model baselines in system space.

Main Components:
- BaseForecaster: Abstract interface for forecast models
- L96Forecaster: Perfect-model baseline
- ReservoirForecaster: Trained network in closed loop
- direct_insertion: Replace observed components
- etkf_update / etkf_transform: Ensemble transform Kalman filter
- fourdvar_analysis: Strong-constraint incremental 4D-Var
- bicgstab: Matrix-free inner-loop solver
- AssimilationCycler / cycle_da: Forecast-update cycling and diagnostics

Example Usage:
    from assimilation import ReservoirForecaster, cycle_da

    forecaster = ReservoirForecaster(model)
    diagnostics = cycle_da('etkf', forecaster, nature, obs, cfg, sigma_clim, rng)
"""

from .base_forecaster import BaseForecaster
from .forecasters import L96Forecaster, ReservoirForecaster
from .direct_insertion import direct_insertion
from .etkf import etkf_transform, etkf_update
from .bicgstab import bicgstab
from .fourdvar import TangentChain, fourdvar_analysis, fourdvar_cost
from .cycling import SCHEMES, AssimilationCycler, cycle_da, steps_per

__all__ = [
    'BaseForecaster',
    'L96Forecaster',
    'ReservoirForecaster',
    'direct_insertion',
    'etkf_transform',
    'etkf_update',
    'bicgstab',
    'TangentChain',
    'fourdvar_analysis',
    'fourdvar_cost',
    'SCHEMES',
    'AssimilationCycler',
    'cycle_da',
    'steps_per',
]
