"""
Ensemble transform Kalman filter in the forecast model's own state space.

Background members Z (n x k) are split into mean and perturbations S_b.
Predicted observations Y (p x k) come from the composed operator H(G(Z)),
so for the network the analysis lives in hidden space while innovations
are formed in observation space.
"""

import logging
from typing import Dict, Tuple

import numpy as np
import scipy.linalg as la

try:
    from ..exceptions import NumericalError
    from ..models import GainDiagnostics, HiddenEnsemble, ObsOperator
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import NumericalError
    from models import GainDiagnostics, HiddenEnsemble, ObsOperator

logger = logging.getLogger(__name__)

EIGENVALUE_FLOOR = 1e-12


def _r_inverse_times(R: np.ndarray, M: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        return M / R[:, None]
    return la.cho_solve(la.cho_factor(R), M)


def etkf_transform(Sb: np.ndarray, Y: np.ndarray, y: np.ndarray, R: np.ndarray,
                   inflation: float = 1.0) -> Dict[str, np.ndarray]:
    """
    Ensemble-space analysis for perturbations Sb (n x k) and predicted
    observations Y (p x k). R is p x p or its diagonal.

    Returns the mean weights w_a, symmetric transform W_a, P_a in ensemble
    space and the analysis perturbations Sb W_a plus the mean increment Sb w_a.
    """
    Sb = np.asarray(Sb, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    k = Y.shape[1]
    if k < 2:
        raise ValueError(f"ETKF needs at least 2 members, got {k}")
    if inflation < 1.0:
        raise ValueError(f"Inflation must be >= 1, got {inflation}")

    y_mean = Y.mean(axis=1)
    Yb = Y - y_mean[:, None]
    innovation = np.asarray(y, dtype=np.float64) - y_mean

    C = _r_inverse_times(R, Yb).T                     # k x p
    A = ((k - 1) / inflation) * np.eye(k) + C @ Yb
    eigvals, eigvecs = la.eigh(A)
    if eigvals.min() <= EIGENVALUE_FLOOR:
        raise NumericalError(
            f"Ensemble-space precision not positive definite (min eigenvalue {eigvals.min():.3e}, "
            f"floor {EIGENVALUE_FLOOR:g})"
        )

    Pa = (eigvecs / eigvals) @ eigvecs.T
    Wa = (eigvecs * np.sqrt((k - 1) / eigvals)) @ eigvecs.T
    wa = Pa @ (C @ innovation)

    return {
        'Pa': Pa,
        'Wa': Wa,
        'wa': wa,
        'C': C,
        'innovation': innovation,
        'mean_increment': Sb @ wa,
        'perturbations': Sb @ Wa,
    }


def etkf_update(ens: HiddenEnsemble, y: np.ndarray, R: np.ndarray, inflation: float,
                obs_op: ObsOperator) -> Tuple[HiddenEnsemble, GainDiagnostics]:
    """Analysis ensemble and gain diagnostics for one observation time"""
    members = ens.members
    mean = ens.mean
    Sb = members - mean[:, None]
    Y = obs_op.apply(members)

    result = etkf_transform(Sb, Y, y, R, inflation)
    analysis_mean = mean + result['mean_increment']
    analysis = analysis_mean[:, None] + result['perturbations']

    gain = Sb @ (result['Pa'] @ result['C'])
    if not np.all(np.isfinite(gain)):
        raise NumericalError("Kalman gain has non-finite entries")

    logger.debug(
        f"ETKF update k={ens.k}, p={Y.shape[0]}: |innovation|={np.linalg.norm(result['innovation']):.3e}"
    )
    diagnostics = GainDiagnostics(
        gain=gain,
        analysis_cov_ensemble=result['Pa'],
        transform=result['Wa'],
        mean_weights=result['wa'],
    )
    return HiddenEnsemble(analysis), diagnostics
