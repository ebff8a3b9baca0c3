"""Target moments and the moment-matching residual, error and Jacobian.

The functions here are shape-generic: any number ``l`` of potentials works,
which lets the formulas be checked on small analytic families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exp_family import N_PARAMS, InvalidInputError, MomentEstimates, check_state, eval_potentials


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class TargetMoments:
    t: np.ndarray
    n_source_samples: int
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, samples) -> np.ndarray:
        return (np.asarray(samples, dtype=float) - self.mean) / self.std


def compute_target_moments(samples) -> TargetMoments:
    """Standardize each coordinate by its empirical mean/std, then average psi."""
    x = check_state(samples)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise DegenerateDataError(f"zero variance in coordinate(s) {bad}")
    z = (x - mean) / std
    # accumulate in blocks so 10^6 samples never materialize a (N, 24) array
    t = np.zeros(N_PARAMS)
    for start in range(0, z.shape[0], 100_000):
        t += eval_potentials(z[start:start + 100_000]).sum(axis=0)
    return TargetMoments(t / z.shape[0], z.shape[0], mean, std)


def residual(est: MomentEstimates, targets: TargetMoments | np.ndarray) -> np.ndarray:
    t = targets.t if isinstance(targets, TargetMoments) else np.asarray(targets, dtype=float)
    return est.first - t


def error(f) -> float:
    f = np.asarray(f, dtype=float)
    return 0.5 * float(f @ f)


def objective(epsilon: float, l: int = N_PARAMS) -> float:
    """Average error per moment, sqrt(2 eps / l)."""
    if epsilon < 0:
        raise InvalidInputError("epsilon must be nonnegative")
    if l < 1:
        raise InvalidInputError("l must be >= 1")
    return math.sqrt(2.0 * epsilon / l)


def jacobian(est: MomentEstimates) -> np.ndarray:
    """d f_i / d alpha_j = -(E[psi_i psi_j] - E[psi_i] E[psi_j])."""
    return -(est.second - np.outer(est.first, est.first))
