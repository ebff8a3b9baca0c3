"""One damped Levenberg-Marquardt update with Marquardt diagonal scaling."""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exp_family import CONSTRAINED_INDICES, InvalidInputError

LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when the damped normal equations cannot be solved; ``fallback`` is the zero step."""

    def __init__(self, msg: str, fallback: np.ndarray):
        super().__init__(msg)
        self.fallback = fallback


@dataclass(frozen=True)
class LMSettings:
    lambda0: float = 10.0
    adapt_up: float = 2.0
    adapt_down: float = 2.0
    diag_floor: float = 1e-12
    # relative: the retry adds ridge * trace(J^T J) / l to the diagonal
    ridge: float = 1e-8

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise InvalidInputError("lambda0 must be > 0")
        if not (self.adapt_up > 1 and self.adapt_down > 1):
            raise InvalidInputError("adapt_up and adapt_down must be > 1")
        if not self.diag_floor > 0:
            raise InvalidInputError("diag_floor must be > 0")
        if self.ridge < 0:
            raise InvalidInputError("ridge must be >= 0")


def project_constraints(alpha, constrained: Sequence[int] | None = CONSTRAINED_INDICES) -> np.ndarray:
    alpha = np.array(alpha, dtype=float)
    if constrained:
        idx = list(constrained)
        alpha[idx] = np.maximum(alpha[idx], 0.0)
    return alpha


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # LDL^T with Bunch-Kaufman pivoting
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        x = scipy.linalg.solve(a, b, assume_a="sym", check_finite=True)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("non-finite solution")
    return x


def lm_increment(J, f, lam: float, settings: LMSettings = LMSettings()) -> np.ndarray:
    """Solve [J^T J + lam diag(J^T J)] delta = -J^T f."""
    J = np.asarray(J, dtype=float)
    f = np.asarray(f, dtype=float)
    if lam < 0:
        raise InvalidInputError("lambda must be nonnegative")
    jtj = J.T @ J
    g = J.T @ f
    damping = np.maximum(np.diag(jtj), settings.diag_floor)
    a = jtj + lam * np.diag(damping)
    try:
        return _solve(a, -g)
    except (np.linalg.LinAlgError, ValueError):
        pass
    shift = settings.ridge * np.trace(jtj) / len(f)
    if shift > 0:
        try:
            return _solve(a + shift * np.eye(len(f)), -g)
        except (np.linalg.LinAlgError, ValueError):
            pass
    raise SingularSystemError("damped normal equations are singular", np.zeros_like(f))


def lm_step(alpha, J, f, lam: float, settings: LMSettings = LMSettings(),
            constrained: Sequence[int] | None = CONSTRAINED_INDICES) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return project_constraints(alpha + lm_increment(J, f, lam, settings), constrained)


def adapt_lambda(h_prev: float, h_new: float, lam: float, settings: LMSettings = LMSettings()) -> float:
    """Shrink lambda after an improvement, grow it otherwise (ties count as no improvement)."""
    if h_new < h_prev:
        return max(lam / settings.adapt_down, LAMBDA_MIN)
    return min(lam * settings.adapt_up, LAMBDA_MAX)
