"""Four-variable exponential family with 24 polynomial potentials.

Densities have the form ``p(x, alpha) ∝ exp(-<alpha, psi(x)>)`` where ``psi``
stacks the linear terms, the quadratic monomials ``x_i x_j`` (j >= i) and the
squared products ``x_i^2 x_j^2`` (j >= i).  Expectations are estimated with a
random-walk Metropolis chain on the unnormalized density; the normalization
constant is never needed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numba
import numpy as np

N_VARS = 4
N_PARAMS = 24

# canonical (i, j), j >= i ordering; makes x_1^2, x_2^2, x_3^2, x_4^2 land on
# 0-based indices 4, 8, 11, 13 of the quadratic block
PAIRS: tuple[tuple[int, int], ...] = tuple(itertools.combinations_with_replacement(range(N_VARS), 2))
_PAIR_I = np.array([p[0] for p in PAIRS])
_PAIR_J = np.array([p[1] for p in PAIRS])

QUADRATIC_DIAGONAL = tuple(4 + k for k, (i, j) in enumerate(PAIRS) if i == j)
QUARTIC_BLOCK = tuple(range(14, 24))
# 0-based indices that must stay nonnegative for integrability
CONSTRAINED_INDICES: tuple[int, ...] = QUADRATIC_DIAGONAL + QUARTIC_BLOCK
PURE_QUARTICS = tuple(14 + k for k, (i, j) in enumerate(PAIRS) if i == j)

# proposals leaving this box are rejected; keeps non-integrable parameter
# vectors from sending the chain to infinity
DEFAULT_BOX = 10.0
_CHUNK = 65536


class InvalidInputError(ValueError):
    pass


def check_state(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (N_VARS,):
        raise InvalidInputError(f"state must have {N_VARS} components, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state has non-finite components")
    return x


def check_params(alpha, *, constrained: bool = True) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (N_PARAMS,):
        raise InvalidInputError(f"parameter vector must have {N_PARAMS} components, got {alpha.shape}")
    if not np.all(np.isfinite(alpha)):
        raise InvalidInputError("parameter vector has non-finite components")
    if constrained and np.any(alpha[list(CONSTRAINED_INDICES)] < 0):
        raise InvalidInputError("constrained parameter components must be nonnegative")
    return alpha


def eval_potentials(x) -> np.ndarray:
    """Potential vector psi(x); accepts a single state or a stack of shape (..., 4)."""
    x = check_state(x)
    quad = x[..., _PAIR_I] * x[..., _PAIR_J]
    return np.concatenate([x, quad, quad * quad], axis=-1)


def log_unnormalized_density(x, alpha) -> np.ndarray | float:
    alpha = check_params(alpha)
    return -(eval_potentials(x) @ alpha)


def gaussian_params(variance: float = 1.0) -> np.ndarray:
    """Parameters of the isotropic zero-mean Gaussian with the given variance."""
    alpha = np.zeros(N_PARAMS)
    alpha[list(QUADRATIC_DIAGONAL)] = 0.5 / variance
    return alpha


def independent_quartic_params(quad: float = 0.5, quartic: float = 1.0) -> np.ndarray:
    """Product density prod_i exp(-quad x_i^2 - quartic x_i^4)."""
    alpha = np.zeros(N_PARAMS)
    alpha[list(QUADRATIC_DIAGONAL)] = quad
    alpha[list(PURE_QUARTICS)] = quartic
    return alpha


@dataclass(frozen=True)
class MCConfig:
    n_samples: int = 10_000
    burn_in: int = 1000
    proposal_std: float = 1.0
    thinning: int = 10
    seed: int = 0
    box: float = DEFAULT_BOX
    n_batches: int = 20

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise InvalidInputError("burn_in must be >= 0")
        if not self.proposal_std > 0:
            raise InvalidInputError("proposal_std must be > 0")
        if self.thinning < 1:
            raise InvalidInputError("thinning must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if not self.box > 0:
            raise InvalidInputError("box must be > 0")


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray
    acceptance_rate: float
    warning: str | None = None


@dataclass(frozen=True)
class MomentEstimates:
    """Sample means of psi and of psi_i psi_j over one coherent sample set.

    ``stderr`` holds batch-means standard errors of ``first``, which account
    for the chain's autocorrelation.
    """

    first: np.ndarray
    second: np.ndarray
    n_samples_used: int
    stderr: np.ndarray | None = None
    acceptance_rate: float = float("nan")
    warning: str | None = None

    def covariance(self) -> np.ndarray:
        return self.second - np.outer(self.first, self.first)


@numba.njit(cache=True)
def _log_density(x, alpha):
    s = 0.0
    for i in range(4):
        s += alpha[i] * x[i]
    k = 4
    for i in range(4):
        for j in range(i, 4):
            q = x[i] * x[j]
            s += alpha[k] * q + alpha[k + 10] * q * q
            k += 1
    return -s


@numba.njit(cache=True)
def _rwm_chunk(alpha, x, logp, steps, log_u, box, out, out_pos, keep_from, thinning, step0):
    """Advance the chain through one chunk of pre-drawn randomness.

    Retains states whose global step index ``g`` (1-based) satisfies
    ``g > keep_from`` and ``(g - keep_from) % thinning == 0``.
    """
    n_acc = 0
    prop = np.empty(4)
    for s in range(steps.shape[0]):
        inside = True
        for i in range(4):
            prop[i] = x[i] + steps[s, i]
            if abs(prop[i]) > box:
                inside = False
        if inside:
            lp = _log_density(prop, alpha)
            if log_u[s] < lp - logp:
                for i in range(4):
                    x[i] = prop[i]
                logp = lp
                n_acc += 1
        g = step0 + s + 1
        if g > keep_from and (g - keep_from) % thinning == 0 and out_pos < out.shape[0]:
            for i in range(4):
                out[out_pos, i] = x[i]
            out_pos += 1
    return logp, out_pos, n_acc


def sample_density(alpha, cfg: MCConfig, x0=None) -> SampleSet:
    """Random-walk Metropolis draws from p(x, alpha), deterministic given ``cfg.seed``."""
    alpha = check_params(alpha)
    rng = np.random.default_rng(cfg.seed)
    x = np.zeros(N_VARS) if x0 is None else check_state(x0).copy()
    logp = _log_density(x, alpha)
    total = cfg.burn_in + cfg.n_samples * cfg.thinning
    out = np.empty((cfg.n_samples, N_VARS))
    pos = 0
    accepted = 0
    done = 0
    while done < total:
        n = min(_CHUNK, total - done)
        steps = rng.standard_normal((n, N_VARS)) * cfg.proposal_std
        log_u = np.log(rng.random(n))
        logp, pos, n_acc = _rwm_chunk(alpha, x, logp, steps, log_u, cfg.box, out, pos,
                                      cfg.burn_in, cfg.thinning, done)
        accepted += n_acc
        done += n
    rate = accepted / total
    warning = None
    if rate < 0.01 or rate > 0.99:
        warning = f"Metropolis acceptance rate {rate:.4f} outside [0.01, 0.99]"
    return SampleSet(out, rate, warning)


def batch_means_stderr(values: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error of the column means of a correlated series by batch means."""
    n = values.shape[0]
    b = max(2, min(n_batches, n // 2)) if n >= 4 else 1
    if b == 1:
        return np.full(values.shape[1:], np.inf)
    size = n // b
    means = values[: b * size].reshape(b, size, *values.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


def moments_from_samples(samples: np.ndarray, n_batches: int = 20) -> MomentEstimates:
    psi = eval_potentials(samples)
    n = psi.shape[0]
    first = psi.mean(axis=0)
    second = psi.T @ psi / n
    # fp addition commutes, so this is exactly symmetric
    second = 0.5 * (second + second.T)
    return MomentEstimates(first, second, n, batch_means_stderr(psi, n_batches))


def estimate_expectations(alpha, cfg: MCConfig) -> MomentEstimates:
    draws = sample_density(alpha, cfg)
    est = moments_from_samples(draws.samples, cfg.n_batches)
    return MomentEstimates(est.first, est.second, est.n_samples_used, est.stderr,
                           draws.acceptance_rate, draws.warning)
