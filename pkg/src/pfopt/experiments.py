"""Source data and initial particle distributions for the four density-estimation examples."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .exp_family import (
    N_PARAMS,
    PURE_QUARTICS,
    QUADRATIC_DIAGONAL,
    MCConfig,
    independent_quartic_params,
    sample_density,
)

_BLOCK = 100_000
# eight initialized components: the x_i^2 and x_i^4 coefficients
_INIT_QUAD = list(QUADRATIC_DIAGONAL)
_INIT_QUARTIC = list(PURE_QUARTICS)


class ExperimentKind(str, enum.Enum):
    INDEP = "Indep"
    DEP = "Dep"
    SINE_NOISE = "SineNoise"
    SINE_PHASE = "SinePhase"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind = ExperimentKind.INDEP
    n_source_samples: int = 1_000_000
    seed: int = 0
    quadrature_nodes: int = 64
    noise_amplitude: float = 1.0
    # N(0, 0.1) read as a variance
    phase_variance: float = 0.1
    dep_thinning: int = 20
    dep_burn_in: int = 5000

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        if self.n_source_samples < 2:
            raise ValueError("n_source_samples must be >= 2")
        if self.kind in (ExperimentKind.SINE_NOISE, ExperimentKind.SINE_PHASE) and self.quadrature_nodes < 32:
            raise ValueError("quadrature_nodes must be >= 32 for the signal examples")
        if self.noise_amplitude < 0 or self.phase_variance < 0:
            raise ValueError("noise_amplitude and phase_variance must be >= 0")


def dep_params() -> np.ndarray:
    alpha = np.zeros(N_PARAMS)
    alpha[_INIT_QUAD] = 0.5
    alpha[14:24] = 1.0
    return alpha


def true_params(kind: ExperimentKind) -> np.ndarray | None:
    kind = ExperimentKind(kind)
    if kind is ExperimentKind.INDEP:
        return independent_quartic_params(0.5, 1.0)
    if kind is ExperimentKind.DEP:
        return dep_params()
    return None


def quartic_rejection_1d(n: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Draws from exp(-x^2/2 - x^4) using a N(0,1) envelope, since exp(-x^4) <= 1.

    Returns the draws and the number of proposals spent.
    """
    out = np.empty(n)
    filled = 0
    proposals = 0
    while filled < n:
        m = max(1024, int(1.6 * (n - filled)))
        x = rng.standard_normal(m)
        keep = x[rng.random(m) < np.exp(-x**4)]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
        proposals += m
    return out, proposals


def gen_indep_samples(spec: ExperimentSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    cols = [quartic_rejection_1d(spec.n_source_samples, rng)[0] for _ in range(4)]
    return np.stack(cols, axis=1)


def gen_dep_samples(spec: ExperimentSpec) -> np.ndarray:
    cfg = MCConfig(n_samples=spec.n_source_samples, burn_in=spec.dep_burn_in, proposal_std=0.5,
                   thinning=spec.dep_thinning, seed=spec.seed)
    return sample_density(dep_params(), cfg).samples


def gauss_legendre(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    return legendre.leggauss(n_nodes)


def projection_matrix(n_nodes: int) -> np.ndarray:
    """(n_nodes, 4) matrix W with coefficients c = u(nodes) @ W."""
    t, w = gauss_legendre(n_nodes)
    P = legendre.legvander(t, 3)
    scale = (2 * np.arange(4) + 1) / 2.0
    return (w[:, None] * P) * scale


def legendre_coeffs(u, n_nodes: int = 64) -> np.ndarray:
    """First four Legendre coefficients of ``u`` on [-1, 1] by Gauss-Legendre quadrature."""
    if n_nodes < 32:
        raise ValueError("n_nodes must be >= 32")
    t, _ = gauss_legendre(n_nodes)
    return np.asarray(u(t), dtype=float) @ projection_matrix(n_nodes)


def _sine(t):
    return np.sin(2 * np.pi * t)


def gen_sine_noise_samples(spec: ExperimentSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    t, _ = gauss_legendre(spec.quadrature_nodes)
    W = projection_matrix(spec.quadrature_nodes)
    base = _sine(t)
    out = np.empty((spec.n_source_samples, 4))
    for start in range(0, spec.n_source_samples, _BLOCK):
        n = min(_BLOCK, spec.n_source_samples - start)
        noise = rng.standard_normal((n, len(t)))
        out[start:start + n] = (base + spec.noise_amplitude * noise) @ W
    return out


def gen_sine_phase_samples(spec: ExperimentSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    t, _ = gauss_legendre(spec.quadrature_nodes)
    W = projection_matrix(spec.quadrature_nodes)
    eta = rng.normal(0.0, np.sqrt(spec.phase_variance), spec.n_source_samples)
    out = np.empty((spec.n_source_samples, 4))
    for start in range(0, spec.n_source_samples, _BLOCK):
        e = eta[start:start + _BLOCK]
        out[start:start + len(e)] = _sine(t[None, :] + e[:, None]) @ W
    return out


def generate_samples(spec: ExperimentSpec) -> np.ndarray:
    return {
        ExperimentKind.INDEP: gen_indep_samples,
        ExperimentKind.DEP: gen_dep_samples,
        ExperimentKind.SINE_NOISE: gen_sine_noise_samples,
        ExperimentKind.SINE_PHASE: gen_sine_phase_samples,
    }[spec.kind](spec)


def initializer_known_density(j: int, rng: np.random.Generator) -> np.ndarray:
    eta = rng.random(8)
    alpha = np.zeros(N_PARAMS)
    alpha[_INIT_QUAD] = 0.5 * (1.0 - eta[:4])
    alpha[_INIT_QUARTIC] = 1.0 - 0.5 * eta[4:]
    return alpha


def initializer_sine(j: int, rng: np.random.Generator) -> np.ndarray:
    eta = rng.random(8)
    alpha = np.zeros(N_PARAMS)
    alpha[_INIT_QUAD] = 1.0 - eta[:4]
    alpha[_INIT_QUARTIC] = 1.0 - eta[4:]
    return alpha


def initializer_for(kind: ExperimentKind):
    kind = ExperimentKind(kind)
    if kind in (ExperimentKind.INDEP, ExperimentKind.DEP):
        return initializer_known_density
    return initializer_sine
