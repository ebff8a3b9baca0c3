"""Population-based stochastic LM: naive multistart, generic and modified particle filters.

Each particle carries the moment estimates from its most recent objective
evaluation.  The next LM step is formed from those estimates, so offspring
that share a parent and a damping value propose the same parameter vector and
differ only through the fresh Monte Carlo evaluation at the proposal.  The
modified filter breaks that symmetry by spreading damping values geometrically
inside each ancestry batch.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .exp_family import InvalidInputError, MCConfig, MomentEstimates, estimate_expectations
from .lm_solver import LMSettings, SingularSystemError, adapt_lambda, lm_step, project_constraints
from .moment_match import TargetMoments, error, jacobian, objective, residual

Initializer = Callable[[int, np.random.Generator], np.ndarray]

# stream tags for seed derivation
_EVAL, _RESAMPLE, _INIT, _STEP = 0, 1, 2, 4


class Strategy(str, enum.Enum):
    NAIVE = "Naive"
    GENERIC = "GenericPF"
    MODIFIED = "ModifiedPF"


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-bit seed for the stream identified by ``keys``, independent of call order."""
    words = np.random.SeedSequence([master_seed, *keys]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass
class Particle:
    alpha: np.ndarray
    lam: float
    objective: float = math.nan
    parent_id: int = -1
    id: int = 0
    estimates: MomentEstimates | None = field(default=None, repr=False)
    singular: bool = False


@dataclass
class Ensemble:
    particles: list[Particle]
    iteration: int = 0
    n_projected: int = 0

    def __len__(self):
        return len(self.particles)


@dataclass(frozen=True)
class ObservationModel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")

    @classmethod
    def from_mc(cls, mc: MCConfig) -> ObservationModel:
        return cls(1.0 / mc.n_samples)


@dataclass
class IterationRecord:
    iteration: int
    y: float
    best_alpha: np.ndarray
    best_so_far: float
    per_particle_objectives: np.ndarray
    weights: np.ndarray
    best_index: int = 0
    n_singular: int = 0
    resampled: bool = False


@dataclass(frozen=True)
class RunConfig:
    strategy: Strategy = Strategy.MODIFIED
    M: int = 100
    t_max: int = 20
    stop_threshold: float = 0.0
    gamma: float = 1.1
    warmup_iterations: int = 0
    mc: MCConfig = MCConfig()
    lm: LMSettings = LMSettings()
    master_seed: int = 0
    # False: form each LM step from a fresh sample set at the current alpha
    # instead of the one carried over from the particle's last evaluation
    reuse_estimates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.stop_threshold < 0:
            raise ValueError("stop_threshold must be >= 0")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be >= 0")
        if self.strategy is Strategy.MODIFIED and not self.gamma > 1:
            raise ValueError("gamma must be > 1 for ModifiedPF")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


def init_ensemble(initializer: Initializer, M: int, seed: int, lambda0: float = 10.0) -> Ensemble:
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    particles = []
    n_projected = 0
    for j in range(M):
        raw = np.asarray(initializer(j, rng), dtype=float)
        alpha = project_constraints(raw)
        n_projected += int(not np.array_equal(raw, alpha))
        particles.append(Particle(alpha, lambda0, parent_id=j, id=j))
    return Ensemble(particles, 0, n_projected)


def evaluate(alpha: np.ndarray, targets: TargetMoments, cfg: RunConfig, iteration: int, j: int):
    """Moment estimates and average error per moment at ``alpha`` on stream (iteration, j)."""
    mc = replace(cfg.mc, seed=derive_seed(cfg.master_seed, _EVAL, iteration, j))
    est = estimate_expectations(alpha, mc)
    h = objective(error(residual(est, targets)), len(targets.t))
    return est, h


def evaluate_ensemble(ensemble: Ensemble, targets: TargetMoments, cfg: RunConfig) -> Ensemble:
    particles = []
    for j, p in enumerate(ensemble.particles):
        est, h = evaluate(p.alpha, targets, cfg, ensemble.iteration, j)
        particles.append(replace(p, objective=h, estimates=est))
    return Ensemble(particles, ensemble.iteration, ensemble.n_projected)


def predict(ensemble: Ensemble, targets: TargetMoments, cfg: RunConfig) -> list[Particle]:
    """One stochastic LM move per particle, followed by a fresh evaluation and lambda update.

    The per-particle work depends only on the particle and its derived seed,
    so it may be farmed out in any order without changing the result.
    """
    iteration = ensemble.iteration + 1
    proposed = []
    for j, p in enumerate(ensemble.particles):
        if p.estimates is None:
            raise ValueError(f"particle {j} has not been evaluated")
        step_est = p.estimates
        if not cfg.reuse_estimates:
            mc = replace(cfg.mc, seed=derive_seed(cfg.master_seed, _STEP, iteration, j))
            step_est = estimate_expectations(p.alpha, mc)
        f = residual(step_est, targets)
        singular = False
        try:
            alpha = lm_step(p.alpha, jacobian(step_est), f, p.lam, cfg.lm)
        except SingularSystemError as exc:
            alpha = p.alpha + exc.fallback
            singular = True
        est, h = evaluate(alpha, targets, cfg, iteration, j)
        if singular:
            lam = min(p.lam * cfg.lm.adapt_up, 1e12)
        else:
            lam = adapt_lambda(p.objective, h, p.lam, cfg.lm)
        proposed.append(Particle(alpha, lam, h, p.parent_id, j, est, singular))
    return proposed


def observe(proposed: list[Particle]) -> float:
    """Smallest finite objective among the proposals."""
    if not proposed:
        raise ValueError("no particles")
    finite = [p.objective for p in proposed if math.isfinite(p.objective)]
    if not finite:
        raise FloatingPointError("every particle produced a non-finite objective")
    return min(finite)


def log_weights(proposed: list[Particle], y: float, obs: ObservationModel) -> np.ndarray:
    h = np.array([p.objective for p in proposed])
    with np.errstate(invalid="ignore"):
        lw = -((y - h) ** 2) / (2.0 * obs.sigma2)
    return np.where(np.isfinite(lw), lw, -np.inf)


def compute_weights(proposed: list[Particle], y: float, obs: ObservationModel) -> np.ndarray:
    """Normalized Gaussian likelihood weights, evaluated in log space."""
    lw = log_weights(proposed, y, obs)
    return np.exp(lw - logsumexp(lw))


def select_estimate(proposed: list[Particle], weights) -> Particle:
    """Particle of maximal weight.

    Equal normalized weights can hide tiny objective differences, so ties on
    weight fall back to the objective and then to the lowest id.
    """
    weights = np.asarray(weights)
    top = np.flatnonzero(weights == weights.max())
    return min((proposed[i] for i in top), key=lambda p: (p.objective, p.id))


def resample(proposed: list[Particle], weights, seed: int) -> Ensemble:
    """Multinomial resampling; offspring come out grouped by parent, in parent order."""
    weights = np.asarray(weights, dtype=float)
    M = len(proposed)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(M, weights / weights.sum())
    parents = np.repeat(np.arange(M), counts)
    offspring = [replace(proposed[k], parent_id=int(k), id=i) for i, k in enumerate(parents)]
    return Ensemble(offspring)


def assign_batch_lambdas(ensemble: Ensemble, gamma: float) -> Ensemble:
    """The i-th offspring (1-based, by id) of a parent with damping lam_P gets lam_P / gamma**(i-1)."""
    if not gamma > 1:
        raise ValueError("gamma must be > 1")
    rank: dict[int, int] = {}
    particles = []
    for p in sorted(ensemble.particles, key=lambda p: p.id):
        i = rank.get(p.parent_id, 0)
        rank[p.parent_id] = i + 1
        particles.append(replace(p, lam=p.lam / gamma**i))
    return Ensemble(particles, ensemble.iteration, ensemble.n_projected)


def run(cfg: RunConfig, targets: TargetMoments, initializer: Initializer | None = None,
        ensemble: Ensemble | None = None) -> list[IterationRecord]:
    """Run one optimization; pass ``ensemble`` to start from fixed initial particles."""
    if ensemble is None:
        if initializer is None:
            raise ValueError("need an initializer or an initial ensemble")
        ensemble = init_ensemble(initializer, cfg.M, derive_seed(cfg.master_seed, _INIT), cfg.lm.lambda0)
    if not np.all(np.isfinite(targets.t)):
        raise InvalidInputError("target moments must be finite")
    if len(ensemble) != cfg.M:
        raise ValueError(f"ensemble has {len(ensemble)} particles, config says M={cfg.M}")
    ensemble = evaluate_ensemble(Ensemble(ensemble.particles, 0, ensemble.n_projected), targets, cfg)
    obs = ObservationModel.from_mc(cfg.mc)
    records: list[IterationRecord] = []
    best_so_far = math.inf

    for t in range(cfg.t_max):
        proposed = predict(ensemble, targets, cfg)
        iteration = t + 1
        objectives = np.array([p.objective for p in proposed])
        y = observe(proposed)
        if cfg.strategy is Strategy.NAIVE:
            weights = np.full(cfg.M, 1.0 / cfg.M)
            best = min(proposed, key=lambda p: (p.objective if math.isfinite(p.objective) else math.inf, p.id))
        else:
            weights = compute_weights(proposed, y, obs)
            best = select_estimate(proposed, weights)
        best_so_far = min(best_so_far, y)
        filtering = cfg.strategy is not Strategy.NAIVE and iteration > cfg.warmup_iterations
        records.append(IterationRecord(iteration, y, best.alpha.copy(), best_so_far, objectives, weights,
                                       best.id, sum(p.singular for p in proposed), filtering))
        if iteration == cfg.t_max or best_so_far <= cfg.stop_threshold:
            break
        if filtering:
            ensemble = resample(proposed, weights, derive_seed(cfg.master_seed, _RESAMPLE, iteration))
            if cfg.strategy is Strategy.MODIFIED:
                ensemble = assign_batch_lambdas(ensemble, cfg.gamma)
        else:
            ensemble = Ensemble([replace(p, parent_id=p.id) for p in proposed])
        ensemble.iteration = iteration
    return records
