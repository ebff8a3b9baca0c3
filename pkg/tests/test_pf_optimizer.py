import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from oracles import moments_1d, product_moments
from pfopt.exp_family import CONSTRAINED_INDICES, MCConfig, independent_quartic_params
from pfopt.experiments import initializer_known_density
from pfopt.moment_match import TargetMoments
from pfopt.pf_optimizer import (
    Ensemble,
    ObservationModel,
    Particle,
    RunConfig,
    Strategy,
    assign_batch_lambdas,
    compute_weights,
    evaluate_ensemble,
    init_ensemble,
    observe,
    predict,
    resample,
    run,
    select_estimate,
)


def particles(objectives):
    return [Particle(np.zeros(24), 1.0, h, id=i, parent_id=i) for i, h in enumerate(objectives)]


@pytest.fixture(scope="module")
def example1_targets():
    first, _ = product_moments(moments_1d(0.5, 1.0))
    return TargetMoments(first, 10**6, np.zeros(4), np.ones(4))


def small_cfg(**kw):
    base = dict(M=6, t_max=4, mc=MCConfig(n_samples=300, burn_in=200), master_seed=3)
    base.update(kw)
    return RunConfig(**base)


def test_observe_examples():
    assert observe(particles([3, 1, 2])) == 1
    assert observe(particles([0.7])) == 0.7
    assert observe(particles([2, 2, 2])) == 2


def test_weights_examples():
    obs = ObservationModel(1e-4)
    assert np.array_equal(compute_weights(particles([0.3]), 0.3, obs), [1.0])
    assert np.allclose(compute_weights(particles([0.2, 0.2]), 0.2, obs), [0.5, 0.5])
    sigma = math.sqrt(obs.sigma2)
    w = compute_weights(particles([0.1, 0.1 + 10 * sigma]), 0.1, obs)
    expected = math.exp(-50) / (1 + math.exp(-50))
    assert w[1] == pytest.approx(expected, rel=1e-9)
    assert w[1] == pytest.approx(1.9e-22, rel=0.05)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=60), st.floats(1e-6, 1.0))
def test_weights_normalized(objs, sigma2):
    ps = particles(objs)
    w = compute_weights(ps, observe(ps), ObservationModel(sigma2))
    assert abs(w.sum() - 1) <= 1e-12
    assert np.all(w >= 0)


def test_select_examples():
    ps = particles([3, 1, 2])
    assert select_estimate(ps, compute_weights(ps, 1, ObservationModel(1e-4))).id == 1
    ps = particles([1, 1, 2])
    assert select_estimate(ps, compute_weights(ps, 1, ObservationModel(1e-4))).id == 0


@settings(max_examples=1000)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=40), st.sampled_from([1e-2, 1e-4, 1e-8]))
def test_argmax_weight_is_argmin_objective(objs, sigma2):
    ps = particles(objs)
    w = compute_weights(ps, observe(ps), ObservationModel(sigma2))
    chosen = select_estimate(ps, w)
    assert chosen.id == int(np.argmin(objs))
    assert w[chosen.id] == w.max()


def test_resample_degenerate_weights():
    ps = particles([0.1, 0.5, 0.9, 0.4])
    out = resample(ps, [1.0, 0.0, 0.0, 0.0], seed=0)
    assert len(out) == 4
    assert all(p.parent_id == 0 for p in out.particles)
    assert [p.id for p in out.particles] == [0, 1, 2, 3]


@given(st.lists(st.floats(0.01, 1), min_size=1, max_size=50), st.integers(0, 2**63))
def test_resample_preserves_size(ws, seed):
    ws = np.array(ws) / np.sum(ws)
    out = resample(particles(np.zeros(len(ws))), ws, seed)
    assert len(out) == len(ws)


@pytest.mark.parametrize("weights", [np.full(20, 1 / 20), np.linspace(1, 5, 20) / np.linspace(1, 5, 20).sum()])
def test_resample_unbiased_chisquare(weights):
    M = len(weights)
    counts = np.zeros(M)
    for seed in range(100):
        out = resample(particles(np.zeros(M)), weights, seed)
        counts += np.bincount([p.parent_id for p in out.particles], minlength=M)
    assert chisquare(counts, 100 * M * weights).pvalue > 0.001


def test_offspring_inherit_parent_state():
    ps = particles([0.1, 0.2])
    ps[1] = replace(ps[1], alpha=np.arange(24.0), lam=7.0)
    out = resample(ps, [0.0, 1.0], seed=0)
    for p in out.particles:
        assert p.lam == 7.0 and np.array_equal(p.alpha, np.arange(24.0))


def _batch(lams_by_parent):
    out = []
    for parent, (lam, size) in enumerate(lams_by_parent):
        out += [Particle(np.zeros(24), lam, parent_id=parent) for _ in range(size)]
    for i, p in enumerate(out):
        p.id = i
    return Ensemble(out)


def test_batch_lambda_examples():
    assert [p.lam for p in assign_batch_lambdas(_batch([(1.0, 3)]), 2.0).particles] == [1, 0.5, 0.25]
    assert [p.lam for p in assign_batch_lambdas(_batch([(0.3, 1)]), 2.0).particles] == [0.3]
    lams = [p.lam for p in assign_batch_lambdas(_batch([(1.0, 2)]), 1.1).particles]
    assert lams[0] == 1.0 and lams[1] == pytest.approx(0.9091, abs=1e-4)


@given(st.lists(st.tuples(st.floats(1e-6, 1e6), st.integers(1, 8)), min_size=1, max_size=8),
       st.floats(1.01, 5.0), st.randoms())
def test_batch_lambda_law(batches, gamma, rnd):
    ens = _batch(batches)
    # interleave offspring of different parents; ranks are by id within a parent
    rnd.shuffle(ens.particles)
    out = assign_batch_lambdas(ens, gamma)
    seen: dict[int, int] = {}
    for p in sorted(out.particles, key=lambda p: p.id):
        rank = seen.get(p.parent_id, 0)
        seen[p.parent_id] = rank + 1
        assert p.lam == batches[p.parent_id][0] / gamma**rank


def test_init_ensemble_examples():
    const = np.full(24, 0.2)
    ens = init_ensemble(lambda j, rng: const, 1, seed=0)
    assert len(ens) == 1 and np.array_equal(ens.particles[0].alpha, const)
    ens = init_ensemble(initializer_known_density, 100, seed=5, lambda0=10.0)
    assert len({p.id for p in ens.particles}) == 100
    for p in ens.particles:
        assert np.all(p.alpha[list(CONSTRAINED_INDICES)] >= 0)
        assert p.lam == 10.0
    again = init_ensemble(initializer_known_density, 100, seed=5, lambda0=10.0)
    assert all(np.array_equal(a.alpha, b.alpha) for a, b in zip(ens.particles, again.particles))


def test_init_ensemble_projects_and_counts():
    bad = np.zeros(24)
    bad[4] = -1.0
    ens = init_ensemble(lambda j, rng: bad, 3, seed=0)
    assert ens.n_projected == 3
    assert all(p.alpha[4] == 0 for p in ens.particles)


def test_predict_at_solution_is_near_fixed_point(example1_targets):
    alpha = independent_quartic_params()
    cfg = small_cfg(M=1, mc=MCConfig(n_samples=5000))
    ens = evaluate_ensemble(Ensemble([Particle(alpha, 1.0, id=0, parent_id=0)]), example1_targets, cfg)
    stderr = ens.particles[0].estimates.stderr
    (p,) = predict(ens, example1_targets, cfg)
    assert np.max(np.abs(p.alpha - alpha)) < 0.5
    assert p.objective < 4 * np.sqrt(np.mean(stderr**2))


def test_predict_separates_identical_particles(example1_targets):
    alpha = independent_quartic_params(0.3, 0.7)
    cfg = small_cfg(M=2)
    ens = Ensemble([Particle(alpha, 1.0, id=0, parent_id=0), Particle(alpha, 1.0, id=1, parent_id=1)])
    ens = evaluate_ensemble(ens, example1_targets, cfg)
    a, b = predict(ens, example1_targets, cfg)
    assert a.objective != b.objective
    assert not np.array_equal(a.alpha, b.alpha)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_single_particle_reduces_to_single_trajectory(strategy, example1_targets):
    init = init_ensemble(initializer_known_density, 1, seed=1)
    ref = run(small_cfg(M=1, strategy=Strategy.NAIVE), example1_targets, ensemble=init)
    out = run(small_cfg(M=1, strategy=strategy), example1_targets, ensemble=init)
    assert [r.y for r in out] == [r.y for r in ref]


def test_generic_without_resampling_matches_naive(example1_targets):
    init = init_ensemble(initializer_known_density, 6, seed=2)
    naive = run(small_cfg(strategy=Strategy.NAIVE), example1_targets, ensemble=init)
    generic = run(small_cfg(strategy=Strategy.GENERIC, warmup_iterations=4), example1_targets, ensemble=init)
    assert len(naive) == len(generic) == 4
    for a, b in zip(naive, generic):
        assert a.y == b.y and a.best_so_far == b.best_so_far
        assert np.array_equal(a.per_particle_objectives, b.per_particle_objectives)
        assert np.array_equal(a.best_alpha, b.best_alpha)


def test_stop_threshold(example1_targets):
    init = init_ensemble(initializer_known_density, 6, seed=2)
    assert len(run(small_cfg(stop_threshold=0.0), example1_targets, ensemble=init)) == 4
    assert len(run(small_cfg(stop_threshold=1e9), example1_targets, ensemble=init)) == 1


def test_run_is_reproducible(example1_targets):
    a = run(small_cfg(), example1_targets, initializer_known_density)
    b = run(small_cfg(), example1_targets, initializer_known_density)
    for ra, rb in zip(a, b):
        assert ra.y == rb.y and np.array_equal(ra.weights, rb.weights)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(strategy="ModifiedPF", gamma=1.0)
    with pytest.raises(ValueError):
        RunConfig(strategy="Bogus")
    RunConfig(strategy="Naive", gamma=1.0)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(Strategy)), st.integers(0, 2**32), st.integers(1, 6), st.integers(0, 2))
def test_run_invariants(strategy, seed, M, warmup):
    first, _ = product_moments(moments_1d(0.5, 1.0))
    targets = TargetMoments(first, 10**6, np.zeros(4), np.ones(4))
    cfg = RunConfig(strategy=strategy, M=M, t_max=3, warmup_iterations=warmup,
                    mc=MCConfig(n_samples=100, burn_in=50, thinning=2), master_seed=seed)
    records = run(cfg, targets, initializer_known_density)
    best = [r.best_so_far for r in records]
    assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
    for r in records:
        assert len(r.per_particle_objectives) == M
        assert r.y == r.per_particle_objectives.min()
        assert abs(r.weights.sum() - 1) <= 1e-12
        assert r.best_index == int(np.argmin(r.per_particle_objectives))
        assert r.weights[r.best_index] == r.weights.max()


def test_observe_skips_non_finite_and_rejects_all_non_finite():
    assert observe(particles([np.nan, 0.4, np.inf])) == 0.4
    with pytest.raises(FloatingPointError):
        observe(particles([np.nan, np.inf]))


def test_run_rejects_non_finite_targets():
    bad = TargetMoments(np.full(24, np.nan), 10, np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        run(small_cfg(), bad, initializer_known_density)
