import math

import numpy as np
import pytest
from scipy import stats

from lgm_cmprsk.data import validate_joint_dataset
from lgm_cmprsk.errors import ConfigError, DomainError
from lgm_cmprsk.simulate import (
    SimConfig,
    example1_covariance,
    example5_config,
    longitudinal_mean,
    simulate_example1,
    simulate_example5,
    weibull_times,
)


def test_defaults_match_reference_settings():
    c = example5_config()
    assert c.gamma == (0.3, -0.1, 0.2)
    assert c.beta == (0.01, 0.015, 0.0003)
    assert (c.trend, c.sigma_u, c.age_range, c.n_obs_range) == (1.2, 1.0, (15, 75), (10, 15))


def test_full_size_dataset():
    ds = simulate_example5(SimConfig(n_individuals=1000, seed=1))
    assert ds.n_individuals == 1000
    assert 10_000 <= len(ds.longitudinal) <= 15_000
    counts = np.bincount([r.individual_id for r in ds.longitudinal])[1:]
    assert counts.min() >= 10 and counts.max() <= 15
    assert all(1 <= r.cause <= 3 for r in ds.survival)
    assert validate_joint_dataset(ds.longitudinal, ds.survival, 3) == ds


def test_single_individual():
    ds = simulate_example5(SimConfig(n_individuals=1, seed=9))
    assert ds.n_individuals == 1 and 10 <= len(ds.longitudinal) <= 15


def test_same_seed_identical_and_streams_independent():
    a = simulate_example5(SimConfig(n_individuals=50, seed=11))
    b = simulate_example5(SimConfig(n_individuals=50, seed=11))
    assert a == b
    # individual i's draws do not depend on how many individuals follow
    c = simulate_example5(SimConfig(n_individuals=20, seed=11))
    assert c.survival == a.survival[:20]
    assert simulate_example5(SimConfig(n_individuals=50, seed=12)) != a


def test_cause_proportions_without_frailty():
    cfg = SimConfig(n_individuals=100_000, n_obs_range=(1, 1), sigma_u=1e-9, age_range=(45, 45), seed=5)
    ds = simulate_example5(cfg)
    lam = np.exp(np.array(cfg.beta) * 45)
    freq = np.bincount([r.cause for r in ds.survival], minlength=4)[1:] / cfg.n_individuals
    assert np.abs(freq - lam / lam.sum()).max() < 0.01


def test_count_mean_at_unit_time(rng):
    y = rng.poisson(longitudinal_mean(np.ones(1_000_000), 0.0, 1.2))
    assert abs(y.mean() - math.e) < 0.01


def test_empirical_trajectory_tracks_mean():
    cfg = SimConfig(n_individuals=3000, sigma_u=1e-9, seed=7)
    ds = simulate_example5(cfg)
    t = np.array([r.time for r in ds.longitudinal])
    y = np.array([r.value for r in ds.longitudinal])
    edges = np.quantile(t, np.linspace(0, 1, 11))
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (t >= lo) & (t < hi)
        mu = longitudinal_mean(t[sel], 0.0, 1.2)
        se = math.sqrt(mu.sum()) / sel.sum()
        assert abs(y[sel].mean() - mu.mean()) < 5 * se


def test_shared_effect_returned_and_linked_to_causes():
    ds, eff = simulate_example5(SimConfig(n_individuals=20_000, n_obs_range=(1, 1), seed=3),
                                return_effects=True)
    u = eff["u"]
    assert abs(u.std() - 1) < 0.02
    cause = np.array([r.cause for r in ds.survival])
    # gamma_2 < 0 < gamma_1: high u favours cause 1 over cause 2
    assert u[cause == 1].mean() > u[cause == 2].mean()


def test_weibull_median(rng):
    t = weibull_times(rng, 0.0, 2.0, 1_000_000)
    assert abs(np.median(t) - math.sqrt(math.log(2))) < 0.01


def test_example1_independent_effects():
    cfg = SimConfig(n_individuals=100_000, n_obs_range=(1, 1), seed=4)
    _, eff = simulate_example1(cfg, return_effects=True)
    S = np.cov(np.vstack([eff["v"], eff["w"]]))
    assert np.abs(S - np.eye(2)).max() < 0.02


def test_example1_unit_shape_matches_exponential_generator():
    base = dict(n_individuals=100_000, n_obs_range=(1, 1))
    t5 = [r.time for r in simulate_example5(SimConfig(seed=21, **base)).survival]
    t1 = [r.time for r in simulate_example1(SimConfig(seed=22, **base)).survival]
    assert stats.ks_2samp(t5, t1).statistic < 0.01


def test_example1_covariance():
    assert np.allclose(example1_covariance(1, 4, 0.5), [[1, 0.25], [0.25, 0.25]])
    with pytest.raises(DomainError):
        example1_covariance(1, 1, 1.0)


def test_censoring_and_legacy_modes():
    ds = simulate_example5(SimConfig(n_individuals=500, censoring_rate=0.3, seed=2))
    frac = np.mean([r.cause == 0 for r in ds.survival])
    assert 0.2 < frac < 0.4
    legacy = simulate_example5(SimConfig(n_individuals=300, legacy_appendix=True, seed=2))
    assert legacy.n_individuals == 300
    assert all(r.time <= legacy.survival_of(r.individual_id).time for r in legacy.longitudinal)


@pytest.mark.parametrize("kw", [dict(n_obs_range=(0, 3)), dict(sigma_u=0.0), dict(age_range=(5, 1)),
                                dict(beta=(0.1,)), dict(n_individuals=0), dict(censoring_rate=1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw)


def test_truth_is_serialisable():
    import json

    json.dumps(SimConfig().truth())
