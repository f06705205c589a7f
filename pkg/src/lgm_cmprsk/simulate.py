"""Synthetic joint longitudinal / competing-risks data.

Random numbers come from numpy's PCG64 bit generator. The root
``SeedSequence(seed)`` is spawned into one child stream per individual,
so the draws for individual i do not depend on how many values other
individuals consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import JointDataset, LongitudinalRecord, SurvivalRecord, validate_joint_dataset
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class SimConfig:
    """Generator settings.

    ``gamma[j]`` scales the shared random intercept in cause j's log
    hazard and ``beta[j]`` multiplies Age. The ``tau_v`` .. ``shapes``
    fields are used only by :func:`simulate_example1`.
    """

    n_individuals: int = 1000
    n_obs_range: tuple[int, int] = (10, 15)
    gamma: tuple[float, ...] = (0.3, -0.1, 0.2)
    beta: tuple[float, ...] = (0.01, 0.015, 0.0003)
    trend: float = 1.2
    age_range: tuple[int, int] = (15, 75)
    sigma_u: float = 1.0
    seed: int = 1
    censoring_rate: float = 0.0
    legacy_appendix: bool = False
    # intercept/slope generator
    tau_v: float = 1.0
    tau_w: float = 1.0
    rho: float = 0.0
    kappa: tuple[float, ...] = (0.0, 0.0, 0.0)
    shapes: tuple[float, ...] = (1.0, 1.0, 1.0)
    cause_intercepts: tuple[float, ...] = (0.0, 0.0, 0.0)
    long_intercept: float = 0.0

    def __post_init__(self):
        lo, hi = self.n_obs_range
        if not (isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer))):
            raise ConfigError("n_obs_range must hold integers")
        if not 1 <= lo <= hi:
            raise ConfigError("n_obs_range needs 1 <= min <= max")
        a, b = self.age_range
        if a > b:
            raise ConfigError("age_range needs lo <= hi")
        if not self.sigma_u > 0:
            raise ConfigError("sigma_u must be > 0")
        if self.n_individuals < 1:
            raise ConfigError("n_individuals must be >= 1")
        if len(self.beta) != len(self.gamma):
            raise ConfigError("gamma and beta need one entry per cause")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise ConfigError("censoring_rate must be in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_causes(self) -> int:
        return len(self.gamma)

    def truth(self) -> dict:
        """Every generating parameter, JSON-ready."""
        out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}
        out["n_causes"] = self.n_causes
        return out


def _streams(seed, n):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def longitudinal_mean(t, u, trend):
    """E[y | t, u] of the count generator."""
    return np.exp(np.asarray(t, dtype=float) ** trend + u)


def weibull_times(rng, eta, alpha, size=None):
    """Inverse-CDF draws with cumulative hazard exp(alpha*eta) * t**alpha."""
    e = rng.standard_exponential(size)
    return (e / math.exp(alpha * eta)) ** (1.0 / alpha)


def _censor(rng, cfg, time, cause):
    if cfg.censoring_rate > 0 and rng.random() < cfg.censoring_rate:
        return time * rng.random(), 0
    return time, cause


def _finish(long_recs, surv_recs, n_causes):
    return validate_joint_dataset(long_recs, surv_recs, n_causes)


def simulate_example5(config: SimConfig, return_effects=False):
    """Poisson counts with a t**trend mean and exponential competing causes.

    With ``return_effects`` the drawn random intercepts come back too, as
    ``(dataset, {"u": array})``.
    """
    cfg = config
    C = cfg.n_causes
    gam = np.asarray(cfg.gamma, dtype=float)
    bet = np.asarray(cfg.beta, dtype=float)
    long_recs, surv_recs = [], []
    us = np.empty(cfg.n_individuals)
    for i, rng in enumerate(_streams(cfg.seed, cfg.n_individuals), start=1):
        u = rng.normal(0.0, cfg.sigma_u)
        us[i - 1] = u
        age = int(rng.integers(cfg.age_range[0], cfg.age_range[1] + 1))
        rates = np.exp(gam * u + bet * age)
        if cfg.legacy_appendix:
            u = u + 1.0
            window = rng.exponential(1.0 / math.exp(0.5 * u))
            cause = int(rng.binomial(C, 0.6))
            rate = 1.0 if cause == 0 else math.exp(gam[cause - 1] * u + bet[cause - 1] * age)
            time = rng.exponential(1.0 / rate)
        else:
            latent = rng.standard_exponential(C) / rates
            cause = int(np.argmin(latent)) + 1
            time = float(latent[cause - 1])
            assert time == latent.min()
            time, cause = _censor(rng, cfg, time, cause)
            window = time
        n_i = int(rng.integers(cfg.n_obs_range[0], cfg.n_obs_range[1] + 1))
        ts = np.sort(rng.uniform(0.0, window, n_i))
        ys = rng.poisson(longitudinal_mean(ts, u, cfg.trend))
        cov = {"Age": float(age)}
        surv_recs.append(SurvivalRecord(i, float(time), cause, cov))
        long_recs.extend(LongitudinalRecord(i, float(t), float(y), cov) for t, y in zip(ts, ys))
    if cfg.legacy_appendix:
        # legacy visit times ignore the event time; drop rows past it
        ds = validate_joint_dataset(long_recs, surv_recs, C, on_late_observation="truncate")
    else:
        ds = _finish(long_recs, surv_recs, C)
    return (ds, {"u": us}) if return_effects else ds


def example1_covariance(tau_v, tau_w, rho):
    if not (tau_v > 0 and tau_w > 0 and -1 < rho < 1):
        raise DomainError("intercept/slope covariance is not positive definite")
    sv, sw = tau_v**-0.5, tau_w**-0.5
    return np.array([[sv * sv, rho * sv * sw], [rho * sv * sw, sw * sw]])


def simulate_example1(config: SimConfig, return_effects=False):
    """Random intercept/slope counts with Weibull competing causes.

    Cause j has log hazard scale eta_j = a_j + beta_j*Age + gamma_j*v + kappa_j*w.
    With ``return_effects`` the result is ``(dataset, {"v": array, "w": array})``.
    """
    cfg = config
    C = cfg.n_causes
    for name in ("kappa", "shapes", "cause_intercepts"):
        if len(getattr(cfg, name)) != C:
            raise ConfigError(f"{name} needs one entry per cause")
    if any(not a > 0 for a in cfg.shapes):
        raise ConfigError("Weibull shapes must be > 0")
    L = np.linalg.cholesky(example1_covariance(cfg.tau_v, cfg.tau_w, cfg.rho))
    long_recs, surv_recs = [], []
    vw = np.empty((cfg.n_individuals, 2))
    for i, rng in enumerate(_streams(cfg.seed, cfg.n_individuals), start=1):
        v, w = vw[i - 1] = L @ rng.standard_normal(2)
        age = int(rng.integers(cfg.age_range[0], cfg.age_range[1] + 1))
        latent = np.empty(C)
        for j in range(C):
            eta = cfg.cause_intercepts[j] + cfg.beta[j] * age + cfg.gamma[j] * v + cfg.kappa[j] * w
            latent[j] = weibull_times(rng, eta, cfg.shapes[j])
        cause = int(np.argmin(latent)) + 1
        time, cause = _censor(rng, cfg, float(latent[cause - 1]), cause)
        n_i = int(rng.integers(cfg.n_obs_range[0], cfg.n_obs_range[1] + 1))
        ts = np.sort(rng.uniform(0.0, time, n_i))
        ys = rng.poisson(np.exp(cfg.long_intercept + v + w * ts))
        cov = {"Age": float(age)}
        surv_recs.append(SurvivalRecord(i, time, cause, cov))
        long_recs.extend(LongitudinalRecord(i, float(t), float(y), cov) for t, y in zip(ts, ys))
    ds = _finish(long_recs, surv_recs, C)
    return (ds, {"v": vw[:, 0], "w": vw[:, 1]}) if return_effects else ds


def example5_config(**overrides) -> SimConfig:
    """Generator settings of the three-cause count experiment."""
    return replace(SimConfig(), **overrides)
