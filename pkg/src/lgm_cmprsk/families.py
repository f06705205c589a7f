"""Observation families, hyperparameter priors and cumulative incidence.

Each family returns the log-likelihood and its first two derivatives with
respect to the linear predictor. The array kernels are compiled with
numba unless the numpy backend is selected (see ``_accel``).

Weibull cause-specific hazards use h(t) = alpha * exp(alpha*eta) * t**(alpha-1),
so that alpha = 1 reduces exactly to the exponential hazard exp(eta).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cumulative_simpson

from . import _accel
from ._accel import njit
from .errors import DomainError, OverflowGuardError

OVERFLOW_GUARD = 700.0
LOG_2PI = math.log(2.0 * math.pi)

FAMILY_KINDS = ("gaussian", "poisson", "weibull_surv", "exponential_surv")
SURVIVAL_KINDS = ("weibull_surv", "exponential_surv")


# -- numpy kernels -------------------------------------------------------


def _gaussian_np(y, eta, tau):
    r = y - eta
    ll = 0.5 * (math.log(tau) - LOG_2PI) - 0.5 * tau * r * r
    return ll, tau * r, np.full_like(ll, -tau)


def _poisson_np(y, lfact, eta):
    if np.any(eta > OVERFLOW_GUARD):
        raise OverflowGuardError("poisson: eta exceeds overflow guard")
    mu = np.exp(eta)
    return y * eta - mu - lfact, y - mu, -mu


def _weibull_np(t, d, eta, alpha):
    logt = np.log(t)
    a_eta = alpha * eta
    log_h = a_eta + alpha * logt
    if np.any(log_h > OVERFLOW_GUARD):
        raise OverflowGuardError("weibull_surv: alpha*(eta + ln t) exceeds overflow guard")
    H = np.exp(log_h)
    ll = d * (math.log(alpha) + a_eta + (alpha - 1.0) * logt) - H
    return ll, alpha * d - alpha * H, -(alpha * alpha) * H


def _exponential_np(t, d, eta):
    log_h = eta + np.log(t)
    if np.any(log_h > OVERFLOW_GUARD):
        raise OverflowGuardError("exponential_surv: eta + ln t exceeds overflow guard")
    H = np.exp(log_h)
    return d * eta - H, d - H, -H


# -- numba kernels -------------------------------------------------------


@njit(cache=True, nogil=True)
def _gaussian_nb(y, eta, tau, ll, d1, d2):
    c = 0.5 * (math.log(tau) - LOG_2PI)
    for i in range(eta.shape[0]):
        r = y[i] - eta[i]
        ll[i] = c - 0.5 * tau * r * r
        d1[i] = tau * r
        d2[i] = -tau
    return 0


@njit(cache=True, nogil=True)
def _poisson_nb(y, lfact, eta, ll, d1, d2):
    for i in range(eta.shape[0]):
        if eta[i] > OVERFLOW_GUARD:
            return 1
        mu = math.exp(eta[i])
        ll[i] = y[i] * eta[i] - mu - lfact[i]
        d1[i] = y[i] - mu
        d2[i] = -mu
    return 0


@njit(cache=True, nogil=True)
def _weibull_nb(t, d, eta, alpha, ll, d1, d2):
    la = math.log(alpha)
    for i in range(eta.shape[0]):
        logt = math.log(t[i])
        a_eta = alpha * eta[i]
        log_h = a_eta + alpha * logt
        if log_h > OVERFLOW_GUARD:
            return 1
        H = math.exp(log_h)
        ll[i] = d[i] * (la + a_eta + (alpha - 1.0) * logt) - H
        d1[i] = alpha * d[i] - alpha * H
        d2[i] = -(alpha * alpha) * H
    return 0


@njit(cache=True, nogil=True)
def _exponential_nb(t, d, eta, ll, d1, d2):
    for i in range(eta.shape[0]):
        log_h = eta[i] + math.log(t[i])
        if log_h > OVERFLOW_GUARD:
            return 1
        H = math.exp(log_h)
        ll[i] = d[i] * eta[i] - H
        d1[i] = d[i] - H
        d2[i] = -H
    return 0


def family_arrays(kind, eta, *, y=None, t=None, d=None, lfact=None, hyper=None):
    """Vectorised (ll, d_eta, d2_eta) for one family over a block of rows.

    ``hyper`` is the Gaussian precision or the Weibull shape.
    """
    eta = np.ascontiguousarray(eta, dtype=float)
    if not _accel.use_numba():
        if kind == "gaussian":
            return _gaussian_np(y, eta, hyper)
        if kind == "poisson":
            return _poisson_np(y, lfact, eta)
        if kind == "weibull_surv":
            return _weibull_np(t, d, eta, hyper)
        if kind == "exponential_surv":
            return _exponential_np(t, d, eta)
        raise DomainError(f"unknown family {kind!r}")
    n = eta.shape[0]
    ll, d1, d2 = np.empty(n), np.empty(n), np.empty(n)
    if kind == "gaussian":
        status = _gaussian_nb(y, eta, float(hyper), ll, d1, d2)
    elif kind == "poisson":
        status = _poisson_nb(y, lfact, eta, ll, d1, d2)
    elif kind == "weibull_surv":
        status = _weibull_nb(t, d, eta, float(hyper), ll, d1, d2)
    elif kind == "exponential_surv":
        status = _exponential_nb(t, d, eta, ll, d1, d2)
    else:
        raise DomainError(f"unknown family {kind!r}")
    if status:
        raise OverflowGuardError(f"{kind}: exponent exceeds overflow guard")
    return ll, d1, d2


def _scalar(res):
    return tuple(float(np.asarray(v).reshape(-1)[0]) for v in res)


# -- scalar API ----------------------------------------------------------


def gaussian_loglik(y, eta, tau):
    if not tau > 0:
        raise DomainError("gaussian precision must be > 0")
    return _scalar(_gaussian_np(np.float64(y), np.float64(eta), tau))


def poisson_loglik(y, eta):
    if y < 0 or int(y) != y:
        raise DomainError("poisson observation must be a nonnegative integer")
    return _scalar(_poisson_np(np.float64(y), math.lgamma(y + 1.0), np.float64(eta)))


def weibull_surv_loglik(outcome, eta, alpha):
    """``outcome`` is a (time, event) pair or a SurvivalOutcome."""
    t, d = _unpack(outcome)
    if not alpha > 0:
        raise DomainError("weibull shape must be > 0")
    return _scalar(_weibull_np(np.float64(t), np.float64(d), np.float64(eta), alpha))


def exponential_surv_loglik(outcome, eta):
    t, d = _unpack(outcome)
    return _scalar(_exponential_np(np.float64(t), np.float64(d), np.float64(eta)))


class SurvivalOutcome(tuple):
    """(time, event) for one individual inside one cause block."""

    def __new__(cls, time, event):
        if not time > 0:
            raise DomainError("survival time must be > 0")
        if event not in (0, 1):
            raise DomainError("event must be 0 or 1")
        return super().__new__(cls, (float(time), int(event)))

    time = property(lambda self: self[0])
    event = property(lambda self: self[1])


def _unpack(outcome):
    t, d = outcome
    if not t > 0:
        raise DomainError("survival time must be > 0")
    return t, d


# -- hyperparameter priors -----------------------------------------------


def pc_prec_log_prior(tau, u, alpha):
    """Log density of tau when sigma = tau**-0.5 ~ Exp(-ln(alpha)/u)."""
    if not (tau > 0 and u > 0 and 0 < alpha < 1):
        raise DomainError("pc_prec_log_prior: need tau > 0, u > 0, 0 < alpha < 1")
    lam = -math.log(alpha) / u
    return math.log(lam / 2.0) - 1.5 * math.log(tau) - lam / math.sqrt(tau)


def scaled_log_gaussian_prior(param, scale, tau0):
    """Log density of param when scale*ln(param) ~ N(0, 1/tau0)."""
    if not (param > 0 and tau0 > 0) or scale == 0:
        raise DomainError("scaled_log_gaussian_prior: need param > 0, tau0 > 0, scale != 0")
    z = scale * math.log(param)
    return 0.5 * (math.log(tau0) - LOG_2PI) - 0.5 * tau0 * z * z + math.log(abs(scale)) - math.log(param)


# -- cumulative incidence ------------------------------------------------


def _cum_hazard(kind, eta, alpha, t):
    if kind == "exponential_surv":
        return math.exp(eta) * t
    if kind == "weibull_surv":
        return math.exp(alpha * eta) * t**alpha
    raise DomainError(f"{kind!r} is not a survival family")


def _hazard(kind, eta, alpha, t):
    if kind == "exponential_surv":
        return np.full_like(t, math.exp(eta))
    with np.errstate(divide="ignore"):
        return alpha * math.exp(alpha * eta) * t ** (alpha - 1.0)


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 3:
        raise DomainError("t_grid needs at least three points")
    if t[0] != 0.0:
        raise DomainError("t_grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must be strictly increasing")
    return t


def overall_survival(hazards, t_grid):
    """S(t) = exp(-sum_j H_j(t)) for (family, eta, alpha) per cause."""
    t = _check_grid(t_grid)
    H = sum(_cum_hazard(k, e, a, t) for k, e, a in hazards)
    return np.exp(-H)


def cumulative_incidence(hazards, t_grid):
    """Cause-specific cumulative incidence curves, shape (C, len(t_grid)).

    F_j(t) = int_0^t h_j(u) S(u) du by composite Simpson on the grid.
    A hazard that is infinite at t = 0 (Weibull shape < 1) has its first
    panel integrated in cumulative-hazard measure instead.
    """
    t = _check_grid(t_grid)
    S = overall_survival(hazards, t)
    out = np.empty((len(hazards), t.size))
    for j, (kind, eta, alpha) in enumerate(hazards):
        if kind not in SURVIVAL_KINDS:
            raise DomainError(f"{kind!r} is not a survival family")
        f = _hazard(kind, eta, alpha, t) * S
        if np.isfinite(f[0]):
            out[j] = cumulative_simpson(f, x=t, initial=0.0)
        else:
            first = _cum_hazard(kind, eta, alpha, t[1]) * 0.5 * (1.0 + S[1])
            out[j, 0] = 0.0
            out[j, 1:] = first + cumulative_simpson(f[1:], x=t[1:], initial=0.0)
    np.maximum.accumulate(out, axis=1, out=out)
    return out
