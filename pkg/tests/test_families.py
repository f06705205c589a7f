import math

import numpy as np
import pytest
from scipy import integrate

from lgm_cmprsk import families
from lgm_cmprsk.check import family_derivative_errors
from lgm_cmprsk.errors import DomainError, OverflowGuardError


def test_gaussian_values():
    ll, d1, d2 = families.gaussian_loglik(0.0, 0.0, 1.0)
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert (d1, d2) == (0.0, -1.0)
    assert families.gaussian_loglik(1.0, 0.0, 4.0)[1] == 4.0


def test_poisson_values():
    assert families.poisson_loglik(0, 0.0)[0] == pytest.approx(-1.0)
    assert families.poisson_loglik(3, math.log(3))[1] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        families.poisson_loglik(2.5, 0.0)


def test_survival_values():
    assert families.weibull_surv_loglik((1.0, 1), 0.0, 2.0)[0] == pytest.approx(math.log(2) - 1)
    assert families.exponential_surv_loglik((2.0, 1), 0.0)[0] == pytest.approx(-2.0)
    assert families.exponential_surv_loglik((1.0, 0), 0.0)[0] == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        families.exponential_surv_loglik((0.0, 1), 0.0)
    with pytest.raises(DomainError):
        families.SurvivalOutcome(1.0, 2)


def test_weibull_unit_shape_is_exponential(rng):
    for _ in range(2000):
        o = (float(rng.uniform(1e-3, 20)), int(rng.integers(0, 2)))
        eta = float(rng.uniform(-6, 4))
        assert families.weibull_surv_loglik(o, eta, 1.0) == families.exponential_surv_loglik(o, eta)


def test_derivatives_match_finite_differences(rng):
    for kind, err in family_derivative_errors(rng, 1000).items():
        assert err < 1e-5, kind


def test_log_concave(rng):
    for _ in range(500):
        eta = float(rng.uniform(-5, 5))
        t = float(np.exp(rng.uniform(-3, 3)))
        assert families.gaussian_loglik(rng.normal(), eta, 2.0)[2] <= 0
        assert families.poisson_loglik(int(rng.integers(0, 20)), eta)[2] <= 0
        assert families.weibull_surv_loglik((t, 1), eta, float(rng.uniform(0.2, 3)))[2] <= 0
        assert families.exponential_surv_loglik((t, 0), eta)[2] <= 0


def test_overflow_guard():
    with pytest.raises(OverflowGuardError):
        families.poisson_loglik(1, 800.0)


def test_array_kernel_matches_scalar(rng):
    eta = rng.uniform(-2, 2, 50)
    y = rng.integers(0, 10, 50).astype(float)
    from scipy.special import gammaln

    ll, d1, d2 = families.family_arrays("poisson", eta, y=y, lfact=gammaln(y + 1))
    for k in range(50):
        assert np.allclose((ll[k], d1[k], d2[k]), families.poisson_loglik(int(y[k]), eta[k]), rtol=1e-14)


def test_pc_prior_tail_and_normalisation():
    # P(sigma > 1) = P(tau < 1)
    tail = integrate.quad(lambda t: math.exp(families.pc_prec_log_prior(t, 1.0, 0.01)), 0, 1,
                          epsabs=1e-13, limit=200)[0]
    assert tail == pytest.approx(0.01, abs=1e-6)
    total = tail + integrate.quad(lambda t: math.exp(families.pc_prec_log_prior(t, 1.0, 0.01)), 1, np.inf,
                                  epsabs=1e-13, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0, 2.0, 7.0])
def test_pc_prior_change_of_variables(sigma):
    lam = -math.log(0.01)
    log_exp_sigma = math.log(lam) - lam * sigma
    # tau = sigma^-2, |d sigma / d tau| = sigma^3 / 2
    expected = log_exp_sigma + math.log(0.5 * sigma**3)
    assert families.pc_prec_log_prior(sigma**-2, 1.0, 0.01) == pytest.approx(expected, rel=1e-12)


def test_scaled_log_gaussian_prior():
    assert families.scaled_log_gaussian_prior(1.0, 10.0, 2.0) == pytest.approx(
        0.5 * math.log(2 / (2 * math.pi)) + math.log(10))
    for a in (0.3, 0.8, 1.7):
        # symmetric in log(a): density of ln(a) is the same at +-ln(a)
        lhs = families.scaled_log_gaussian_prior(a, 10.0, 1.0) + math.log(a)
        rhs = families.scaled_log_gaussian_prior(1 / a, 10.0, 1.0) + math.log(1 / a)
        assert lhs == pytest.approx(rhs, rel=1e-12)
    f = lambda p: math.exp(families.scaled_log_gaussian_prior(p, 1.0, 1.0))
    total = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in ((0, 1), (1, np.inf)))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_cif_exponential_closed_form():
    t = np.linspace(0, 5, 501)
    F = families.cumulative_incidence([("exponential_surv", 0.0, 1.0)], t)
    assert np.abs(F[0] - (1 - np.exp(-t))).max() < 1e-6


def test_cif_equal_hazards_split_evenly():
    t = np.linspace(0, 40, 2001)
    F = families.cumulative_incidence([("exponential_surv", -0.3, 1.0)] * 2, t)
    assert F[0, -1] == pytest.approx(0.5, abs=1e-6)
    assert np.allclose(F[0], F[1])


def test_cif_matches_monte_carlo(rng):
    age = 45
    gam_beta = [(0.3, 0.01), (-0.1, 0.015), (0.2, 0.0003)]
    etas = [b * age for _, b in gam_beta]
    t = np.linspace(0, 30, 3001)
    F = families.cumulative_incidence([("exponential_surv", e, 1.0) for e in etas], t)
    draws = rng.standard_exponential((1_000_000, 3)) / np.exp(etas)
    freq = np.bincount(draws.argmin(axis=1), minlength=3) / 1_000_000
    assert np.abs(F[:, -1] - freq).max() < 0.01


def test_cif_weibull_properties():
    t = np.linspace(0, 4, 801)
    hz = [("weibull_surv", 0.2, 0.7), ("weibull_surv", -0.4, 1.8), ("exponential_surv", -1.0, 1.0)]
    F = families.cumulative_incidence(hz, t)
    S = families.overall_survival(hz, t)
    assert np.all((F >= 0) & (F <= 1))
    assert np.all(np.diff(F, axis=1) >= -1e-15)
    assert np.abs(F.sum(axis=0) + S - 1).max() < 2e-4


def test_cif_grid_validation():
    with pytest.raises(DomainError):
        families.cumulative_incidence([("exponential_surv", 0.0, 1.0)], [0.1, 0.2, 0.3])
    with pytest.raises(DomainError):
        families.cumulative_incidence([("gaussian", 0.0, 1.0)], [0, 1, 2])
