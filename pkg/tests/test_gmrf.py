import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lgm_cmprsk import gmrf
from lgm_cmprsk.errors import DomainError


def test_rw2_n3_stencil():
    Q = gmrf.rw2_precision(3).toarray()
    assert np.array_equal(Q, [[1, -2, 1], [-2, 4, -2], [1, -2, 1]])


@pytest.mark.parametrize("n", [3, 5, 17, 200])
def test_rw2_null_space_exact(n):
    Q = gmrf.rw2_precision(n)
    assert np.all(Q.matrix @ np.ones(n) == 0)
    assert np.all(Q.matrix @ np.arange(1.0, n + 1) == 0)
    assert np.abs(Q.matrix - Q.matrix.T).max() == 0


def test_rw2_rank():
    Q = gmrf.rw2_precision(50)
    w = np.linalg.eigvalsh(Q.toarray())
    assert np.sum(np.abs(w) < 1e-9 * w.max()) == 2
    assert Q.rank_deficiency == 2
    assert Q.log_det_constant == pytest.approx(np.sum(np.log(w[2:])), rel=1e-9)


def test_rw2_small_n_rejected():
    with pytest.raises(DomainError):
        gmrf.rw2_precision(2)


def _constrained_gm_variance(Q, V):
    """Geometric mean of the diagonal of the generalised inverse, computed
    with an explicit projector onto the orthogonal complement of V."""
    P = np.eye(len(Q)) - V @ np.linalg.pinv(V)
    S = P @ np.linalg.pinv(Q) @ P
    return math.exp(np.mean(np.log(np.diag(S))))


@pytest.mark.parametrize("n", [5, 10, 50])
def test_scaled_rw2_has_unit_geometric_variance(n):
    Qs = gmrf.scale_precision(gmrf.rw2_precision(n))
    t = np.arange(1.0, n + 1)
    V = np.column_stack([np.ones(n), t])
    assert abs(_constrained_gm_variance(Qs.toarray(), V) - 1) < 1e-10


def test_scale_idempotent_and_identity_unchanged():
    Q1 = gmrf.scale_precision(gmrf.rw2_precision(10))
    Q2 = gmrf.scale_precision(Q1)
    assert np.abs(Q1.toarray() - Q2.toarray()).max() < 1e-12
    I = gmrf.iid_precision(4)
    assert np.allclose(gmrf.scale_precision(I).toarray(), np.eye(4), atol=1e-14)


def test_scale_keeps_null_space():
    Qs = gmrf.scale_precision(gmrf.rw2_precision(12))
    t = np.arange(1.0, 13)
    assert np.abs(Qs.matrix @ (3 - 0.5 * t)).max() < 1e-12


def test_iid2d_blocks():
    assert np.allclose(gmrf.iid2d_precision(2, 1, 1, 0).toarray(), np.eye(4))
    assert np.allclose(gmrf.iid2d_block(4, 1, 0), np.diag([4, 1]))
    # rho is the covariance of the pair
    assert np.allclose(gmrf.iid2d_block(1, 1, 0.5), [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(-0.999, 0.999))
def test_iid2d_positive_definite(tv, tw, r):
    rho = r / math.sqrt(tv * tw)  # keep the covariance inside the valid range
    B = gmrf.iid2d_block(tv, tw, rho)
    assert np.linalg.eigvalsh(B).min() > 0


def test_iid():
    assert np.array_equal(gmrf.iid_precision(3, 2.0).toarray(), 2 * np.eye(3))
    assert np.array_equal(gmrf.iid_precision(1).toarray(), [[1.0]])
    Q = gmrf.iid_precision(3)
    assert gmrf.gmrf_log_density(np.zeros(3), Q, 2.0) == pytest.approx(1.5 * math.log(2 / (2 * math.pi)))


def test_bin_covariate():
    idx, mids = gmrf.bin_covariate([0, 0.5, 1], 2)
    assert list(idx) == [1, 2, 2]
    assert np.allclose(mids, [0.25, 0.75])
    idx, _ = gmrf.bin_covariate([1, 2, 3, 4], 4)
    assert list(idx) == [1, 2, 3, 4]
    with pytest.raises(DomainError):
        gmrf.bin_covariate([1, 1, 1], 3)


def test_bin_occupancy(rng):
    idx, _ = gmrf.bin_covariate(rng.uniform(size=10_000), 50)
    counts = np.bincount(idx, minlength=51)[1:]
    sd = math.sqrt(10_000 * 0.02 * 0.98)
    assert np.all(np.abs(counts - 200) < 5 * sd)


def test_log_density_cases(rng):
    assert gmrf.gmrf_log_density(np.zeros(2), gmrf.iid_precision(2)) == pytest.approx(-math.log(2 * math.pi))
    Q = gmrf.rw2_precision(8)
    line = 2.0 + 0.3 * np.arange(8)
    assert gmrf.gmrf_log_density(line, Q, 1.7) == pytest.approx(gmrf.gmrf_log_density(np.zeros(8), Q, 1.7),
                                                                abs=1e-12)
    Q2 = gmrf.iid2d_precision(3, 2.0, 0.5, 0.3)
    x = rng.normal(size=6)
    cov = np.linalg.inv(Q2.toarray() * 1.3)
    assert gmrf.gmrf_log_density(x, Q2, 1.3) == pytest.approx(
        stats.multivariate_normal(np.zeros(6), cov).logpdf(x), abs=1e-10)


def test_log_density_difference_is_quadratic(rng):
    Q = gmrf.scale_precision(gmrf.rw2_precision(9))
    for _ in range(5):
        x = rng.normal(size=9)
        tau = float(rng.uniform(0.1, 5))
        d = gmrf.gmrf_log_density(x, Q, tau) - gmrf.gmrf_log_density(np.zeros(9), Q, tau)
        assert d == pytest.approx(-0.5 * tau * x @ (Q.matrix @ x), rel=1e-12)


def test_prior_spec_validation():
    with pytest.raises(DomainError):
        gmrf.PriorSpec.pc_prec(1.0, 1.5)
    with pytest.raises(DomainError):
        gmrf.PriorSpec("mystery", {})
    with pytest.raises(DomainError):
        gmrf.EffectSpec("rw2", 2)
