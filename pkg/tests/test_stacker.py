import math

import numpy as np
import pytest

from lgm_cmprsk import gmrf
from lgm_cmprsk.data import LongitudinalRecord, SurvivalRecord, validate_joint_dataset
from lgm_cmprsk.errors import ConfigError, DomainError
from lgm_cmprsk.models import copied_predictor_model, count_competing_risks_model, intercept_slope_model
from lgm_cmprsk.simulate import SimConfig, simulate_example1, simulate_example5
from lgm_cmprsk.sparse_chol import CholeskyAnalysis
from lgm_cmprsk.stacker import (
    Attachment,
    BlockSpec,
    CopyLink,
    EffectDecl,
    ModelSpec,
    assemble,
    joint_prior_precision,
    linear_predictor,
)


@pytest.fixture(scope="module")
def data5():
    return simulate_example5(SimConfig(n_individuals=60, seed=4))


@pytest.fixture(scope="module")
def data1():
    return simulate_example1(SimConfig(n_individuals=10, seed=4, kappa=(0.1, 0.2, 0.3)))


def test_hyper_counts(data1, data5):
    m1 = assemble(intercept_slope_model(), data1)
    assert m1.n_hyper == 12
    m5 = assemble(count_competing_risks_model(), data5)
    assert m5.n_hyper == 5
    assert m5.hyper_layout.names == ["tau[trend]", "tau[u]", "gamma[cause1<-u]", "gamma[cause2<-u]",
                                     "gamma[cause3<-u]"]


def test_degenerate_regression_layout():
    longs = [LongitudinalRecord(1, 0.0, 1.0), LongitudinalRecord(1, 0.5, 2.0)]
    ds = validate_joint_dataset(longs, [SurvivalRecord(1, 1.0, 0)], 1)
    m = assemble(ModelSpec((BlockSpec("gaussian"),), ()), ds)
    assert m.n_latent == 1
    assert m.n_hyper == 1
    Q = joint_prior_precision(m, np.zeros(1))
    assert np.allclose(Q.toarray(), [[0.001]])


def test_rw2_block_scales_linearly(data5):
    spec = ModelSpec((BlockSpec("poisson", (), (Attachment("f", index="time", groups=10),)),), (),
                     {"f": EffectDecl("rw2")})
    m = assemble(spec, data5)
    Q = joint_prior_precision(m, np.array([math.log(2.0)])).toarray()
    ref = 2.0 * gmrf.scale_precision(gmrf.rw2_precision(10)).toarray()
    assert np.allclose(Q, ref, atol=1e-12)
    assert m.effects["f"].midpoints.shape == (10,)


def test_precision_symmetry_and_null_space(data5):
    m = assemble(count_competing_risks_model(n_groups=12), data5)
    th = np.array([0.4, -0.2, 0.3, -0.1, 0.2])
    Q = joint_prior_precision(m, th)
    assert abs(Q.matrix - Q.matrix.T).max() == 0
    assert Q.rank_deficiency == 2
    blk = m.latent_block("trend")
    for v in (np.ones(12), np.arange(12.0)):
        x = np.zeros(m.n_latent)
        x[blk.offset:blk.offset + 12] = v
        assert np.abs(Q.matrix @ x).max() < 1e-10


def test_fill_in_small():
    ds = simulate_example5(SimConfig(n_individuals=1000, seed=1))
    m = assemble(count_competing_risks_model(), ds)
    a = CholeskyAnalysis(m._pattern)
    assert a.nnz_factor <= 0.05 * m.n_latent**2


def test_linear_predictor_basics(data5):
    m = assemble(count_competing_risks_model(), data5)
    th = m.hyper_layout.initial_free()
    assert np.all(linear_predictor(m, np.zeros(m.n_latent), th) == 0)
    with pytest.raises(DomainError):
        linear_predictor(m, np.zeros(m.n_latent))


def test_single_fixed_effect_value():
    longs = [LongitudinalRecord(1, 0.0, 1.0, {"z": 3.0})]
    ds = validate_joint_dataset(longs, [SurvivalRecord(1, 1.0, 0)], 1)
    m = assemble(ModelSpec((BlockSpec("gaussian", ("z",)),), ()), ds)
    assert linear_predictor(m, np.array([2.0]))[0] == 6.0


def test_linearity(data5, rng):
    m = assemble(count_competing_risks_model(), data5)
    th = np.array([0.0, 0.0, 0.3, -0.1, 0.2])
    x1, x2 = rng.normal(size=(2, m.n_latent))
    a, b = rng.normal(size=2)
    lhs = linear_predictor(m, a * x1 + b * x2, th)
    rhs = a * linear_predictor(m, x1, th) + b * linear_predictor(m, x2, th)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_copy_scaling_only_moves_copied_rows(data5, rng):
    m = assemble(count_competing_risks_model(), data5)
    x = rng.normal(size=m.n_latent)
    th = np.array([0.0, 0.0, 0.3, -0.1, 0.2])
    th2 = th.copy()
    th2[3] *= 3.0
    e1, e2 = linear_predictor(m, x, th), linear_predictor(m, x, th2)
    rb = m.row_block("cause2")
    changed = np.flatnonzero(e1 != e2)
    assert changed.min() >= rb.start and changed.max() < rb.stop
    u = x[m.latent_block("u").offset:][:m.n_individuals]
    assert np.allclose((e2 - e1)[rb.start:rb.stop], (th2[3] - th[3]) * u, atol=1e-12)


def test_intercept_slope_rows_match_scalar_formula(data1, rng):
    m = assemble(intercept_slope_model(), data1)
    lay = m.hyper_layout
    vw = m.latent_block("vw")
    for _ in range(100):
        x = rng.normal(size=m.n_latent)
        th = rng.normal(size=m.n_hyper)
        eta = linear_predictor(m, x, th)
        for j in (1, 2, 3):
            rb = m.row_block(f"cause{j}")
            b0 = x[m.fixed_names.index(f"cause{j}:intercept")]
            b1 = x[m.fixed_names.index(f"cause{j}:Age")]
            g = th[lay.index(f"gamma[cause{j}<-vw]")]
            k = th[lay.index(f"kappa[cause{j}<-vw]")]
            for i, rec in enumerate(data1.survival):
                v, w = x[vw.offset + 2 * i], x[vw.offset + 2 * i + 1]
                ref = b0 + b1 * rec.covariates["Age"] + g * v + k * w * rec.time
                assert eta[rb.start + i] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_deterministic_assembly(data5):
    m1 = assemble(count_competing_risks_model(), data5)
    m2 = assemble(count_competing_risks_model(), data5)
    assert (m1.A_fixed != m2.A_fixed).nnz == 0
    assert m1.latent_names() == m2.latent_names()


def test_copied_predictor_layout(data5):
    ds = simulate_example5(SimConfig(n_individuals=30, seed=5, gamma=(0.3, -0.1), beta=(0.01, 0.02)))
    m = assemble(copied_predictor_model(family="exponential_surv", marker_family="poisson", n_groups=8), ds)
    assert m.latent[-1].kind == "lp" and m.latent[-1].size == 30
    assert m.hyper_layout.names[-2:] == ["gamma[cause1<-lp:long]", "gamma[cause2<-lp:long]"]


def test_spec_errors(data5):
    bad = ModelSpec((BlockSpec("poisson", (), (Attachment("nope"),)),), (), {})
    with pytest.raises(ConfigError):
        assemble(bad, data5)
    cyc = ModelSpec((BlockSpec("poisson"),), (BlockSpec("exponential_surv"),) * 3, {},
                    (CopyLink("lp:cause1", "long"), CopyLink("lp:long", "cause1")))
    with pytest.raises(ConfigError):
        assemble(cyc, data5)
