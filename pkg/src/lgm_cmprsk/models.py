"""Ready-made model specifications for the bundled generators."""

from __future__ import annotations

from .gmrf import PriorSpec
from .stacker import Attachment, BlockSpec, CopyLink, EffectDecl, ModelSpec


def count_competing_risks_model(n_causes=3, family="exponential_surv", n_groups=50,
                                alpha_fixed=None, covariates=("Age",)) -> ModelSpec:
    """Poisson marker with an rw2 time trend and a shared iid intercept ``u``
    copied, with an estimated scaling, into every cause-specific hazard.

    ``alpha_fixed`` pins every Weibull shape to that value.
    """
    prior = None if alpha_fixed is None else PriorSpec.fixed(alpha_fixed)
    long_block = BlockSpec("poisson", ("intercept",),
                           (Attachment("trend", index="time", groups=n_groups), Attachment("u")))
    causes = tuple(BlockSpec(family, ("intercept", *covariates), prior=prior) for _ in range(n_causes))
    effects = {
        "trend": EffectDecl("rw2", priors={"tau": PriorSpec.pc_prec(1.0, 0.01)}),
        "u": EffectDecl("iid", priors={"tau": PriorSpec.pc_prec(1.0, 0.01)}),
    }
    links = tuple(CopyLink("u", f"cause{j}") for j in range(1, n_causes + 1))
    return ModelSpec((long_block,), causes, effects, links)


def intercept_slope_model(n_causes=3, family="weibull_surv", covariates=("Age",)) -> ModelSpec:
    """Poisson marker with a bivariate (intercept, slope) effect; each cause
    receives gamma_j * v + kappa_j * w * time."""
    long_block = BlockSpec("poisson", ("intercept",), (Attachment("vw"),))
    causes = tuple(BlockSpec(family, ("intercept", *covariates)) for _ in range(n_causes))
    effects = {"vw": EffectDecl("iid2d")}
    links = tuple(CopyLink("vw", f"cause{j}") for j in range(1, n_causes + 1))
    return ModelSpec((long_block,), causes, effects, links)


def copied_predictor_model(n_causes=2, family="weibull_surv", n_groups=20,
                           marker_family="gaussian", covariates=("Age",)) -> ModelSpec:
    """Smooth marker trajectory whose whole linear predictor (per individual)
    is shared with the cause-specific hazards through scalings gamma_j."""
    long_block = BlockSpec(marker_family, ("intercept",),
                           (Attachment("trend", index="time", groups=n_groups), Attachment("u")))
    causes = tuple(BlockSpec(family, ("intercept", *covariates)) for _ in range(n_causes))
    effects = {
        "trend": EffectDecl("rw2", priors={"tau": PriorSpec.pc_prec(1.0, 0.01)}),
        "u": EffectDecl("iid", priors={"tau": PriorSpec.pc_prec(1.0, 0.01)}),
    }
    links = tuple(CopyLink("lp:long", f"cause{j}") for j in range(1, n_causes + 1))
    return ModelSpec((long_block,), causes, effects, links)
