"""Competing-risks joint models as latent Gaussian models.

Longitudinal markers and cause-specific hazards share latent effects;
inference uses nested Laplace approximations with sparse precisions.
"""

from .data import (
    JointDataset,
    LongitudinalRecord,
    SurvivalRecord,
    load_longitudinal_csv,
    load_survival_csv,
    validate_joint_dataset,
)
from .errors import LgmError
from .inference import FitOptions, FitResult, fit
from .simulate import SimConfig, simulate_example1, simulate_example5
from .stacker import Attachment, BlockSpec, CopyLink, EffectDecl, ModelSpec, assemble

__version__ = "0.1.0"

__all__ = [
    "Attachment",
    "BlockSpec",
    "CopyLink",
    "EffectDecl",
    "FitOptions",
    "FitResult",
    "JointDataset",
    "LgmError",
    "LongitudinalRecord",
    "ModelSpec",
    "SimConfig",
    "SurvivalRecord",
    "assemble",
    "fit",
    "load_longitudinal_csv",
    "load_survival_csv",
    "simulate_example1",
    "simulate_example5",
    "validate_joint_dataset",
]
