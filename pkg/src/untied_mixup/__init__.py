"""MixUp, directional adversarial training and Untied MixUp on target-linear losses."""

from .losses import LossKind, TargetEmbedding, loss, make_embedding
from .model import Model, forward, init_model
from .policy import (
    Policy,
    UntiedScheme,
    WeightingFunction,
    beta_policy,
    identity_weighting,
    point_policy,
    sample_policy,
    transform_D,
    transform_Du,
    transform_U,
    uniform_policy,
)

__version__ = "0.1.0"
