"""Deep prototype, Gaussian-mixture and exemplar categorization models."""

from . import autodiff, data, featurenet, heads, optim
from .autodiff import Parameter, Tape, Tensor, backward, grad_check, no_grad
from .data import HumanLabelSet, LabeledDataset
from .errors import (
    ConfigurationError,
    DataError,
    DeepCatError,
    DimensionError,
    DomainError,
    FormatError,
    UsageError,
)
from .eval import ModelSpec, RunMetrics, accuracy, build_model, centers_sweep, human_fit
from .featurenet import FeatureNet, LayerSpec
from .heads import CategorizationHead, Covariance, loss_onehot, posterior
from .optim import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "HumanLabelSet",
    "LabeledDataset",
    "ConfigurationError",
    "DataError",
    "DeepCatError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "UsageError",
    "ModelSpec",
    "RunMetrics",
    "accuracy",
    "build_model",
    "centers_sweep",
    "human_fit",
    "FeatureNet",
    "LayerSpec",
    "CategorizationHead",
    "Covariance",
    "loss_onehot",
    "posterior",
    "TrainConfig",
    "fit",
    "autodiff",
    "data",
    "featurenet",
    "heads",
    "optim",
]
