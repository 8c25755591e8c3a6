"""hmoe - hypernetwork mixture of experts with latent domain discovery."""

from .version import __version__

# Runtime initialization
from .main import init_runtime, shutdown_runtime

# Model and training
from .model import Architecture, HMOEModel
from .losses import Batch, LossWeights, total_loss
from .training import MixupSwitch, TrainingResult, VariantConfig, run_training
from .inference import Prediction, evaluate, predict_mix, predict_ood

# Data and experiments
from .data import Dataset, gen_synthetic_domains, gen_toy_regression, split_train_val
from .experiment import ExperimentConfig, parse_config, rng_streams

# Tracing decorators and utilities
from .tracing import (
    observe,
    trace_context,
    add_span_attribute,
    add_span_event,
)

__all__ = [
    "__version__",
    # Initialization
    "init_runtime",
    "shutdown_runtime",
    # Model and training
    "Architecture",
    "HMOEModel",
    "Batch",
    "LossWeights",
    "total_loss",
    "MixupSwitch",
    "TrainingResult",
    "VariantConfig",
    "run_training",
    "Prediction",
    "evaluate",
    "predict_mix",
    "predict_ood",
    # Data and experiments
    "Dataset",
    "gen_synthetic_domains",
    "gen_toy_regression",
    "split_train_val",
    "ExperimentConfig",
    "parse_config",
    "rng_streams",
    # Tracing
    "observe",
    "trace_context",
    "add_span_attribute",
    "add_span_event",
]
