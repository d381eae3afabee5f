"""Deep-feature classification benchmark for skin-lesion images.

A frozen pretrained backbone turns each image into a feature vector; small
classical classifiers are trained on those vectors under a stratified
hold-out plus k-fold protocol, with optional training-only augmentation or
SMOTE+ENN rebalancing, and compared with rank-based significance tests.
"""

from .errors import (
    ConfigurationError,
    InputError,
    LeakageError,
    PoxbenchError,
    TrainingError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InputError",
    "LeakageError",
    "PoxbenchError",
    "TrainingError",
    "UsageError",
    "__version__",
]
