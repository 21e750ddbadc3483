"""Bayesian Confidence Propagation Neural Network with native explanation primitives."""

from .core import (
    ActivationState,
    Network,
    NetworkConfig,
    StackedNetwork,
    TraceState,
    WeightView,
    compute_support,
    forward,
    one_hot,
    soft_wta,
    weights_from_traces,
)
from .errors import (
    BCPNNError,
    ConfigurationError,
    InvariantViolation,
    SchemaError,
    SizeCapError,
    UndefinedUsageError,
)

__version__ = "0.1.0"
