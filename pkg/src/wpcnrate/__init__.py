"""Rate control for wireless-powered communication links with a battery-less
sensor: fixed-rate, charge-aware and full-CSI schemes under asymptotic and
finite-blocklength error models."""

from . import channel, fbl, schemes, specfun
from .channel import FadingParams, LinkBudget, SystemParams
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DomainError,
    InfeasibleApproximationError,
    InfeasibleError,
    RangeError,
    UnsupportedConfigurationError,
)
from .schemes import ReliabilityTarget

__version__ = "0.1.0"
