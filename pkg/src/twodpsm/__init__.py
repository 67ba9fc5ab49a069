"""Two-dimensional propensity score matching for repeated cross-sections."""

from .core import (
    DEFAULT_SCHEMES,
    Group,
    GroupLabel,
    MatchedQuad,
    Metric,
    Observation,
    Pair,
    Period,
    Quad,
    Scheme,
    SchemeTag,
    partition,
    validate_quad,
)
from .protocol import ProtocolConfig, apply_scheme, run_1d, run_2dpsm

__version__ = "0.1.0"
