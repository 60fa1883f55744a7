"""Statistical radio maps for URLLC rate selection.

Builds maps of the eps-outage capacity from simulated channel measurements,
either over geographic coordinates or over a learned channel-chart latent
space, and selects transmission rates with a meta-probability guarantee.
"""

from . import chart, dataio, gpmap, harness, propagation, rateselect, stats
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    FitError,
    IllConditionedError,
    InsufficientSamplesError,
    NumericalError,
    ParseError,
    StatmapError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "chart",
    "dataio",
    "gpmap",
    "harness",
    "propagation",
    "rateselect",
    "stats",
    "StatmapError",
    "ConfigurationError",
    "ParseError",
    "NumericalError",
    "InsufficientSamplesError",
    "DegenerateInputError",
    "FitError",
    "IllConditionedError",
    "TrainingError",
    "__version__",
]
