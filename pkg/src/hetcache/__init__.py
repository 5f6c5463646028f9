"""Learning-based random caching in heterogeneous small-cell networks."""
from .model import (
    CachingStrategy,
    ConfigError,
    InsufficientDataError,
    NetworkConfig,
    ParameterDomainError,
    ParametricFamily,
    PopularityProfile,
    validate,
    zipf_profile,
)

__version__ = "0.1.0"
