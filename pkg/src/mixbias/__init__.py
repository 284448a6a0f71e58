"""Score-function bias of finite mixed models: families, mixtures,
expectation engines, estimating equations and consistency experiments."""

from mixbias.families import (
    DomainError,
    Exponential,
    GaussianMeanKnownVar,
    GaussianMeanVar,
    Poisson,
    SupportSpec,
    get_family,
)
from mixbias.mixture import (
    MixedModel,
    SingularEvaluation,
    contains_mixture,
    mixture_density,
    mixture_score,
    sample_mixed,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Exponential",
    "GaussianMeanKnownVar",
    "GaussianMeanVar",
    "MixedModel",
    "Poisson",
    "SingularEvaluation",
    "SupportSpec",
    "contains_mixture",
    "get_family",
    "mixture_density",
    "mixture_score",
    "sample_mixed",
]
