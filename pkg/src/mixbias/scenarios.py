"""Ready-made models: the two-component Gaussian reference case and
random degenerate / mixing configurations for property checks."""

from __future__ import annotations

import numpy as np

from mixbias.families import (
    BasicFamily,
    Exponential,
    GaussianMeanKnownVar,
    GaussianMeanVar,
    Poisson,
)
from mixbias.mixture import MixedModel, MixingMatrix


def canonical_model() -> MixedModel:
    """N(0, 1) and N(2, 1) mixed half and half in a single row."""
    return MixedModel(GaussianMeanKnownVar(1.0), ([0.0], [2.0]), [[0.5, 0.5]])


def builtin_families() -> list[BasicFamily]:
    return [GaussianMeanKnownVar(1.0), GaussianMeanVar(), Poisson(), Exponential()]


def random_components(family: BasicFamily, K: int, rng: np.random.Generator,
                      min_separation: float = 1.0) -> list[np.ndarray]:
    """K parameter points, consecutive ones at least ``min_separation`` apart
    in max-coordinate distance."""
    name = family.name
    if name == "gaussian_fixed_var":
        start = rng.uniform(-2.0, 2.0)
        steps = rng.uniform(min_separation, min_separation + 2.0, K - 1)
        return [np.array([v]) for v in start + np.concatenate([[0.0], np.cumsum(steps)])]
    if name == "gaussian_mean_var":
        start = rng.uniform(-2.0, 2.0)
        steps = rng.uniform(min_separation, min_separation + 2.0, K - 1)
        means = start + np.concatenate([[0.0], np.cumsum(steps)])
        variances = rng.uniform(0.5, 2.0, K)
        return [np.array([m, v]) for m, v in zip(means, variances)]
    if name in ("poisson", "exponential"):
        lo, hi = (0.5, 4.0) if name == "poisson" else (0.5, 2.0)
        start = rng.uniform(lo, hi)
        steps = rng.uniform(min_separation, min_separation + 3.0, K - 1)
        return [np.array([v]) for v in start + np.concatenate([[0.0], np.cumsum(steps)])]
    raise ValueError(f"no generator for family {name!r}")


def random_degenerate_model(family: BasicFamily, rng: np.random.Generator,
                            max_K: int = 4, max_rows: int = 4) -> MixedModel:
    K = int(rng.integers(1, max_K + 1))
    rows = int(rng.integers(1, max_rows + 1))
    comps = random_components(family, K, rng)
    assignment = rng.integers(0, K, rows)
    return MixedModel(family, tuple(comps), MixingMatrix.from_pattern("identity", rows, K, assignment))


def random_mixture_model(family: BasicFamily, rng: np.random.Generator,
                         low: float = 0.1, high: float = 0.9) -> MixedModel:
    """Two components, one row with weights in [low, high]."""
    comps = random_components(family, 2, rng)
    p = rng.uniform(low, high)
    return MixedModel(family, tuple(comps), [[p, 1.0 - p]])
