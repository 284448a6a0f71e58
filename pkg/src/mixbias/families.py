"""Regular parametric families used as the basic model.

Every family works on scalar observations and a parameter vector of
length ``param_dim`` (1 or 2).  Densities are with respect to Lebesgue
measure on an interval or counting measure on the nonnegative integers.

Config identifiers and parameter names:

=====================  ======================  =====================
identifier             component parameters    family-level params
=====================  ======================  =====================
``gaussian_fixed_var`` ``mean``                ``variance`` (def. 1)
``gaussian_mean_var``  ``mean``, ``variance``  none
``poisson``            ``rate``                none
``exponential``        ``rate``                none
=====================  ======================  =====================
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy import special

from mixbias.rng import as_generator

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Parameter outside the open parameter set or observation outside the support."""


@dataclass(frozen=True)
class SupportSpec:
    kind: str  # "continuous" or "counting"
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.kind not in ("continuous", "counting"):
            raise ValueError(f"unknown support kind {self.kind!r}")
        if self.kind == "continuous" and not self.lower < self.upper:
            raise ValueError("continuous support needs lower < upper")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.isfinite(x) & (x >= self.lower) & (x <= self.upper)
        if self.kind == "counting":
            ok &= x == np.floor(x)
        return ok


REALS = SupportSpec("continuous")
HALF_LINE = SupportSpec("continuous", 0.0, math.inf)
COUNTS = SupportSpec("counting", 0.0, math.inf)


class BasicFamily:
    """Base class; subclasses fill in the vectorised ``_logpdf``/``_score``."""

    name: ClassVar[str] = ""
    param_names: ClassVar[tuple[str, ...]] = ()
    support: ClassVar[SupportSpec] = REALS

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.config() == other.config()

    def __hash__(self):
        return hash((type(self), tuple(sorted(self.config().items()))))

    def config(self) -> dict:
        """Family-level constants, as they appear in an experiment config."""
        return {}

    # -- validation ---------------------------------------------------------

    def check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.param_dim,):
            raise DomainError(
                f"{self.name}: parameter must have {self.param_dim} coordinate(s) "
                f"{self.param_names}, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self.name}: non-finite parameter {theta.tolist()}")
        if not self.in_domain(theta):
            raise DomainError(f"{self.name}: parameter {theta.tolist()} outside domain")
        return theta

    def in_domain(self, theta: np.ndarray) -> bool:
        return True

    def check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bad = ~self.support.contains(x)
        if np.any(bad):
            first = x[bad].flat[0]
            raise DomainError(f"{self.name}: observation {first!r} outside support")
        return x

    # -- public surface -----------------------------------------------------

    def log_density(self, x, theta):
        theta = self.check_theta(theta)
        x = self.check_x(x)
        return _unwrap(self._logpdf(x, theta))

    def density(self, x, theta):
        return np.exp(self.log_density(x, theta))

    def score(self, x, theta):
        """Gradient of the log density in theta; shape ``x.shape + (p,)``."""
        theta = self.check_theta(theta)
        x = self.check_x(x)
        return self._score(x, theta)

    def sample(self, theta, n: int, rng) -> np.ndarray:
        if n < 1:
            raise ValueError(f"sample size must be >= 1, got {n}")
        theta = self.check_theta(theta)
        return self._sample(theta, int(n), as_generator(rng))

    def cdf(self, x, theta):
        theta = self.check_theta(theta)
        return self._cdf(np.asarray(x, dtype=float), theta)

    def location_scale(self, theta) -> tuple[float, float]:
        """A centre and spread used to place quadrature and root scans."""
        raise NotImplementedError

    def default_interval(self, coord: int = 0) -> tuple[float, float]:
        """Open interval of admissible values for one parameter coordinate."""
        return (-math.inf, math.inf)

    # -- subclass hooks -----------------------------------------------------

    def _logpdf(self, x, theta):
        raise NotImplementedError

    def _score(self, x, theta):
        raise NotImplementedError

    def _sample(self, theta, n, rng):
        raise NotImplementedError

    def _cdf(self, x, theta):
        raise NotImplementedError


def _unwrap(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


class GaussianMeanKnownVar(BasicFamily):
    """Normal location family with a fixed, known variance."""

    name = "gaussian_fixed_var"
    param_names = ("mean",)

    def __init__(self, variance: float = 1.0):
        variance = float(variance)
        if not (math.isfinite(variance) and variance > 0):
            raise DomainError(f"variance must be positive, got {variance}")
        self.variance = variance

    def __repr__(self):
        return f"GaussianMeanKnownVar(variance={self.variance!r})"

    def config(self):
        return {"variance": self.variance}

    def _logpdf(self, x, theta):
        z = x - theta[0]
        return -0.5 * z * z / self.variance - 0.5 * math.log(self.variance) - LOG_SQRT_2PI

    def _score(self, x, theta):
        return ((x - theta[0]) / self.variance)[..., None]

    def _sample(self, theta, n, rng):
        return rng.normal(theta[0], math.sqrt(self.variance), size=n)

    def _cdf(self, x, theta):
        return special.ndtr((x - theta[0]) / math.sqrt(self.variance))

    def location_scale(self, theta):
        theta = self.check_theta(theta)
        return float(theta[0]), math.sqrt(self.variance)


class GaussianMeanVar(BasicFamily):
    """Normal family with unknown mean and variance (variance as nuisance)."""

    name = "gaussian_mean_var"
    param_names = ("mean", "variance")

    def in_domain(self, theta):
        return theta[1] > 0

    def default_interval(self, coord=0):
        return (-math.inf, math.inf) if coord == 0 else (0.0, math.inf)

    def _logpdf(self, x, theta):
        mu, v = theta
        z = x - mu
        return -0.5 * z * z / v - 0.5 * math.log(v) - LOG_SQRT_2PI

    def _score(self, x, theta):
        mu, v = theta
        z = x - mu
        return np.stack([z / v, 0.5 * (z * z / v - 1.0) / v], axis=-1)

    def _sample(self, theta, n, rng):
        return rng.normal(theta[0], math.sqrt(theta[1]), size=n)

    def _cdf(self, x, theta):
        return special.ndtr((x - theta[0]) / math.sqrt(theta[1]))

    def location_scale(self, theta):
        theta = self.check_theta(theta)
        return float(theta[0]), math.sqrt(theta[1])


class Poisson(BasicFamily):
    name = "poisson"
    param_names = ("rate",)
    support = COUNTS

    def in_domain(self, theta):
        return theta[0] > 0

    def default_interval(self, coord=0):
        return (0.0, math.inf)

    def _logpdf(self, x, theta):
        lam = theta[0]
        return x * math.log(lam) - lam - special.gammaln(x + 1.0)

    def _score(self, x, theta):
        return (x / theta[0] - 1.0)[..., None]

    def _sample(self, theta, n, rng):
        return rng.poisson(theta[0], size=n).astype(float)

    def _cdf(self, x, theta):
        return special.pdtr(np.floor(x), theta[0])

    def location_scale(self, theta):
        theta = self.check_theta(theta)
        return float(theta[0]), math.sqrt(theta[0])


class Exponential(BasicFamily):
    """Exponential family parametrised by its rate."""

    name = "exponential"
    param_names = ("rate",)
    support = HALF_LINE

    def in_domain(self, theta):
        return theta[0] > 0

    def default_interval(self, coord=0):
        return (0.0, math.inf)

    def _logpdf(self, x, theta):
        r = theta[0]
        return math.log(r) - r * x

    def _score(self, x, theta):
        return (1.0 / theta[0] - x)[..., None]

    def _sample(self, theta, n, rng):
        return rng.exponential(1.0 / theta[0], size=n)

    def _cdf(self, x, theta):
        return -np.expm1(-theta[0] * np.maximum(x, 0.0))

    def location_scale(self, theta):
        theta = self.check_theta(theta)
        return 1.0 / theta[0], 1.0 / theta[0]


FAMILIES = {
    cls.name: cls for cls in (GaussianMeanKnownVar, GaussianMeanVar, Poisson, Exponential)
}


def get_family(name: str, **params) -> BasicFamily:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise DomainError(
            f"unknown family {name!r}; expected one of {sorted(FAMILIES)}"
        ) from None
    return cls(**params)


def log_density(family: BasicFamily, x, theta):
    return family.log_density(x, theta)


def score(family: BasicFamily, x, theta):
    return family.score(x, theta)


def sample(family: BasicFamily, theta, n: int, seed) -> np.ndarray:
    return family.sample(theta, n, seed)
