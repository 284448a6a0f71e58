"""Finite mixed models: a basic family, K component parameters and a
row-stochastic I x K mixing matrix.

Row ``i`` of the mixing matrix gives observation ``i`` the density
``sum_j pi[i, j] * p(x; theta_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mixbias.families import BasicFamily, DomainError
from mixbias.rng import MEMBERSHIP, SAMPLE, stream

ROW_SUM_TOL = 1e-12
DISTINCT_TOL = 1e-9
DEFAULT_MIXTURE_TOL = 1e-9


def logsumexp(a, axis=0):
    """Max-shifted log-sum-exp over a short axis; all -inf gives -inf."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)


class SingularEvaluation(ArithmeticError):
    """Mixture density vanishes at the evaluation point."""


class MixingMatrix:
    def __init__(self, values):
        values = np.array(values, dtype=float, ndmin=2)
        if values.ndim != 2 or values.size == 0:
            raise DomainError("mixing matrix must be a non-empty 2-d array")
        if not np.all(np.isfinite(values)):
            raise DomainError("mixing matrix has non-finite entries")
        if np.any(values < 0) or np.any(values > 1):
            raise DomainError("mixing matrix entries must lie in [0, 1]")
        sums = values.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise DomainError(f"row {bad[0]} of the mixing matrix sums to {sums[bad[0]]!r}, not 1")
        values.setflags(write=False)
        self.values = values

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, idx):
        return self.values[idx]

    def __repr__(self):
        return f"MixingMatrix({self.values.tolist()!r})"

    @classmethod
    def from_pattern(cls, pattern, rows: int, cols: int, assignment=None) -> "MixingMatrix":
        """Build an I x K matrix from a named pattern or a list of rows.

        ``"identity"``: row i is the unit vector of ``assignment[i]``
        (default ``i mod K``).  ``"uniform"``: every row is 1/K.
        ``"partial:<f>"``: the first ``round(f * I)`` rows are uniform and
        the rest follow the identity pattern.  A list of rows is tiled
        cyclically to I rows.
        """
        if rows < 1 or cols < 1:
            raise DomainError("pattern needs at least one row and one column")
        if assignment is None:
            assignment = np.arange(rows) % cols
        assignment = np.asarray(assignment, dtype=int)
        if assignment.shape != (rows,) or np.any((assignment < 0) | (assignment >= cols)):
            raise DomainError("assignment must give a component index for every row")

        if isinstance(pattern, str):
            identity = np.zeros((rows, cols))
            identity[np.arange(rows), assignment] = 1.0
            if pattern == "identity":
                return cls(identity)
            if pattern == "uniform":
                return cls(np.full((rows, cols), 1.0 / cols))
            if pattern.startswith("partial:"):
                try:
                    frac = float(pattern.split(":", 1)[1])
                except ValueError:
                    raise DomainError(f"malformed pattern {pattern!r}") from None
                if not 0.0 <= frac <= 1.0:
                    raise DomainError(f"partial fraction must lie in [0, 1], got {frac}")
                m = int(round(frac * rows))
                identity[:m] = 1.0 / cols
                return cls(identity)
            raise DomainError(f"unknown mixing pattern {pattern!r}")

        base = np.array(pattern, dtype=float, ndmin=2)
        if base.shape[1] != cols:
            raise DomainError(f"mixing rows have {base.shape[1]} columns, expected {cols}")
        reps = -(-rows // base.shape[0])
        return cls(np.tile(base, (reps, 1))[:rows])


def contains_mixture(mixing, tol: float = DEFAULT_MIXTURE_TOL) -> bool:
    """True when some entry lies strictly inside ``(tol, 1 - tol)``."""
    values = mixing.values if isinstance(mixing, MixingMatrix) else np.asarray(mixing, dtype=float)
    return bool(np.any((values > tol) & (values < 1.0 - tol)))


@dataclass(frozen=True, eq=False)
class MixedModel:
    family: BasicFamily
    components: tuple  # K parameter vectors
    mixing: MixingMatrix

    def __post_init__(self):
        comps = tuple(self.family.check_theta(t) for t in self.components)
        if not comps:
            raise DomainError("need at least one component")
        for a in range(len(comps)):
            for b in range(a):
                if np.max(np.abs(comps[a] - comps[b])) <= DISTINCT_TOL:
                    raise DomainError(f"components {b} and {a} coincide")
        for c in comps:
            c.setflags(write=False)
        object.__setattr__(self, "components", comps)
        mixing = self.mixing
        if not isinstance(mixing, MixingMatrix):
            mixing = MixingMatrix(mixing)
            object.__setattr__(self, "mixing", mixing)
        if mixing.cols != len(comps):
            raise DomainError(
                f"mixing matrix has {mixing.cols} columns but there are {len(comps)} components"
            )

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def I(self) -> int:  # noqa: E743
        return self.mixing.rows

    def with_component(self, k: int, theta) -> "MixedModel":
        comps = list(self.components)
        comps[k] = theta
        return MixedModel(self.family, tuple(comps), self.mixing)

    def with_mixing(self, mixing) -> "MixedModel":
        return MixedModel(self.family, self.components, mixing)

    def contains_mixture(self, tol: float = DEFAULT_MIXTURE_TOL) -> bool:
        return contains_mixture(self.mixing, tol)

    def anchors(self) -> tuple[list[float], float]:
        """Component centres and the largest component spread."""
        locs, scales = zip(*(self.family.location_scale(c) for c in self.components))
        return list(locs), max(scales)

    def summary(self) -> dict:
        return {
            "family": self.family.name,
            "family_params": self.family.config(),
            "components": [c.tolist() for c in self.components],
            "mixing": self.mixing.values.tolist(),
        }

    # -- evaluation ---------------------------------------------------------

    def _check_row(self, i):
        i = np.asarray(i, dtype=int)
        if np.any((i < 0) | (i >= self.I)):
            raise DomainError(f"row index out of range for I={self.I}")
        return i

    def _log_weighted(self, i, x, comps=None):
        """log(pi[i, j]) + log p(x; theta_j), component axis first: ``(K,) + x.shape``."""
        fam = self.family
        comps = self.components if comps is None else comps
        logp = np.stack([fam._logpdf(x, c) for c in comps], axis=0)
        with np.errstate(divide="ignore"):
            logpi = np.log(np.moveaxis(self.mixing.values[i], -1, 0))
        pad = max(np.ndim(x) - np.ndim(i), 0)
        return logpi.reshape((len(comps),) + (1,) * pad + np.shape(i)) + logp

    def log_density(self, i, x):
        i = self._check_row(i)
        x = self.family.check_x(x)
        return _scalar(logsumexp(self._log_weighted(i, x)))

    def density(self, i, x):
        return np.exp(self.log_density(i, x))

    def score(self, i, x, k: int):
        """Gradient of the row-i log mixture density in theta_k.

        Computed as ``r_k(x) * S(x; theta_k)`` with the posterior weight
        ``r_k = pi_ik p_k / sum_j pi_ij p_j`` evaluated in log space.
        """
        if not 0 <= k < self.K:
            raise DomainError(f"component index {k} out of range for K={self.K}")
        return self.score_at(i, x, k, self.components[k])

    def score_at(self, i, x, k: int, theta_k):
        """``score`` with theta_k replaced; the other components stay put.

        No distinctness check, so estimating equations may pass through
        the other components' values.
        """
        theta_k = self.family.check_theta(theta_k)
        comps = tuple(theta_k if j == k else c for j, c in enumerate(self.components))
        return self._score_with(i, x, k, comps)

    def _score_with(self, i, x, k, comps):
        i = self._check_row(i)
        x = self.family.check_x(x)
        lw = self._log_weighted(i, x, comps)
        lse = logsumexp(lw)
        if np.any(np.isneginf(lse)):
            where = np.asarray(x)[np.isneginf(lse)].flat[0] if np.ndim(x) else float(x)
            raise SingularEvaluation(f"mixture density is zero at x={where!r}")
        with np.errstate(invalid="ignore"):
            ratio = np.exp(lw[k] - lse)
        ratio = np.where(np.isneginf(lw[k]), 0.0, ratio)
        return ratio[..., None] * self.family._score(x, comps[k])

    def density_gradient(self, i, x, k: int):
        """d/d theta_k of the row-i mixture density: pi_ik p_k S_k."""
        i = self._check_row(i)
        x = self.family.check_x(x)
        fam = self.family
        theta = self.components[k]
        w = self.mixing.values[i, k] * np.exp(fam._logpdf(x, theta))
        return np.asarray(w)[..., None] * fam._score(x, theta)


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def mixture_density(model: MixedModel, i, x):
    return model.density(i, x)


def mixture_score(model: MixedModel, i, x, k: int):
    return model.score(i, x, k)


def sample_mixed(
    model: MixedModel,
    regime: str = "random-membership",
    seed: int = 0,
    assignment=None,
    rows=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one observation per row of the mixing matrix.

    ``fixed-membership`` draws observation i from ``theta_{assignment[i]}``;
    ``random-membership`` draws the membership of i from row i of the mixing
    matrix first.  Returns ``(observations, memberships)``.

    ``rows`` restricts sampling to a subset (or repetition) of row indices.
    """
    rows = np.arange(model.I) if rows is None else model._check_row(rows)
    n = rows.size
    pi = model.mixing.values[rows]
    if regime == "fixed-membership":
        if assignment is None:
            raise ValueError("fixed-membership sampling needs an assignment vector")
        member = np.asarray(assignment, dtype=int)
        if member.shape != (n,) or np.any((member < 0) | (member >= model.K)):
            raise DomainError("assignment must name a component for every row")
        degenerate = ~np.any((pi > DEFAULT_MIXTURE_TOL) & (pi < 1 - DEFAULT_MIXTURE_TOL), axis=1)
        clash = degenerate & (pi[np.arange(n), member] < 0.5)
        if np.any(clash):
            raise DomainError(
                f"row {rows[np.flatnonzero(clash)[0]]} is degenerate but the assignment "
                "points at a component with zero weight"
            )
    elif regime == "random-membership":
        u = stream(seed, MEMBERSHIP).random(n)
        cum = np.cumsum(pi, axis=1)
        cum[:, -1] = 1.0
        member = (u[:, None] >= cum).sum(axis=1)
    else:
        raise ValueError(f"unknown data regime {regime!r}")

    x = np.empty(n)
    for k in range(model.K):
        idx = np.flatnonzero(member == k)
        if idx.size:
            x[idx] = model.family.sample(model.components[k], idx.size, stream(seed, SAMPLE, k))
    return x, member


__all__ = [
    "MixedModel",
    "MixingMatrix",
    "SingularEvaluation",
    "contains_mixture",
    "mixture_density",
    "mixture_score",
    "sample_mixed",
]
