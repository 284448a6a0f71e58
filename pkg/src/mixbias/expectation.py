"""Expectation engines.

``expect_quadrature`` integrates ``g(x) * w(x)`` over a support: globally
adaptive 15-point Gauss-Kronrod on continuous supports (infinite ends
are cut where the envelope density falls below a floor derived from the
truncation mass) and plain summation on the nonnegative integers.
``expect_mc`` is the seeded Monte Carlo counterpart.

Integrands are vectorised: they take a 1-d array of points and return
either shape ``(n,)`` or ``(n, d)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from mixbias.families import BasicFamily, SupportSpec
from mixbias.rng import MONTE_CARLO, stream

EPS = np.finfo(float).eps

_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
# 15 abscissae on [-1, 1] and matching weights
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_KW = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_GW = np.zeros(15)
_GW[[1, 3, 5]] = _WG[:3]
_GW[7] = _WG[3]
_GW[[13, 11, 9]] = _WG[:3]


class QuadratureError(ArithmeticError):
    """Adaptive quadrature or summation did not reach the requested tolerance."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


class MonteCarloError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 2000
    truncation_mass: float = 1e-14

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if not 0 < self.truncation_mass < 1:
            raise ValueError("truncation_mass must lie in (0, 1)")


@dataclass(frozen=True)
class MonteCarloSpec:
    n: int
    seed: int = 0
    batch: int = 65536

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("Monte Carlo draw count must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


class Estimate(NamedTuple):
    value: float | np.ndarray
    error: float


def _weighted(integrand, weight, x):
    w = np.asarray(weight(x), dtype=float)
    g = np.asarray(integrand(x), dtype=float)
    if g.ndim == 1:
        return np.where(w > 0, g * w, 0.0)
    return np.where((w > 0)[:, None], g * w[:, None], 0.0)


def _gk15(f, a, b):
    """One Kronrod panel: per-coordinate values and the worst error estimate."""
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    fx = f(c + h * _NODES)
    if fx.ndim == 1:
        fx = fx[:, None]
    if not np.all(np.isfinite(fx)):
        bad = (c + h * _NODES)[~np.all(np.isfinite(fx), axis=1)][0]
        raise QuadratureError(f"integrand is not finite at x={bad!r}")
    k = h * (_KW @ fx)
    g = h * (_GW @ fx)
    resabs = abs(h) * (_KW @ np.abs(fx))
    mean = k / (2 * h) if h else k
    resasc = abs(h) * (_KW @ np.abs(fx - mean))
    err = np.abs(k - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    err = np.maximum(err, 50.0 * EPS * resabs)
    return k, float(err.max())


def _find_edge(env, start, step, floor, direction, limit):
    """Walk from ``start`` until ``env`` drops below ``floor``; refine by bisection."""
    inner = start
    for j in range(1, 100_000):
        outer = start + direction * j * step
        if direction < 0 and outer <= limit:
            return limit
        if direction > 0 and outer >= limit:
            return limit
        if env(np.array([outer]))[0] < floor:
            break
        inner = outer
    else:
        raise QuadratureError("could not locate the truncation point of the support")
    for _ in range(60):
        mid = 0.5 * (inner + outer)
        if env(np.array([mid]))[0] < floor:
            outer = mid
        else:
            inner = mid
    return outer


def truncation_bounds(envelope, support: SupportSpec, spec: QuadratureSpec,
                      anchors: Sequence[float], scale: float) -> tuple[float, float]:
    lo_anchor = max(min(anchors), support.lower)
    hi_anchor = min(max(anchors), support.upper)
    floor = 1e-2 * spec.truncation_mass / scale
    a, b = support.lower, support.upper
    if math.isinf(a):
        a = _find_edge(envelope, lo_anchor, scale, floor, -1, a)
    if math.isinf(b):
        b = _find_edge(envelope, hi_anchor, scale, floor, +1, b)
    return a, b


def _adaptive(f, a, b, spec: QuadratureSpec, breakpoints=()):
    pts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    edges = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        edges.extend(np.linspace(lo, hi, 9)[:-1].tolist())
    edges.append(b)

    heap = []
    panels = {}
    for n, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        val, err = _gk15(f, lo, hi)
        panels[n] = (lo, hi, val, err)
        heapq.heappush(heap, (-err, n))
    counter = len(panels)

    def totals():
        # sum in left-to-right order for a reproducible result
        ordered = sorted(panels.values(), key=lambda p: p[0])
        vals = np.array([p[2] for p in ordered])
        value = np.array([math.fsum(col) for col in vals.T])
        error = math.fsum(p[3] for p in ordered)
        return value, error

    value, error = totals()
    subdivisions = 0
    while error > max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(value)))):
        if subdivisions >= spec.max_subdivisions:
            raise QuadratureError(
                f"no convergence after {subdivisions} subdivisions "
                f"(estimate {value.tolist()}, error {error:.3g})",
                value=value, error=error,
            )
        _, n = heapq.heappop(heap)
        lo, hi, old_val, old_err = panels.pop(n)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise QuadratureError("interval collapsed below float resolution",
                                  value=value, error=error)
        for sub in ((lo, mid), (mid, hi)):
            val, err = _gk15(f, *sub)
            panels[counter] = (sub[0], sub[1], val, err)
            heapq.heappush(heap, (-err, counter))
            counter += 1
            value = value + val
            error += err
        value = value - old_val
        error -= old_err
        subdivisions += 1
    return totals()


def _summation(f, envelope, support, spec, anchors, scale):
    start = int(max(support.lower, 0))
    chunk = max(64, int(max(anchors) + 10 * scale) - start + 1)
    parts, mass, last_max = [], [], 0.0
    hi_anchor = max(anchors)
    x0 = start
    while True:
        xs = np.arange(x0, x0 + chunk, dtype=float)
        if xs[-1] > support.upper:
            xs = xs[xs <= support.upper]
        vals = f(xs)
        if vals.ndim == 1:
            vals = vals[:, None]
        if not np.all(np.isfinite(vals)):
            bad = xs[~np.all(np.isfinite(vals), axis=1)][0]
            raise QuadratureError(f"summand is not finite at x={bad!r}")
        env = np.asarray(envelope(xs), dtype=float)
        parts.append(vals)
        mass.append(math.fsum(env))
        last_max = float(np.max(np.abs(vals[-8:])))
        tail = 1.0 - math.fsum(mass)
        done = xs[-1] >= hi_anchor and (tail < spec.truncation_mass or env[-1] < 1e-300)
        if done or xs[-1] >= support.upper:
            break
        x0 += chunk
        if x0 > 1e8:
            raise QuadratureError("counting sum did not reach the truncation mass")
    allv = np.concatenate(parts)
    value = np.array([math.fsum(col) for col in allv.T])
    rounding = 4 * EPS * float(np.max(np.sum(np.abs(allv), axis=0)))
    return value, float(rounding + last_max)


def expect_quadrature(
    integrand: Callable,
    weight: Callable,
    support: SupportSpec,
    spec: QuadratureSpec | None = None,
    *,
    anchors: Sequence[float] = (0.0,),
    scale: float = 1.0,
    envelope: Callable | None = None,
) -> Estimate:
    """Integrate ``integrand * weight`` over ``support``.

    ``anchors`` are points inside the bulk of the weight (component
    centres) and ``scale`` its spread; infinite ends are located by
    walking outward from the extreme anchors.  ``envelope`` is the
    probability density used to place the cut (defaults to ``weight``).
    Points where the weight is exactly zero contribute nothing.
    """
    spec = spec or QuadratureSpec()
    envelope = envelope or weight
    f = lambda x: _weighted(integrand, weight, x)  # noqa: E731
    if support.kind == "counting":
        value, error = _summation(f, envelope, support, spec, anchors, scale)
    else:
        a, b = truncation_bounds(envelope, support, spec, anchors, scale)
        value, error = _adaptive(f, a, b, spec, breakpoints=anchors)
    return Estimate(value[0] if value.size == 1 else value, error)


def family_expectation(integrand, family: BasicFamily, theta, spec=None) -> Estimate:
    """Expectation of ``integrand`` under ``p(.; theta)``."""
    theta = family.check_theta(theta)
    loc, scale = family.location_scale(theta)
    weight = lambda x: np.exp(family._logpdf(x, theta))  # noqa: E731
    return expect_quadrature(integrand, weight, family.support, spec,
                             anchors=(loc,), scale=scale)


def expect_mc(integrand: Callable, sampler: Callable, spec: MonteCarloSpec) -> Estimate:
    """Sample mean of ``integrand`` over ``spec.n`` draws from ``sampler(m, rng)``.

    Draws come in batches from one stream derived from ``spec.seed``; batch
    moments are merged in order, so the result depends only on ``spec``.
    """
    rng = stream(spec.seed, MONTE_CARLO)
    count, mean, m2 = 0, None, None
    done = 0
    while done < spec.n:
        m = min(spec.batch, spec.n - done)
        draws = sampler(m, rng)
        vals = np.asarray(integrand(draws), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        finite = np.all(np.isfinite(vals), axis=1)
        if not np.all(finite):
            j = int(np.flatnonzero(~finite)[0])
            raise MonteCarloError(
                f"integrand is not finite at draw {done + j} (x={draws[j]!r})"
            )
        b_mean = vals.mean(axis=0)
        b_m2 = ((vals - b_mean) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = m, b_mean, b_m2
        else:
            delta = b_mean - mean
            total = count + m
            mean = mean + delta * (m / total)
            m2 = m2 + b_m2 + delta ** 2 * (count * m / total)
            count = total
        done += m
    if count > 1:
        se = np.sqrt(m2 / (count - 1) / count)
    else:
        se = np.zeros_like(mean)
    value = mean[0] if mean.size == 1 else mean
    return Estimate(value, float(np.max(se)) if se.size == 1 else se)


def family_sampler(family: BasicFamily, theta) -> Callable:
    theta = family.check_theta(theta)
    return lambda n, rng: family.sample(theta, n, rng)


@dataclass(frozen=True)
class Weight:
    """A probability law to take expectations under.

    Bundles the density, its support, placement hints for quadrature
    and a sampler for Monte Carlo.
    """

    density: Callable
    support: SupportSpec
    anchors: tuple
    scale: float
    sampler: Callable
    label: str = ""

    @classmethod
    def of_family(cls, family: BasicFamily, theta) -> "Weight":
        theta = family.check_theta(theta)
        loc, scale = family.location_scale(theta)
        return cls(
            density=lambda x: np.exp(family._logpdf(x, theta)),
            support=family.support,
            anchors=(loc,),
            scale=scale,
            sampler=lambda n, rng: family.sample(theta, n, rng),
            label=f"{family.name}{theta.tolist()}",
        )

    @classmethod
    def of_component(cls, model, k: int) -> "Weight":
        return cls.of_family(model.family, model.components[k])

    @classmethod
    def of_row(cls, model, i: int) -> "Weight":
        """The mixture marginal of row ``i``."""
        from mixbias.mixture import sample_mixed

        anchors, scale = model.anchors()

        def sampler(n, rng):
            seed = int(rng.integers(2**63))
            x, _ = sample_mixed(model, "random-membership", seed, rows=np.full(n, i))
            return x

        return cls(
            density=lambda x: model.density(i, x),
            support=model.family.support,
            anchors=tuple(anchors),
            scale=scale,
            sampler=sampler,
            label=f"mixture row {i}",
        )


def expect(integrand: Callable, weight: Weight, spec: QuadratureSpec | None = None) -> Estimate:
    return expect_quadrature(integrand, weight.density, weight.support, spec,
                             anchors=weight.anchors, scale=weight.scale)
