"""Inference functions and estimating equations.

An inference function maps an observation and a parameter to a q-vector;
its sample average set to zero defines an estimator.  This module solves
those equations, checks unbiasedness under a given law, and computes the
variability and sensitivity matrices ``V = E[psi psi^T]`` and
``S = E[d psi / d theta]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mixbias.expectation import (
    Estimate,
    MonteCarloSpec,
    QuadratureSpec,
    Weight,
    expect,
    expect_mc,
)
from mixbias.families import BasicFamily, DomainError
from mixbias.mixture import MixedModel

JACOBIAN_STEP = 1e-6
UNBIASED_ABS = 1e-6


class NoRootError(ArithmeticError):
    """The estimating equation has no root the solver could locate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class NonFiniteEvaluation(ArithmeticError):
    pass


@dataclass(frozen=True)
class InferenceFunction:
    """``evaluate(x, theta, rows)`` returns shape ``(n, q)`` for n observations.

    ``rows`` is the mixing-matrix row of each observation and is ignored
    by inference functions that do not depend on it.  ``intervals`` gives
    the open admissible range of every parameter coordinate and ``scale``
    a typical spread used to size root scans.
    """

    dim_q: int
    evaluate: Callable
    description: str
    intervals: tuple
    scale: float = 1.0

    def __call__(self, x, theta, rows=None):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.asarray(self.evaluate(np.atleast_1d(np.asarray(x, dtype=float)), theta, rows))
        return out.reshape(-1, self.dim_q)

    def admissible(self, theta) -> bool:
        theta = np.atleast_1d(theta)
        return all(lo < t < hi for t, (lo, hi) in zip(theta, self.intervals))


def basic_score(family: BasicFamily, theta_ref=None) -> InferenceFunction:
    """The score of the basic family itself."""
    p = family.param_dim
    scale = family.location_scale(theta_ref)[1] if theta_ref is not None else 1.0
    return InferenceFunction(
        dim_q=p,
        evaluate=lambda x, theta, rows=None: family.score(x, theta),
        description=f"score of {family.name}",
        intervals=tuple(family.default_interval(j) for j in range(p)),
        scale=scale,
    )


def mixture_component_score(model: MixedModel, k: int) -> InferenceFunction:
    """Score in theta_k of the mixed model, other components held fixed.

    ``rows`` defaults to row 0 for every observation.
    """
    fam = model.family

    def evaluate(x, theta, rows=None):
        rows = np.zeros(x.shape, dtype=int) if rows is None else np.asarray(rows)
        return model.score_at(rows, x, k, theta)

    return InferenceFunction(
        dim_q=fam.param_dim,
        evaluate=evaluate,
        description=f"mixture score in component {k} of {fam.name}",
        intervals=tuple(fam.default_interval(j) for j in range(fam.param_dim)),
        scale=model.anchors()[1],
    )


def mixture_joint_score(model: MixedModel) -> InferenceFunction:
    """Score in all component parameters at once, stacked component-major."""
    fam = model.family
    p, K = fam.param_dim, model.K

    def evaluate(x, theta, rows=None):
        rows = np.zeros(x.shape, dtype=int) if rows is None else np.asarray(rows)
        blocks = tuple(fam.check_theta(b) for b in theta.reshape(K, p))
        return np.concatenate([model._score_with(rows, x, k, blocks) for k in range(K)], axis=-1)

    return InferenceFunction(
        dim_q=p * K,
        evaluate=evaluate,
        description=f"joint mixture score of {fam.name}",
        intervals=tuple(fam.default_interval(j) for j in range(p)) * K,
        scale=model.anchors()[1],
    )


def psi_n(psi: InferenceFunction, sample, theta, rows=None) -> np.ndarray:
    """Average of ``psi`` over the sample."""
    x = np.atleast_1d(np.asarray(sample, dtype=float))
    if x.size < 1:
        raise ValueError("empty sample")
    vals = psi(x, theta, rows)
    finite = np.all(np.isfinite(vals), axis=1)
    if not np.all(finite):
        j = int(np.flatnonzero(~finite)[0])
        raise NonFiniteEvaluation(f"inference function not finite at observation {j} (x={x[j]!r})")
    return vals.mean(axis=0)


# -- root finding -------------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    root_tol: float = 1e-10
    max_iter: int = 100
    scan_interval: tuple | None = None
    scan_points: int = 400
    scan_halfwidth: float = 5.0  # in units of psi.scale, when no interval given


@dataclass
class SolverDiagnostics:
    method: str = ""
    iterations: int = 0
    converged: bool = False
    residual: float = math.nan
    history: list = field(default_factory=list)
    brackets: list = field(default_factory=list)
    multiple_roots: bool = False
    note: str = ""


def _scan_range(psi, theta0, opts, coord=0):
    lo_dom, hi_dom = psi.intervals[coord]
    if opts.scan_interval is not None:
        lo, hi = map(float, opts.scan_interval)
    else:
        w = opts.scan_halfwidth * psi.scale
        lo, hi = theta0 - w, theta0 + w
    # stay strictly inside an open domain
    if lo <= lo_dom:
        lo = lo_dom + 1e-3 * (theta0 - lo_dom)
    if hi >= hi_dom:
        hi = hi_dom - 1e-3 * (hi_dom - theta0)
    if not lo < hi:
        raise DomainError(f"empty scan interval [{lo}, {hi}]")
    return lo, hi


def _solve_scalar(psi, x, theta0, opts, rows):
    diag = SolverDiagnostics(method="bracket+newton")
    f = lambda t: float(psi_n(psi, x, [t], rows)[0])  # noqa: E731
    lo, hi = _scan_range(psi, theta0, opts)
    grid = np.linspace(lo, hi, opts.scan_points)
    vals = np.array([f(t) for t in grid])
    brackets = []
    for j in range(len(grid) - 1):
        if vals[j] == 0.0:
            brackets.append((grid[j], grid[j]))
        elif vals[j] * vals[j + 1] < 0:
            brackets.append((grid[j], grid[j + 1]))
    if vals[-1] == 0.0:
        brackets.append((grid[-1], grid[-1]))
    diag.brackets = [(float(a), float(b)) for a, b in brackets]
    diag.multiple_roots = len(brackets) > 1

    if not brackets:
        diag.method = "newton (no bracket)"
        try:
            return _newton(psi, x, np.array([theta0]), opts, rows, diag)
        except NoRootError:
            raise NoRootError(
                f"no sign change of the estimating function on [{lo:.6g}, {hi:.6g}]", diag
            ) from None

    a, b = min(brackets, key=lambda ab: abs(0.5 * (ab[0] + ab[1]) - theta0))
    if a == b:
        diag.converged, diag.residual = True, 0.0
        return np.array([a]), diag
    fa = f(a)
    t = 0.5 * (a + b)
    for it in range(1, opts.max_iter + 1):
        ft = f(t)
        diag.iterations = it
        diag.history.append(float(t))
        if abs(ft) < opts.root_tol:
            diag.converged, diag.residual = True, abs(ft)
            return np.array([t]), diag
        if (ft < 0) == (fa < 0):
            a, fa = t, ft
        else:
            b = t
        h = JACOBIAN_STEP * max(abs(t), 1.0)
        slope = (f(t + h) - f(t - h)) / (2 * h)
        step = t - ft / slope if slope != 0 and math.isfinite(slope) else math.nan
        lo_b, hi_b = min(a, b), max(a, b)
        if math.isfinite(step) and lo_b < step < hi_b:
            t = step
        else:
            t = 0.5 * (a + b)
        if not min(a, b) < t < max(a, b) or abs(b - a) <= 4 * np.spacing(max(abs(a), abs(b))):
            # bracket has shrunk to adjacent floats; the sign change is the root
            t = t if min(a, b) <= t <= max(a, b) else 0.5 * (a + b)
            diag.converged, diag.residual = True, abs(f(t))
            diag.note = "bracket collapsed to float resolution"
            return np.array([t]), diag
    raise NoRootError(f"no convergence within {opts.max_iter} iterations", diag)


def _jacobian(fun, theta):
    q = theta.size
    f0 = fun(theta)
    J = np.empty((f0.size, q))
    for j in range(q):
        h = JACOBIAN_STEP * max(abs(theta[j]), 1.0)
        e = np.zeros(q)
        e[j] = h
        J[:, j] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return f0, J


def _newton(psi, x, theta0, opts, rows, diag):
    fun = lambda t: psi_n(psi, x, t, rows)  # noqa: E731
    theta = np.array(theta0, dtype=float)
    for it in range(1, opts.max_iter + 1):
        f0, J = _jacobian(fun, theta)
        diag.iterations += 1
        diag.history.append(theta.tolist())
        norm0 = float(np.max(np.abs(f0)))
        if norm0 < opts.root_tol:
            diag.converged, diag.residual = True, norm0
            return theta, diag
        try:
            step = np.linalg.solve(J, f0)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            cand = theta - t * step
            if psi.admissible(cand):
                fc = fun(cand)
                if float(np.max(np.abs(fc))) < norm0:
                    theta = cand
                    break
            t *= 0.5
        else:
            break
    raise NoRootError("damped Newton did not converge", diag)


def solve_estimating_equation(
    psi: InferenceFunction, sample, theta0, opts: SolverOptions | None = None, rows=None
) -> tuple[np.ndarray, SolverDiagnostics]:
    """Find theta with ``max|psi_n(theta)| < opts.root_tol``.

    One-dimensional problems scan a grid for sign changes, report every
    bracket found, and polish the bracket nearest ``theta0`` with a
    safeguarded Newton iteration.  Higher dimensions use damped Newton;
    for q = 2 a coarse grid supplies a fresh start if that fails.
    """
    opts = opts or SolverOptions()
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if not psi.admissible(theta0):
        raise DomainError(f"initial point {theta0.tolist()} outside the parameter domain")
    x = np.atleast_1d(np.asarray(sample, dtype=float))
    if psi.dim_q == 1:
        return _solve_scalar(psi, x, float(theta0[0]), opts, rows)

    diag = SolverDiagnostics(method="damped newton")
    try:
        return _newton(psi, x, theta0, opts, rows, diag)
    except NoRootError:
        if psi.dim_q != 2:
            raise
    diag.method = "damped newton (grid restart)"
    axes = [np.linspace(*_scan_range(psi, theta0[j], opts, j), 21) for j in range(2)]
    best, best_norm = None, math.inf
    for a in axes[0]:
        for b in axes[1]:
            cand = np.array([a, b])
            nrm = float(np.max(np.abs(psi_n(psi, x, cand, rows))))
            if nrm < best_norm:
                best, best_norm = cand, nrm
    return _newton(psi, x, best, opts, rows, diag)


# -- expectations of inference functions -------------------------------------


@dataclass
class UnbiasednessCheck:
    bias: np.ndarray
    error: np.ndarray
    unbiased: bool


def _expectation(integrand, weight: Weight, engine) -> Estimate:
    if isinstance(engine, MonteCarloSpec):
        return expect_mc(integrand, weight.sampler, engine)
    return expect(integrand, weight, engine)


def check_unbiasedness(
    psi: InferenceFunction, theta, weight: Weight, engine=None, row: int = 0
) -> UnbiasednessCheck:
    """E[psi(X, theta)] under ``weight``.

    Classified unbiased when every coordinate is below both three times
    its error estimate and 1e-6.
    """
    engine = engine or QuadratureSpec()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    est = _expectation(lambda x: psi(x, theta, np.full(x.shape, row)), weight, engine)
    bias = np.atleast_1d(np.asarray(est.value, dtype=float))
    err = np.broadcast_to(np.asarray(est.error, dtype=float), bias.shape).copy()
    unbiased = bool(np.all((np.abs(bias) < 3 * err) & (np.abs(bias) < UNBIASED_ABS)))
    return UnbiasednessCheck(bias, err, unbiased)


@dataclass
class RegularityReport:
    V: np.ndarray
    S: np.ndarray
    V_min_eigenvalue: float
    S_condition_estimate: float
    info_identity_residual: float
    S_singular: bool

    def to_dict(self) -> dict:
        return {
            "V": self.V.tolist(),
            "S": self.S.tolist(),
            "V_min_eigenvalue": self.V_min_eigenvalue,
            "S_condition_estimate": self.S_condition_estimate,
            "info_identity_residual": self.info_identity_residual,
            "S_singular": self.S_singular,
        }


def pointwise_jacobian(psi: InferenceFunction, x, theta, rows=None) -> np.ndarray:
    """Central-difference d psi / d theta at every x; shape ``(n, q, q)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    q = psi.dim_q
    cols = []
    for j in range(theta.size):
        h = JACOBIAN_STEP * max(abs(theta[j]), 1.0)
        e = np.zeros(theta.size)
        e[j] = h
        cols.append((psi(x, theta + e, rows) - psi(x, theta - e, rows)) / (2 * h))
    return np.stack(cols, axis=-1).reshape(-1, q, theta.size)


def regularity_matrices(
    psi: InferenceFunction, theta, weight: Weight, spec: QuadratureSpec | None = None, row: int = 0
) -> RegularityReport:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    q = psi.dim_q

    def outer(x):
        v = psi(x, theta, np.full(x.shape, row))
        return (v[:, :, None] * v[:, None, :]).reshape(len(x), q * q)

    def jac(x):
        return pointwise_jacobian(psi, x, theta, np.full(x.shape, row)).reshape(len(x), -1)

    V = np.asarray(expect(outer, weight, spec).value, dtype=float).reshape(q, q)
    S = np.asarray(expect(jac, weight, spec).value, dtype=float).reshape(q, q)
    V = 0.5 * (V + V.T)
    eig = float(np.min(np.linalg.eigvalsh(V)))
    cond = float(np.linalg.cond(S))
    singular = not math.isfinite(cond) or cond > 1.0 / np.finfo(float).eps
    return RegularityReport(
        V=V,
        S=S,
        V_min_eigenvalue=eig,
        S_condition_estimate=cond,
        info_identity_residual=float(np.linalg.norm(S + V)),
        S_singular=bool(singular),
    )
