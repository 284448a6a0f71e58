"""Bias of the mixture score under a single component law.

For row ``i`` and component ``k`` the quantity of interest is

    E_{theta_k}[ d/d theta_k log f_i(X) ],   f_i = sum_j pi_ij p(.; theta_j),

taken with respect to the component density ``p(.; theta_k)`` rather
than the row marginal ``f_i``.  It vanishes for degenerate rows and is
generally nonzero once a row mixes two components.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mixbias.estimating import InferenceFunction
from mixbias.expectation import (
    Estimate,
    QuadratureSpec,
    Weight,
    expect,
    expect_quadrature,
)
from mixbias.families import BasicFamily
from mixbias.mixture import DEFAULT_MIXTURE_TOL, MixedModel

DETECTION_FACTOR = 5.0
DETECTION_ABS = 1e-6
UNBIASED_ABS = 1e-6
ROOT_TOL = 1e-10


class CellError(ArithmeticError):
    """A numerical failure tied to one (row, component) cell."""


def component_score_bias(model: MixedModel, i: int, k: int,
                         spec: QuadratureSpec | None = None) -> Estimate:
    """E of the row-i mixture score in theta_k under ``p(.; theta_k)``."""
    try:
        est = expect(lambda x: model.score(i, x, k), Weight.of_component(model, k), spec)
    except ArithmeticError as exc:
        raise CellError(f"cell (row {i}, component {k}): {exc}") from exc
    return Estimate(np.atleast_1d(np.asarray(est.value, dtype=float)), est.error)


def marginal_score_expectation(model: MixedModel, i: int, k: int,
                               spec: QuadratureSpec | None = None) -> Estimate:
    """Same score, expected under the row-i marginal; zero for a regular model."""
    est = expect(lambda x: model.score(i, x, k), Weight.of_row(model, i), spec)
    return Estimate(np.atleast_1d(np.asarray(est.value, dtype=float)), est.error)


# -- lambda map ---------------------------------------------------------------


@dataclass
class LambdaCurve:
    theta_star: list
    coordinate: int
    grid: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    roots: list
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "theta_star": list(self.theta_star),
            "weight": self.label,
            "coordinate": self.coordinate,
            "grid": self.grid.tolist(),
            "lambda": self.values.tolist(),
            "quadrature_error": self.errors.tolist(),
            "roots": list(self.roots),
        }

    def csv_rows(self):
        yield ("theta", "lambda", "quadrature_error")
        for t, v, e in zip(self.grid, self.values, self.errors):
            yield (float(t), float(v), float(e))


def lambda_map(
    psi: InferenceFunction,
    weight: Weight,
    theta_ref,
    grid,
    *,
    coordinate: int = 0,
    row: int = 0,
    spec: QuadratureSpec | None = None,
    theta_star=None,
) -> LambdaCurve:
    """``lambda(theta) = E_weight[psi(X, theta)]`` along one coordinate.

    ``grid`` is an increasing array of values for ``theta[coordinate]``;
    the other coordinates stay at ``theta_ref``.  Sign changes between grid
    points are refined by bisection to 1e-10.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be strictly increasing with at least two points")
    base = np.atleast_1d(np.asarray(theta_ref, dtype=float)).copy()

    def lam(t):
        theta = base.copy()
        theta[coordinate] = t
        est = expect(lambda x: psi(x, theta, np.full(x.shape, row))[:, coordinate], weight, spec)
        return float(est.value), est.error

    pairs = [lam(t) for t in grid]
    values = np.array([p[0] for p in pairs])
    errors = np.array([p[1] for p in pairs])
    if not np.all(np.isfinite(values)):
        raise ArithmeticError("lambda map produced non-finite values")

    roots = []
    for j in range(grid.size - 1):
        if values[j] == 0.0:
            roots.append(float(grid[j]))
        elif values[j] * values[j + 1] < 0:
            roots.append(_bisect(lambda t: lam(t)[0], grid[j], grid[j + 1], values[j]))
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))
    star = base if theta_star is None else np.atleast_1d(theta_star)
    return LambdaCurve(
        theta_star=[float(v) for v in star],
        coordinate=coordinate,
        grid=grid,
        values=values,
        errors=errors,
        roots=roots,
        label=weight.label,
    )


def _bisect(f, lo, hi, flo, tol=ROOT_TOL):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return float(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def root_offset(curve: LambdaCurve) -> float:
    """Displacement of the root nearest theta* from theta* itself."""
    if not curve.roots:
        raise ArithmeticError("lambda curve has no root on its grid")
    star = curve.theta_star[curve.coordinate]
    nearest = min(curve.roots, key=lambda r: abs(r - star))
    return nearest - star


# -- where the classical argument breaks ---------------------------------------


@dataclass
class FactorizationDiagnostic:
    interchange_residual: np.ndarray  # integral of d f / d theta over the support
    factorization_gap: np.ndarray  # E_weight[score] - interchange_residual
    score_expectation: np.ndarray
    error: float


def factorization_diagnostic(target, *, theta=None, i: int = 0, k: int = 0,
                             spec: QuadratureSpec | None = None) -> FactorizationDiagnostic:
    """Split E[score] into a differentiation-under-the-integral part and a remainder.

    ``target`` is a basic family (with ``theta``) or a mixed model (with
    row ``i`` and component ``k``).  The residual integrates the density
    derivative directly; the gap is what the expectation of the score
    adds on top of it.  For the mixed model the expectation is taken under
    the component law ``p(.; theta_k)``.
    """
    if isinstance(target, BasicFamily):
        fam = target
        theta = fam.check_theta(theta)
        w = Weight.of_family(fam, theta)
        grad = lambda x: np.exp(fam._logpdf(x, theta))[:, None] * fam._score(x, theta)  # noqa: E731
        resid = expect_quadrature(grad, np.ones_like, w.support, spec,
                                  anchors=w.anchors, scale=w.scale, envelope=w.density)
        score = expect(lambda x: fam._score(x, theta), w, spec)
    else:
        model = target
        mw = Weight.of_row(model, i)
        resid = expect_quadrature(lambda x: model.density_gradient(i, x, k), np.ones_like,
                                  mw.support, spec, anchors=mw.anchors, scale=mw.scale,
                                  envelope=mw.density)
        score = component_score_bias(model, i, k, spec)
    r = np.atleast_1d(np.asarray(resid.value, dtype=float))
    s = np.atleast_1d(np.asarray(score.value, dtype=float))
    return FactorizationDiagnostic(r, s - r, s, float(resid.error + score.error))


# -- proposition check --------------------------------------------------------


@dataclass
class BiasCell:
    row: int
    component: int
    weight: float
    bias: np.ndarray
    error: float
    marginal_expectation: np.ndarray
    mixed: bool

    @property
    def detectable(self) -> bool:
        mag = np.abs(self.bias)
        return bool(np.any((mag > DETECTION_FACTOR * self.error) & (mag > DETECTION_ABS)))

    @property
    def signs(self) -> list[int]:
        return [int(np.sign(b)) for b in self.bias]

    def to_dict(self) -> dict:
        return {
            "row": self.row,
            "component": self.component,
            "pi": self.weight,
            "bias": self.bias.tolist(),
            "quadrature_error": self.error,
            "marginal_expectation": self.marginal_expectation.tolist(),
            "detectable": self.detectable,
            "sign": self.signs,
            "agrees_with_negative_claim": [s < 0 for s in self.signs] if self.mixed else None,
        }


@dataclass
class BiasReport:
    model: dict
    contains_mixture: bool
    cells: list
    verdict: str
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "contains_mixture": self.contains_mixture,
            "verdict": self.verdict,
            "cells": [c.to_dict() for c in self.cells],
            "sign_audit": self.sign_audit(),
            "notes": list(self.notes),
        }

    def sign_audit(self) -> list[dict]:
        """One entry per mixed cell: measured sign vs. the claimed strict negativity."""
        out = []
        for c in self.cells:
            if not c.mixed:
                continue
            for coord, (b, s) in enumerate(zip(c.bias, c.signs)):
                out.append({
                    "row": c.row,
                    "component": c.component,
                    "coordinate": coord,
                    "bias": float(b),
                    "sign": s,
                    "detectable": c.detectable,
                    "agrees": s < 0,
                })
        return out

    def csv_rows(self):
        yield ("row", "component", "coordinate", "pi", "bias", "quadrature_error", "detectable")
        for c in self.cells:
            for coord, b in enumerate(c.bias):
                yield (c.row, c.component, coord, c.weight, float(b), c.error, c.detectable)


def _unique_rows(values: np.ndarray):
    seen = {}
    for i, r in enumerate(values):
        seen.setdefault(r.tobytes(), i)
    return seen


def bias_cells(model: MixedModel, spec: QuadratureSpec | None = None,
               threads: int = 1, tol: float = DEFAULT_MIXTURE_TOL) -> list[BiasCell]:
    """Bias for every (i, k) with pi_ik > 0, in index order.

    Identical rows share one computation.
    """
    pi = model.mixing.values
    first = _unique_rows(pi)
    work = []
    for i0 in first.values():
        for k in range(model.K):
            if pi[i0, k] > 0:
                work.append((i0, k))

    def run(cell):
        i0, k = cell
        b = component_score_bias(model, i0, k, spec)
        m = marginal_score_expectation(model, i0, k, spec)
        return b, m

    if threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(c) for c in work]
    lookup = dict(zip(work, results))

    cells = []
    for i, r in enumerate(pi):
        i0 = first[r.tobytes()]
        for k in range(model.K):
            if pi[i, k] > 0:
                b, m = lookup[(i0, k)]
                cells.append(BiasCell(i, k, float(pi[i, k]), b.value, b.error, m.value,
                                      bool(tol < pi[i, k] < 1 - tol)))
    return cells


def proposition_check(model: MixedModel, spec: QuadratureSpec | None = None,
                      threads: int = 1, tol: float = DEFAULT_MIXTURE_TOL) -> BiasReport:
    """Compare the mixture flag with the measured biases.

    Verdict ``"unbiased"`` needs every |bias| < 1e-6; ``"biased"`` needs
    some |bias| above five times its error estimate and above 1e-6.  A
    verdict at odds with the mixture flag is reported as
    ``"indeterminate"``.
    """
    cells = bias_cells(model, spec, threads, tol)
    mixed = model.contains_mixture(tol)
    notes = []
    all_small = all(np.all(np.abs(c.bias) < UNBIASED_ABS) for c in cells)
    any_detect = any(c.detectable for c in cells)
    if not mixed:
        verdict = "unbiased" if all_small else "indeterminate"
        if not all_small:
            notes.append("no mixture present but some bias exceeds 1e-6")
    else:
        verdict = "biased" if any_detect else "indeterminate"
        if not any_detect:
            notes.append("mixture present but no bias above the detection threshold")
    return BiasReport(model.summary(), mixed, cells, verdict, notes)


__all__ = [
    "BiasCell",
    "BiasReport",
    "CellError",
    "FactorizationDiagnostic",
    "LambdaCurve",
    "bias_cells",
    "component_score_bias",
    "factorization_diagnostic",
    "lambda_map",
    "marginal_score_expectation",
    "proposition_check",
    "root_offset",
]
