"""Monte Carlo consistency experiments for score-root estimators.

Each (replicate, sample size) cell draws its own data from a stream keyed
on ``(master seed, replicate, size index)``, solves the estimating
equation for the target component and records the root, or a no-root
marker when the solver finds none.  Cells are independent, so they may
run on a thread pool without changing the output.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mixbias.estimating import (
    NoRootError,
    SolverOptions,
    mixture_component_score,
    mixture_joint_score,
    psi_n,
    solve_estimating_equation,
)
from mixbias.families import BasicFamily
from mixbias.mixture import MixedModel, MixingMatrix, sample_mixed
from mixbias.rng import EXPERIMENT, stream

REGIMES = ("fixed-membership", "random-membership")


@dataclass(frozen=True)
class ExperimentConfig:
    family: BasicFamily
    components: tuple
    mixing: object  # pattern string or list of rows
    regime: str
    sample_sizes: tuple
    replicates: int
    seed: int
    solver: SolverOptions = field(default_factory=SolverOptions)
    epsilon: float = 0.05
    target: int = 0
    coordinate: int = 0
    assignment: str = "target"  # "target" or "cyclic"
    joint: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError("sample sizes must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample sizes must be strictly increasing")
        object.__setattr__(self, "sample_sizes", sizes)
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not 0 <= self.target < len(self.components):
            raise ValueError("target component out of range")
        if self.assignment not in ("target", "cyclic"):
            raise ValueError(f"unknown assignment rule {self.assignment!r}")

    @property
    def K(self) -> int:
        return len(self.components)

    def theta_truth(self) -> np.ndarray:
        return np.asarray(self.components[self.target], dtype=float)

    def assignment_vector(self, n: int) -> np.ndarray:
        if self.assignment == "target":
            return np.full(n, self.target)
        return np.arange(n) % self.K

    def model(self, n: int) -> MixedModel:
        assign = self.assignment_vector(n)
        mixing = MixingMatrix.from_pattern(self.mixing, n, self.K, assign)
        return MixedModel(self.family, tuple(self.components), mixing)


@dataclass
class EstimatorTrace:
    config: ExperimentConfig
    theta_hat: np.ndarray  # (R, N), nan where no root was found
    converged: np.ndarray  # (R, N) bool
    psi_at_truth: np.ndarray  # (R, N) tracked coordinate of psi_n at the true value
    multiple_roots: np.ndarray  # (R, N) bool

    @property
    def sample_sizes(self) -> tuple:
        return self.config.sample_sizes

    def truth(self) -> float:
        return float(self.config.theta_truth()[self.config.coordinate])

    def summary(self) -> dict:
        truth = self.truth()
        per_n = []
        for j, n in enumerate(self.sample_sizes):
            est = self.theta_hat[:, j]
            ok = est[np.isfinite(est)]
            psi = self.psi_at_truth[:, j]
            row = {
                "n": n,
                "replicates": int(est.size),
                "no_root_frequency": float(1.0 - ok.size / est.size),
                "multiple_root_frequency": float(np.mean(self.multiple_roots[:, j])),
                "mean_psi_at_truth": float(np.mean(psi)),
                "se_psi_at_truth": float(np.std(psi, ddof=1) / math.sqrt(psi.size)) if psi.size > 1 else 0.0,
            }
            if ok.size:
                q1, med, q3 = np.percentile(ok, [25, 50, 75])
                row.update({
                    "bias": float(np.mean(ok) - truth),
                    "rmse": float(np.sqrt(np.mean((ok - truth) ** 2))),
                    "median": float(med),
                    "iqr": float(q3 - q1),
                })
            else:
                row.update({"bias": None, "rmse": None, "median": None, "iqr": None})
            per_n.append(row)
        return {
            "theta_truth": truth,
            "regime": self.config.regime,
            "per_n": per_n,
            "rmse_loglog_slope": rmse_slope(self),
        }

    def csv_rows(self):
        yield ("replicate", "n", "theta_hat", "converged")
        for r in range(self.theta_hat.shape[0]):
            for j, n in enumerate(self.sample_sizes):
                v = self.theta_hat[r, j]
                yield (r, n, float(v) if np.isfinite(v) else "NA", bool(self.converged[r, j]))


def rmse_slope(trace: EstimatorTrace) -> float | None:
    """Least-squares slope of log RMSE against log n."""
    truth = trace.truth()
    xs, ys = [], []
    for j, n in enumerate(trace.sample_sizes):
        est = trace.theta_hat[:, j]
        ok = est[np.isfinite(est)]
        if ok.size:
            rmse = math.sqrt(float(np.mean((ok - truth) ** 2)))
            if rmse > 0:
                xs.append(math.log(n))
                ys.append(math.log(rmse))
    if len(xs) < 2:
        return None
    return float(np.polyfit(xs, ys, 1)[0])


def _cell_seed(master: int, r: int, j: int) -> int:
    return int(stream(master, EXPERIMENT, r, j).integers(2**63))


def _run_cell(cfg: ExperimentConfig, r: int, j: int):
    n = cfg.sample_sizes[j]
    model = cfg.model(n)
    x, _ = sample_mixed(model, cfg.regime, _cell_seed(cfg.seed, r, j),
                        assignment=cfg.assignment_vector(n))
    rows = np.arange(n)
    truth = cfg.theta_truth()
    if cfg.joint:
        psi = mixture_joint_score(model)
        theta0 = np.concatenate([np.asarray(c, dtype=float) for c in cfg.components])
        offset = cfg.target * cfg.family.param_dim
    else:
        psi = mixture_component_score(model, cfg.target)
        theta0 = truth
        offset = 0
    at_truth = float(psi_n(psi, x, theta0, rows)[offset + cfg.coordinate])
    try:
        theta, diag = solve_estimating_equation(psi, x, theta0, cfg.solver, rows)
        return float(theta[offset + cfg.coordinate]), True, at_truth, diag.multiple_roots
    except NoRootError as exc:
        multi = bool(exc.diagnostics and exc.diagnostics.multiple_roots)
        return math.nan, False, at_truth, multi


def run_consistency_experiment(cfg: ExperimentConfig, threads: int | None = None) -> EstimatorTrace:
    """Solve the estimating equation on every (replicate, n) cell."""
    R, N = cfg.replicates, len(cfg.sample_sizes)
    cells = [(r, j) for r in range(R) for j in range(N)]
    threads = threads or os.cpu_count() or 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        results = [_run_cell(cfg, *c) for c in cells]
    theta_hat = np.full((R, N), math.nan)
    converged = np.zeros((R, N), dtype=bool)
    psi_truth = np.zeros((R, N))
    multi = np.zeros((R, N), dtype=bool)
    for (r, j), (t, ok, p, m) in zip(cells, results):
        theta_hat[r, j], converged[r, j], psi_truth[r, j], multi[r, j] = t, ok, p, m
    return EstimatorTrace(cfg, theta_hat, converged, psi_truth, multi)


def detect_inconsistency(trace: EstimatorTrace, theta_truth: float, epsilon: float) -> bool:
    """True when more than 95% of replicates at the largest n miss the
    epsilon-neighbourhood of the truth.  A replicate without a root
    counts as a miss."""
    last = trace.theta_hat[:, -1]
    with np.errstate(invalid="ignore"):
        miss = ~(np.abs(last - theta_truth) <= epsilon)
    return bool(np.mean(miss) > 0.95)
