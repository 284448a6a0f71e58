import math

import numpy as np
import pytest

from golden import B_STAR, DELTA
from mixbias.consistency import (
    EstimatorTrace,
    ExperimentConfig,
    detect_inconsistency,
    rmse_slope,
    run_consistency_experiment,
)
from mixbias.families import GaussianMeanKnownVar, Poisson

GAUSS = GaussianMeanKnownVar(1.0)


def config(**kw):
    base = dict(family=GAUSS, components=([0.0], [2.0]), mixing="uniform",
                regime="fixed-membership", sample_sizes=(50, 200), replicates=4, seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_same_seed_same_trace():
    a = run_consistency_experiment(config(), threads=1)
    b = run_consistency_experiment(config(), threads=1)
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    np.testing.assert_array_equal(a.psi_at_truth, b.psi_at_truth)


def test_thread_count_does_not_matter():
    a = run_consistency_experiment(config(regime="random-membership"), threads=1)
    b = run_consistency_experiment(config(regime="random-membership"), threads=4)
    assert a.theta_hat.tobytes() == b.theta_hat.tobytes()
    assert list(a.csv_rows()) == list(b.csv_rows())


def test_seed_matters():
    a = run_consistency_experiment(config(seed=1), threads=1)
    b = run_consistency_experiment(config(seed=2), threads=1)
    assert not np.array_equal(a.theta_hat, b.theta_hat)


def test_trace_shape_and_summary():
    trace = run_consistency_experiment(config(replicates=3, sample_sizes=(20, 40, 80)), threads=1)
    assert trace.theta_hat.shape == (3, 3)
    s = trace.summary()
    assert [row["n"] for row in s["per_n"]] == [20, 40, 80]
    assert s["theta_truth"] == 0.0
    assert all(row["no_root_frequency"] == 0.0 for row in s["per_n"])
    assert isinstance(s["rmse_loglog_slope"], float)


def test_no_root_cells_are_marked():
    # a rate this small makes an all-zero sample likely, and the Poisson
    # score then has no root
    cfg = ExperimentConfig(Poisson(), ([0.01], [5.0]), "identity", "fixed-membership",
                           (5, 10), 6, seed=3)
    trace = run_consistency_experiment(cfg, threads=1)
    missing = np.isnan(trace.theta_hat)
    assert missing.any()
    np.testing.assert_array_equal(missing, ~trace.converged)
    assert any(row[2] == "NA" for row in trace.csv_rows())
    assert trace.summary()["per_n"][0]["no_root_frequency"] > 0
    # a no-root replicate counts as a miss
    assert detect_inconsistency(trace, 0.01, 10.0) == bool(np.mean(missing[:, -1]) > 0.95)


def test_psi_at_truth_matches_quadrature_bias():
    trace = run_consistency_experiment(config(sample_sizes=(2000,), replicates=30), threads=1)
    row = trace.summary()["per_n"][-1]
    assert abs(row["mean_psi_at_truth"] - B_STAR) < 4 * row["se_psi_at_truth"]


def _trace(values, truth=0.0):
    values = np.asarray(values, dtype=float)[:, None]
    cfg = config(components=([truth], [truth + 2.0]), sample_sizes=(10,), replicates=len(values))
    flags = np.zeros_like(values, dtype=bool)
    return EstimatorTrace(cfg, values, np.isfinite(values), np.zeros_like(values), flags)


class TestDetect:
    def test_all_far(self):
        assert detect_inconsistency(_trace([0.5] * 20), 0.0, 0.1)

    def test_all_close(self):
        assert not detect_inconsistency(_trace([0.01] * 20), 0.0, 0.1)

    def test_huge_epsilon(self):
        assert not detect_inconsistency(_trace(np.linspace(-3, 3, 20)), 0.0, 10.0)

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(0)
        trace = _trace(rng.normal(0.3, 0.2, 40))
        flags = [detect_inconsistency(trace, 0.0, e) for e in np.linspace(0, 1.5, 31)]
        # once false, stays false as epsilon grows
        first_false = flags.index(False)
        assert not any(flags[first_false:])

    def test_threshold_is_strict(self):
        # exactly 95% misses is not enough
        assert not detect_inconsistency(_trace([1.0] * 19 + [0.0]), 0.0, 0.5)
        assert detect_inconsistency(_trace([1.0] * 20), 0.0, 0.5)

    def test_nan_is_a_miss(self):
        assert detect_inconsistency(_trace([math.nan] * 20), 0.0, 1.0)


def test_rmse_slope_needs_two_sizes():
    assert rmse_slope(_trace([0.1, -0.1])) is None


@pytest.mark.parametrize("kw", [
    dict(sample_sizes=(100, 100)),
    dict(sample_sizes=(1000, 100)),
    dict(sample_sizes=()),
    dict(replicates=0),
    dict(regime="bootstrap"),
    dict(target=2),
    dict(assignment="random"),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        config(**kw)


class TestShippedExperiments:
    def test_fixed_membership_settles_at_offset_root(self, experiments):
        trace = experiments("fixed")
        last = trace.summary()["per_n"][-1]
        R = trace.theta_hat.shape[0]
        assert abs(last["median"] - (trace.truth() + DELTA)) < 3 * last["iqr"] / math.sqrt(R)
        assert abs(last["mean_psi_at_truth"] - B_STAR) < 4 * last["se_psi_at_truth"]

    def test_random_membership_is_consistent(self, experiments):
        trace = experiments("random")
        s = trace.summary()
        assert -0.65 <= s["rmse_loglog_slope"] <= -0.35
        assert not detect_inconsistency(trace, trace.truth(), 0.05)

    def test_control_is_consistent(self, experiments):
        s = experiments("control").summary()
        assert -0.65 <= s["rmse_loglog_slope"] <= -0.35
