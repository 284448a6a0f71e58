import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from golden import MIX_DENSITY
from mixbias.families import DomainError, GaussianMeanKnownVar, GaussianMeanVar, Poisson
from mixbias.mixture import (
    MixedModel,
    MixingMatrix,
    SingularEvaluation,
    contains_mixture,
    mixture_density,
    mixture_score,
    sample_mixed,
)
from mixbias.scenarios import builtin_families, random_components


def gauss2(mixing, mu=(0.0, 2.0)):
    return MixedModel(GaussianMeanKnownVar(1.0), tuple([m] for m in mu), MixingMatrix(mixing))


class TestMixingMatrix:
    def test_identity_has_no_mixture(self):
        assert not contains_mixture([[1, 0], [0, 1]])

    def test_half_row_is_a_mixture(self):
        assert contains_mixture([[0.5, 0.5]])

    def test_entries_within_tolerance_count_as_degenerate(self):
        assert not contains_mixture([[1 - 1e-12, 1e-12]])

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
    def test_unit_rows_never_mix(self, assign):
        m = MixingMatrix.from_pattern("identity", len(assign), 4, assign)
        assert not contains_mixture(m)

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_interior_entry_always_mixes(self, p):
        assert contains_mixture([[p, 1 - p]])

    @pytest.mark.parametrize("rows", [[[0.5, 0.6]], [[1.2, -0.2]], [[math.nan, 1]]])
    def test_invalid_rows_rejected(self, rows):
        with pytest.raises(DomainError):
            MixingMatrix(rows)

    def test_patterns(self):
        np.testing.assert_array_equal(MixingMatrix.from_pattern("uniform", 2, 4).values, np.full((2, 4), 0.25))
        ident = MixingMatrix.from_pattern("identity", 5, 2).values
        np.testing.assert_array_equal(ident.argmax(axis=1), [0, 1, 0, 1, 0])
        part = MixingMatrix.from_pattern("partial:0.5", 4, 2).values
        np.testing.assert_array_equal(part, [[0.5, 0.5], [0.5, 0.5], [1, 0], [0, 1]])
        tiled = MixingMatrix.from_pattern([[0.2, 0.8], [1, 0]], 3, 2).values
        np.testing.assert_array_equal(tiled, [[0.2, 0.8], [1, 0], [0.2, 0.8]])

    @pytest.mark.parametrize("pattern", ["diagonal", "partial:x", "partial:1.5"])
    def test_bad_pattern(self, pattern):
        with pytest.raises(DomainError):
            MixingMatrix.from_pattern(pattern, 3, 2)


class TestModel:
    def test_duplicate_components_rejected(self):
        with pytest.raises(DomainError, match="coincide"):
            gauss2([[0.5, 0.5]], mu=(1.0, 1.0))

    @pytest.mark.parametrize("rows", [[[1.0]], [[0.5, 0.5, 0.0]]])
    def test_column_count_must_match(self, rows):
        with pytest.raises(DomainError):
            MixedModel(GaussianMeanKnownVar(), ([0.0], [1.0]), MixingMatrix(rows))

    def test_row_out_of_range(self):
        with pytest.raises(DomainError):
            gauss2([[0.5, 0.5]]).density(3, 0.0)


class TestDensity:
    def test_golden_value(self):
        model = gauss2([[0.25, 0.75]], mu=(0.0, 2.0))
        assert mixture_density(model, 0, 0.3 - 0.0) == pytest.approx(
            0.25 * stats.norm.pdf(0.3) + 0.75 * stats.norm.pdf(0.3 - 2.0), abs=1e-15)
        assert model.density(0, 0.3) == pytest.approx(MIX_DENSITY, abs=1e-15)

    def test_degenerate_row_is_the_component(self):
        model = gauss2([[1.0, 0.0], [0.0, 1.0]])
        x = np.linspace(-3, 5, 9)
        np.testing.assert_allclose(model.density(1, x), stats.norm.pdf(x, 2.0), rtol=1e-14)

    def test_far_tail_stays_finite(self):
        model = gauss2([[0.5, 0.5]])
        assert np.isfinite(model.log_density(0, 60.0))
        assert np.all(np.isfinite(model.score(0, np.array([-40.0, 45.0]), 0)))

    @pytest.mark.parametrize("seed", range(3))
    def test_each_row_normalises(self, seed):
        rng = np.random.default_rng(seed)
        for fam in builtin_families():
            comps = random_components(fam, 3, rng)
            mix = rng.dirichlet(np.ones(3), size=2)
            model = MixedModel(fam, comps, MixingMatrix(mix))
            for i in range(2):
                if fam.support.kind == "counting":
                    total = math.fsum(model.density(i, np.arange(0, 500)))
                else:
                    locs, scale = model.anchors()
                    lo = max(fam.support.lower, min(locs) - 40 * scale)
                    total, _ = integrate.quad(lambda x: model.density(i, x), lo, max(locs) + 60 * scale,
                                              points=sorted(locs), epsabs=1e-13, epsrel=1e-13, limit=500)
                assert total == pytest.approx(1.0, abs=1e-8), (fam.name, i)


class TestScore:
    def test_degenerate_row_reduces_to_basic_score(self):
        model = gauss2([[1.0, 0.0], [0.0, 1.0]])
        x = np.linspace(-3, 5, 9)
        np.testing.assert_allclose(model.score(0, x, 0)[:, 0], x - 0.0, atol=1e-15)
        np.testing.assert_allclose(model.score(1, x, 1)[:, 0], x - 2.0, atol=1e-15)
        np.testing.assert_array_equal(model.score(0, x, 1), 0.0)

    def test_posterior_weight_form(self):
        model = gauss2([[0.5, 0.5]])
        x = 0.7
        r = stats.norm.pdf(x) / (stats.norm.pdf(x) + stats.norm.pdf(x - 2))
        assert mixture_score(model, 0, x, 0)[0] == pytest.approx(r * x, rel=1e-13)

    def test_symmetric_canonical_case(self):
        # swapping components and reflecting x about 1 maps k=0 onto k=1
        model = gauss2([[0.5, 0.5]])
        x = np.linspace(-4, 6, 21)
        np.testing.assert_allclose(model.score(0, x, 0), -model.score(0, 2 - x, 1), atol=1e-14)

    def test_component_index_checked(self):
        with pytest.raises(DomainError):
            gauss2([[0.5, 0.5]]).score(0, 0.0, 2)

    def test_singular_point_raises(self):
        # both component densities underflow to exactly zero this far out
        with np.errstate(over="ignore"), pytest.raises(SingularEvaluation):
            gauss2([[0.5, 0.5]]).score(0, np.array([0.0, 1e200]), 0)

    def test_finite_difference_random_pairs(self):
        rng = np.random.default_rng(5)
        for trial in range(100):
            fam = [GaussianMeanKnownVar(1.0), GaussianMeanVar(), Poisson()][trial % 3]
            comps = random_components(fam, 2, rng)
            p = rng.uniform(0.1, 0.9)
            model = MixedModel(fam, comps, MixingMatrix([[p, 1 - p]]))
            k = int(rng.integers(2))
            x = fam.sample(comps[k], 1, rng)[0]
            analytic = model.score(0, x, k)
            fd = np.empty(fam.param_dim)
            for j in range(fam.param_dim):
                h = 1e-5 * max(1.0, abs(comps[k][j]))
                up, dn = comps[k].copy(), comps[k].copy()
                up[j] += h
                dn[j] -= h
                fd[j] = (model.with_component(k, up).log_density(0, x)
                         - model.with_component(k, dn).log_density(0, x)) / (2 * h)
            np.testing.assert_allclose(analytic, fd, atol=1e-6 * max(1.0, np.max(np.abs(analytic))))


class TestSampling:
    def test_membership_frequency(self):
        n = 10**5
        model = MixedModel(GaussianMeanKnownVar(), ([0.0], [2.0]), MixingMatrix.from_pattern("uniform", n, 2))
        _, member = sample_mixed(model, "random-membership", seed=11)
        assert abs(member.mean() - 0.5) < 4 * 0.5 / math.sqrt(n)

    def test_fixed_membership_follows_assignment(self):
        model = gauss2([[0.5, 0.5]] * 4)
        _, member = sample_mixed(model, "fixed-membership", seed=1, assignment=[0, 1, 1, 0])
        assert member.tolist() == [0, 1, 1, 0]

    def test_fixed_membership_needs_assignment(self):
        with pytest.raises(ValueError):
            sample_mixed(gauss2([[0.5, 0.5]]), "fixed-membership", seed=1)

    def test_degenerate_row_contradiction(self):
        with pytest.raises(DomainError):
            sample_mixed(gauss2([[1.0, 0.0]]), "fixed-membership", seed=1, assignment=[1])

    @pytest.mark.parametrize("regime", ["fixed-membership", "random-membership"])
    def test_deterministic(self, regime):
        model = gauss2([[0.3, 0.7]] * 50)
        assign = np.arange(50) % 2
        a = sample_mixed(model, regime, seed=42, assignment=assign)
        b = sample_mixed(model, regime, seed=42, assignment=assign)
        assert a[0].tolist() == b[0].tolist()
        assert a[1].tolist() == b[1].tolist()

    def test_unknown_regime(self):
        with pytest.raises(ValueError):
            sample_mixed(gauss2([[0.5, 0.5]]), "bootstrap", seed=0)


@given(x=st.floats(-30, 30), p=st.floats(0.01, 0.99))
@settings(max_examples=100, deadline=None)
def test_posterior_weights_sum_to_one(x, p):
    model = gauss2([[p, 1 - p]])
    s0 = model.score(0, x, 0)[0]
    s1 = model.score(0, x, 1)[0]
    # r0 + r1 = 1 with S_k = x - mu_k, so r0 = (s0 / x) when x != 0
    if abs(x) > 1e-3 and abs(x - 2) > 1e-3:
        assert s0 / x + s1 / (x - 2) == pytest.approx(1.0, abs=1e-9)
