import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spfilter.filters import (CONSTANT_THRESHOLD, CTR, LINEAR, SIGMOID, SPF, SPF_HARD_MASK,
                              STRATEGY_NAMES, FilterContext, FilterStrategy, ctr_threshold,
                              hard_mask, weight_confidence, weight_constant_threshold,
                              weight_ctr, weight_ramp_up, weight_spf)
from spfilter.mixture import beta_mixture, fit_em
from spfilter.data import sample_beta_mixture

N = 100


def ctx(t, model=None, total=N):
    return FilterContext(t, total, model)


class TestConstantThreshold:
    @pytest.mark.parametrize("conf,expected", [(0.96, 1.0), (0.94, 0.0), (0.95, 1.0)])
    def test_examples(self, conf, expected):
        assert weight_constant_threshold(conf, 0.95) == expected

    def test_strategy_matches_function(self):
        s = FilterStrategy.from_name("cct")
        assert s.tau == 0.95
        conf = np.array([0.1, 0.949, 0.95, 1.0])
        assert np.array_equal(s.weights(conf, ctx(3)), [0, 0, 1, 1])


class TestRampUp:
    def test_linear_endpoints(self):
        assert weight_ramp_up(ctx(0), LINEAR) == 0.0
        assert weight_ramp_up(ctx(40), LINEAR) == 1.0
        assert weight_ramp_up(ctx(100), LINEAR) == 1.0

    def test_sigmoid_endpoint(self):
        assert weight_ramp_up(ctx(40), SIGMOID) == 1.0
        assert weight_ramp_up(ctx(0), SIGMOID) == pytest.approx(math.exp(-5))

    def test_midpoint(self):
        assert weight_ramp_up(ctx(20), LINEAR) == pytest.approx(0.5)
        assert weight_ramp_up(ctx(20), SIGMOID) == pytest.approx(math.exp(-1.25))

    def test_ramp_shorter_than_an_epoch(self):
        with pytest.raises(ValueError):
            weight_ramp_up(ctx(0, total=2), LINEAR, ramp_fraction=0.4)

    def test_same_weight_for_all_samples(self):
        s = FilterStrategy.from_name("rampup-linear")
        w = s.weights(np.linspace(0, 1, 7), ctx(10))
        assert np.all(w == w[0])

    @pytest.mark.parametrize("shape", [LINEAR, SIGMOID])
    def test_monotone_in_epoch(self, shape):
        vals = [weight_ramp_up(ctx(t), shape) for t in range(N + 1)]
        assert np.all(np.diff(vals) >= 0)


class TestConfidenceWeight:
    @pytest.mark.parametrize("c", [0.73, 0.0, 1.0])
    def test_identity(self, c):
        assert weight_confidence(c) == c
        assert FilterStrategy.from_name("cw").weight(c, ctx(5)) == c


class TestCtr:
    def test_halfway_through_ramp(self):
        assert ctr_threshold(ctx(20)) == pytest.approx(0.475)
        assert weight_ctr(0.5, ctx(20)) == 1.0

    def test_start_accepts_everything(self):
        assert weight_ctr(0.0, ctx(0)) == 1.0

    def test_after_ramp(self):
        assert weight_ctr(0.94, ctx(40)) == 0.0
        assert weight_ctr(0.94, ctx(80)) == 0.0
        assert weight_ctr(0.95, ctx(80)) == 1.0

    @pytest.mark.parametrize("shape", [LINEAR, SIGMOID])
    def test_threshold_monotone(self, shape):
        vals = [ctr_threshold(ctx(t), shape) for t in range(N + 1)]
        assert np.all(np.diff(vals) >= 0)
        assert vals[-1] == pytest.approx(0.95)


class TestSpf:
    def test_no_model_means_weight_one(self):
        assert weight_spf(0.12, ctx(0)) == 1.0
        assert weight_spf(0.99, ctx(0)) == 1.0

    def test_prior_rule_before_first_fit(self):
        s = FilterStrategy.from_name("spf", initial="prior")
        assert s.weight(0.3, ctx(0)) == 0.5

    def test_worked_example(self):
        assert weight_spf(0.8, ctx(5, beta_mixture(2, 8, 8, 2))) == pytest.approx(0.99976, abs=1e-5)

    def test_identical_components(self):
        m = beta_mixture(4, 2, 4, 2)
        for c in (0.1, 0.6, 0.99):
            assert weight_spf(c, ctx(5, m)) == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 20), st.floats(0.5, 20), st.floats(0.0, 10), st.floats(0.0, 10),
           st.floats(0.05, 0.95))
    def test_monotone_under_likelihood_ratio_order(self, a, b, da, db, g):
        # high component has alpha >= and beta <= the low one, so the density ratio rises in z
        m = beta_mixture(a, b + db, a + da, b, g)
        grid = np.linspace(0.01, 0.99, 99)
        w = FilterStrategy.from_name("spf").weights(grid, ctx(5, m))
        assert np.all(np.diff(w) >= -1e-12)

    def test_fitted_model_without_ratio_order_need_not_be_monotone(self):
        z, _ = sample_beta_mixture(beta_mixture(2, 5, 12, 2, 0.3), 3000, seed=4)
        m = fit_em(z)
        lo, hi = sorted(m.components, key=lambda c: c.mean)
        assert hi.alpha > lo.alpha and hi.beta > lo.beta
        w = FilterStrategy.from_name("spf").weights(np.linspace(0.01, 0.99, 99), ctx(5, m))
        assert np.any(np.diff(w) < 0)

class TestHardMask:
    def test_examples(self):
        assert hard_mask(0.97, 0.95) == 1.0
        assert hard_mask(0.10, 0.2) == 0.0
        assert hard_mask(0.0, 0.0) == 1.0

    def test_strategy_binarizes_posterior(self):
        s = FilterStrategy.from_name("spf-hard")
        assert s.mask_threshold == 0.2
        m = beta_mixture(2, 8, 8, 2)
        assert s.weight(0.8, ctx(5, m)) == 1.0
        assert s.weight(0.2, ctx(5, m)) == 0.0


class TestStrategy:
    def test_all_names_round_trip(self):
        for name in STRATEGY_NAMES:
            assert FilterStrategy.from_name(name).name == name

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown strategy"):
            FilterStrategy.from_name("fixmatch")

    @pytest.mark.parametrize("kwargs", [
        dict(kind=CONSTANT_THRESHOLD),
        dict(kind=SPF, tau=0.9),
        dict(kind=CTR, tau=0.95, ramp_shape=LINEAR),
        dict(kind=SPF_HARD_MASK),
        dict(kind=CONSTANT_THRESHOLD, tau=1.5),
        dict(kind="Magic"),
    ])
    def test_parameters_present_exactly_when_used(self, kwargs):
        with pytest.raises(ValueError):
            FilterStrategy(**kwargs)

    def test_uses_meta_model(self):
        assert FilterStrategy.from_name("spf").uses_meta_model
        assert FilterStrategy.from_name("spf-hard").uses_meta_model
        assert not FilterStrategy.from_name("cct").uses_meta_model

    def test_context_epoch_bounds(self):
        with pytest.raises(ValueError):
            FilterContext(11, 10)

    @settings(max_examples=80, deadline=None)
    @given(st.sampled_from(sorted(STRATEGY_NAMES)), st.floats(0.0, 1.0),
           st.integers(0, N), st.booleans())
    def test_outputs_in_unit_interval_and_binary_kinds(self, name, conf, t, with_model):
        s = FilterStrategy.from_name(name)
        m = beta_mixture(2, 5, 9, 2, 0.4) if with_model else None
        w = s.weight(conf, ctx(t, m))
        assert 0.0 <= w <= 1.0
        if s.kind in (CONSTANT_THRESHOLD, CTR, SPF_HARD_MASK):
            assert w in (0.0, 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(sorted(STRATEGY_NAMES)), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20),
           st.integers(0, N))
    def test_referentially_transparent(self, name, confs, t):
        s = FilterStrategy.from_name(name)
        c = ctx(t, beta_mixture(3, 6, 7, 2, 0.5))
        a = s.weights(np.array(confs), c)
        b = FilterStrategy.from_name(name).weights(np.array(confs), c)
        assert np.array_equal(a, b)
        assert np.array_equal(a, [s.weight(x, c) for x in confs])
