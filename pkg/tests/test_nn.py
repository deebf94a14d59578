import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spfilter.data import make_two_moons, split_labeled
from spfilter.nn import (LossInputs, MlpClassifier, NonFiniteError, OptimizerState, apply_update,
                         backward_and_step, cosine_lr, forward, gradients, one_hot, ssl_loss)


def random_instance(seed, sizes=(2, 5, 4, 3), n_lab=4, n_unl=4):
    rng = np.random.default_rng(seed)
    model = MlpClassifier(sizes, rng=rng)
    for p in model.params:
        p += rng.normal(scale=0.3, size=p.shape)
    c = sizes[-1]
    targets = rng.dirichlet(np.ones(c), size=n_unl)
    batch = LossInputs(rng.normal(size=(n_lab, sizes[0])), rng.integers(0, c, n_lab),
                       rng.normal(size=(n_unl, sizes[0])), targets,
                       rng.uniform(size=n_unl), float(rng.uniform(0.1, 2.0)))
    return model, batch


def numeric_gradients(model, batch, h=1e-6):
    out = []
    for p in model.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = gradients(model, batch)[0].total
            p[idx] = old - h
            down = gradients(model, batch)[0].total
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestForward:
    def test_rows_are_distributions(self):
        model = MlpClassifier((2, 8, 3), rng=0)
        p = forward(model, np.random.default_rng(1).normal(size=(10, 2)))
        assert p.shape == (10, 3)
        assert np.allclose(p.sum(axis=1), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(MlpClassifier((2, 4, 2), rng=0), np.zeros((3, 5)))

    def test_extreme_logits_stay_finite(self):
        model = MlpClassifier((2, 4, 2), rng=0)
        model.params[-2][:] = 1e4
        model.params[-2][:, 1] = -1e4
        assert np.all(np.isfinite(forward(model, np.ones((2, 2)))))

    def test_glorot_and_input_scale_inits(self):
        m = MlpClassifier((2, 64, 64, 2), rng=0)
        assert np.abs(m.params[0]).max() <= math.sqrt(6 / 66)
        assert np.all(m.params[1] == 0)
        wide = MlpClassifier((2, 64, 64, 2), rng=0, input_scale=4.0)
        assert np.abs(wide.params[0]).max() > 1.0
        assert np.abs(wide.params[1]).max() <= 4.0
        assert np.array_equal(wide.params[2].shape, (64, 64))


class TestLoss:
    def setup_method(self):
        self.model, self.batch = random_instance(0)

    def loss(self, **changes):
        b = self.batch
        kw = dict(labeled_x=b.labeled_x, labeled_y=b.labeled_y, unlabeled_x=b.unlabeled_x,
                  targets=b.targets, weights=b.weights, lam=b.lam)
        kw.update(changes)
        return ssl_loss(self.model, **kw)

    def test_total_invariant(self):
        l = self.loss()
        assert l.total == pytest.approx(l.supervised_loss + l.lam * l.unsupervised_loss, rel=1e-12)

    def test_zero_weights(self):
        l = self.loss(weights=np.zeros(4))
        assert l.total == l.supervised_loss

    def test_lambda_zero(self):
        l = self.loss(lam=0.0)
        assert l.total == l.supervised_loss

    def test_perfect_predictions(self):
        model = MlpClassifier((2, 3, 2), rng=0)
        model.params[-2][:] = 0.0
        model.params[-1][:] = [800.0, -800.0]
        l = ssl_loss(model, np.zeros((3, 2)), np.zeros(3, int), np.zeros((0, 2)),
                     np.zeros((0, 2)), np.zeros(0), 1.0)
        assert l.supervised_loss == 0.0

    def test_empty_labeled_batch(self):
        with pytest.raises(ValueError):
            self.loss(labeled_x=np.zeros((0, 2)), labeled_y=np.zeros(0, int))

    def test_weights_outside_unit_interval(self):
        with pytest.raises(ValueError):
            self.loss(weights=np.array([0.5, 1.5, 0.1, 0.1]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 3), st.floats(0.0, 1.0))
    def test_linear_in_each_weight(self, i, new):
        base = self.loss()
        w = self.batch.weights.copy()
        delta = new - w[i]
        w[i] = new
        changed = self.loss(weights=w)
        ce_i = base.per_sample_unsup[i]
        expected = self.batch.lam * ce_i * delta / len(w)
        assert changed.total - base.total == pytest.approx(expected, abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        model, batch = random_instance(seed)
        _, analytic = gradients(model, batch)
        numeric = numeric_gradients(model, batch)
        for a, n in zip(analytic, numeric):
            assert relative_error(a, n) < 1e-4

    def test_unlabeled_rows_with_zero_weight_do_not_contribute(self):
        model, batch = random_instance(3)
        zero = LossInputs(batch.labeled_x, batch.labeled_y, batch.unlabeled_x, batch.targets,
                          np.zeros(4), batch.lam)
        sup_only = LossInputs(batch.labeled_x, batch.labeled_y, np.zeros((0, 2)),
                              np.zeros((0, 3)), np.zeros(0), batch.lam)
        for a, b in zip(gradients(model, zero)[1], gradients(model, sup_only)[1]):
            assert np.allclose(a, b, atol=1e-15)


class TestOptimizer:
    def test_zero_gradient_only_decays(self):
        model = MlpClassifier((2, 3, 2), rng=0)
        before = [p.copy() for p in model.params]
        opt = OptimizerState.for_model(model, weight_decay=5e-4)
        apply_update(model, opt, model.zeros_like(), lr=0.1)
        for b, p in zip(before, model.params):
            assert np.allclose(p, b * (1 - 0.1 * 5e-4), rtol=0, atol=1e-15)

    def test_nesterov_step_by_hand(self):
        model = MlpClassifier((1, 1), params=[np.array([[1.0]]), np.array([0.0])])
        opt = OptimizerState.for_model(model, momentum=0.9, weight_decay=0.0)
        g = [np.array([[2.0]]), np.array([0.0])]
        apply_update(model, opt, g, lr=0.1)
        # buf = 2, step = 2 + 0.9 * 2
        assert model.params[0][0, 0] == pytest.approx(1.0 - 0.1 * 3.8)
        apply_update(model, opt, g, lr=0.1)
        # buf = 0.9 * 2 + 2 = 3.8, step = 2 + 0.9 * 3.8
        assert model.params[0][0, 0] == pytest.approx(0.62 - 0.1 * (2 + 0.9 * 3.8))

    def test_plain_momentum(self):
        model = MlpClassifier((1, 1), params=[np.array([[1.0]]), np.array([0.0])])
        opt = OptimizerState.for_model(model, momentum=0.5, weight_decay=0.0, nesterov=False)
        g = [np.array([[1.0]]), np.array([0.0])]
        apply_update(model, opt, g, lr=1.0)
        apply_update(model, opt, g, lr=1.0)
        assert model.params[0][0, 0] == pytest.approx(1.0 - 1.0 - 1.5)

    def test_non_finite_gradient_leaves_state_untouched(self):
        model = MlpClassifier((2, 3, 2), rng=0)
        before = [p.copy() for p in model.params]
        opt = OptimizerState.for_model(model)
        grads = model.zeros_like()
        grads[2][0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            apply_update(model, opt, grads, lr=0.1)
        assert all(np.array_equal(a, b) for a, b in zip(before, model.params))
        assert all(not b.any() for b in opt.buffers)

    def test_nonpositive_lr(self):
        model = MlpClassifier((2, 2), rng=0)
        with pytest.raises(ValueError):
            apply_update(model, OptimizerState.for_model(model), model.zeros_like(), lr=0.0)

    def test_step_on_separable_pair_decreases_loss(self):
        model = MlpClassifier((2, 4, 2), rng=0)
        batch = LossInputs(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.array([0, 1]),
                           np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), 1.0)
        opt = OptimizerState.for_model(model)
        before = backward_and_step(model, opt, batch, lr=1e-2).total
        after = gradients(model, batch)[0].total
        assert after < before

    def test_supervised_loss_monotone_on_two_moons(self):
        x, y = make_two_moons(1000, 0.1, seed=0)
        ds, _ = split_labeled(x, y, 5, seed=0)
        model = MlpClassifier((2, 64, 64, 2), rng=0)
        opt = OptimizerState.for_model(model)
        batch = LossInputs(ds.labeled_x, ds.labeled_y, np.zeros((0, 2)), np.zeros((0, 2)),
                           np.zeros(0), 1.0)
        losses = [backward_and_step(model, opt, batch, lr=1e-2).total for _ in range(50)]
        losses.append(gradients(model, batch)[0].total)
        assert np.all(np.diff(losses) < 0)


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 1000, 0.03) == 0.03
        assert cosine_lr(1000, 1000, 1.0) == pytest.approx(0.19509, abs=1e-5)
        assert cosine_lr(500, 1000, 1.0) == pytest.approx(math.cos(7 * math.pi / 32))

    def test_strictly_decreasing_and_positive(self):
        vals = np.array([cosine_lr(k, 500, 5e-4) for k in range(501)])
        assert np.all(np.diff(vals) < 0)
        assert np.all(vals > 0)

    @pytest.mark.parametrize("k,K", [(0, 0), (5, 4), (-1, 4)])
    def test_bad_arguments(self, k, K):
        with pytest.raises(ValueError):
            cosine_lr(k, K, 0.1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = MlpClassifier((2, 7, 5, 3), rng=2)
        model.save(tmp_path / "m.json")
        loaded = MlpClassifier.load(tmp_path / "m.json")
        assert loaded.layer_sizes == model.layer_sizes
        for a, b in zip(model.params, loaded.params):
            assert np.array_equal(a, b)

    def test_rejects_other_formats(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            MlpClassifier.load(tmp_path / "bad.json")

    def test_rejects_wrong_parameter_count(self, tmp_path):
        (tmp_path / "bad.json").write_text(
            '{"format": "spfilter-mlp-v1", "activation": "tanh", "layer_sizes": [2, 2], "parameters": [1, 2]}')
        with pytest.raises(ValueError):
            MlpClassifier.load(tmp_path / "bad.json")

    def test_one_hot(self):
        assert np.array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
