import numpy as np
import pytest

from flcomm.model import MLP, Adam


def finite_difference_grad(model, w, x, y, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        wp = w.copy()
        wp[i] += h
        wm = w.copy()
        wm[i] -= h
        g[i] = (model.loss(wp, x, y) - model.loss(wm, x, y)) / (2 * h)
    return g


class TestGradient:
    def test_matches_central_differences(self):
        # 100 random points, d <= 200, relative error <= 1e-5
        model = MLP(6, 8, 3)
        assert model.dim <= 200
        rng = np.random.default_rng(2024)
        for _ in range(100):
            w = rng.normal(0.0, 0.8, model.dim)
            x = rng.normal(size=(8, 6))
            y = rng.integers(0, 3, size=8)
            loss, grad = model.loss_and_grad(w, x, y)
            fd = finite_difference_grad(model, w, x, y)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12)
            assert rel <= 1e-5

    def test_zero_model_uniform_loss(self):
        model = MLP(4, 5, 2)
        x = np.random.default_rng(0).normal(size=(10, 4))
        y = np.array([0, 1] * 5)
        loss, _ = model.loss_and_grad(np.zeros(model.dim), x, y)
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_uniform_loss_many_classes(self):
        model = MLP(3, 4, 7)
        x = np.random.default_rng(1).normal(size=(5, 3))
        y = np.arange(5) % 7
        assert model.loss(np.zeros(model.dim), x, y) == pytest.approx(np.log(7.0), rel=1e-12)

    def test_duplicating_samples_preserves_mean_gradient(self):
        model = MLP(5, 6, 3)
        rng = np.random.default_rng(3)
        w = rng.normal(size=model.dim)
        x = rng.normal(size=(7, 5))
        y = rng.integers(0, 3, size=7)
        _, g1 = model.loss_and_grad(w, x, y)
        _, g2 = model.loss_and_grad(w, np.vstack([x, x]), np.concatenate([y, y]))
        np.testing.assert_allclose(g1, g2, atol=1e-12)

    def test_hidden_scale_in_both_passes(self):
        # gradient with a fixed hidden scale matches finite differences of
        # the scaled loss
        model = MLP(4, 6, 3)
        rng = np.random.default_rng(8)
        w = rng.normal(size=model.dim)
        x = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        scale = np.array([0.0, 2.0, 1.0, 0.0, 1.25, 2.0])
        _, grad = model.loss_and_grad(w, x, y, hidden_scale=scale)
        h = 1e-6
        fd = np.zeros_like(w)
        for i in range(w.size):
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd[i] = (model.loss(wp, x, y, scale) - model.loss(wm, x, y, scale)) / (2 * h)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12)
        assert rel <= 1e-5

    def test_nonfinite_loss_aborts(self):
        model = MLP(2, 3, 2)
        x = np.array([[np.nan, 0.0]])
        with pytest.raises(FloatingPointError):
            model.loss_and_grad(np.ones(model.dim), x, np.array([0]))


class TestEvaluate:
    def test_zero_model_tie_breaks_to_class_zero(self):
        model = MLP(3, 4, 2)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(20, 3))
        y = np.array([0] * 10 + [1] * 10)
        acc, loss = model.evaluate(np.zeros(model.dim), x, y)
        assert acc == 0.5  # all predictions are class 0
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_confident_correct_model(self):
        model = MLP(2, 2, 2)
        w = np.zeros(model.dim)
        w1, b1, w2, b2 = model.unpack(w)
        w1[:] = np.eye(2)
        w2[:] = 20.0 * np.eye(2)
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([0, 1])
        acc, loss = model.evaluate(w, x, y)
        assert acc == 1.0 and loss < 1e-3

    def test_empty_set_rejected(self):
        model = MLP(2, 2, 2)
        with pytest.raises(ValueError):
            model.evaluate(np.zeros(model.dim), np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestAdam:
    def test_ten_step_oracle_trace(self):
        # scalar reference implementation of the standard recurrence,
        # executed independently of the vectorized one
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        grads = [
            [0.5, -1.0, 2.0],
            [0.1, 0.1, 0.1],
            [-0.4, 0.7, 0.0],
            [1.0, 1.0, -1.0],
            [0.0, -0.2, 0.3],
            [0.6, 0.6, 0.6],
            [-1.0, 0.4, -0.1],
            [0.2, -0.8, 0.9],
            [0.3, 0.3, -0.3],
            [-0.5, 0.1, 0.8],
        ]
        w_ref = [1.0, -2.0, 0.5]
        m = [0.0, 0.0, 0.0]
        v = [0.0, 0.0, 0.0]
        for t, g in enumerate(grads, start=1):
            for j in range(3):
                m[j] = b1 * m[j] + (1 - b1) * g[j]
                v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j]
                mh = m[j] / (1 - b1**t)
                vh = v[j] / (1 - b2**t)
                w_ref[j] = w_ref[j] - lr * mh / (vh**0.5 + eps)

        opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)
        state = opt.init_state(3)
        w = np.array([1.0, -2.0, 0.5])
        for g in grads:
            state, w = opt.step(state, w, np.array(g))
        np.testing.assert_allclose(w, w_ref, rtol=0, atol=1e-15)
        np.testing.assert_allclose(state.m, m, rtol=0, atol=1e-15)
        np.testing.assert_allclose(state.v, v, rtol=0, atol=1e-15)
        assert state.t == 10

    def test_descends_on_quadratic(self):
        opt = Adam(lr=0.1)
        state = opt.init_state(2)
        w = np.array([3.0, -2.0])
        for _ in range(200):
            state, w = opt.step(state, w, 2.0 * w)
        assert np.abs(w).max() < 0.1
