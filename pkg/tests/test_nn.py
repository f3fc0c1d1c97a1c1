"""Tests for the reverse-mode autodiff core."""

import numpy as np
import pytest

from vcsched import nn


def finite_diff(f, params, eps=1e-6):
    """Central-difference gradients of a scalar function of named tensors."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            g.ravel()[i] = (hi - lo) / (2 * eps)
        grads[name] = g
    return grads


def check_grads(loss_fn, params, tol=1e-6):
    loss = loss_fn()
    for p in params.values():
        p.grad = None
    loss.backward()
    numeric = finite_diff(lambda: float(loss_fn().data), params)
    for name, p in params.items():
        scale = max(np.abs(numeric[name]).max(), 1.0)
        np.testing.assert_allclose(p.grad, numeric[name], atol=tol * scale,
                                   err_msg=name)


class TestOps:
    def test_add_broadcast(self):
        a = nn.parameter(np.ones((3, 4)))
        b = nn.parameter(np.arange(4.0))
        out = nn.add(a, b)
        assert out.data.shape == (3, 4)
        nn.total(out).backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 4)))
        np.testing.assert_array_equal(b.grad, 3 * np.ones(4))

    def test_matmul_values(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 2))
        out = nn.matmul(nn.constant(a), nn.constant(b))
        np.testing.assert_allclose(out.data, a @ b)

    def test_elu_matches_definition(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = nn.elu(nn.constant(x))
        expect = np.where(x >= 0, x, np.exp(x) - 1)
        np.testing.assert_allclose(out.data, expect)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 9)) * 50
        out = nn.softmax(nn.constant(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6),
                                   atol=1e-12)

    def test_softmax_handles_large_negatives(self):
        x = np.array([[0.0, -1e30, -1e30]])
        out = nn.softmax(nn.constant(x), axis=-1)
        np.testing.assert_allclose(out.data, [[1.0, 0.0, 0.0]])

    def test_take_gathers_rows(self):
        a = nn.constant(np.arange(12.0).reshape(4, 3))
        out = nn.take(a, np.array([2, 0, 2]))
        np.testing.assert_array_equal(out.data, a.data[[2, 0, 2]])

    def test_take_pairs(self):
        a = nn.constant(np.arange(12.0).reshape(4, 3))
        out = nn.take_pairs(a, np.array([0, 3]), np.array([2, 1]))
        np.testing.assert_array_equal(out.data, [2.0, 10.0])

    def test_attend_matches_einsum(self):
        rng = np.random.default_rng(2)
        alpha = rng.uniform(size=(4, 3))
        values = rng.normal(size=(5, 7))
        idx = rng.integers(0, 5, size=(4, 3))
        out = nn.attend(nn.constant(alpha), nn.constant(values), idx)
        expect = np.einsum("rs,rsd->rd", alpha, values[idx])
        np.testing.assert_allclose(out.data, expect)

    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError):
            nn.constant(np.array([1.0, np.nan]))

    def test_backward_requires_scalar(self):
        t = nn.parameter(np.ones(3))
        with pytest.raises(ValueError):
            t.backward()


class TestGradients:
    def test_mlp_gradients(self):
        rng = np.random.default_rng(3)
        params = {
            "W1": nn.parameter(rng.normal(size=(4, 5)) * 0.3),
            "b1": nn.parameter(rng.normal(size=5) * 0.3),
            "W2": nn.parameter(rng.normal(size=(5, 2)) * 0.3),
        }
        x = nn.constant(rng.normal(size=(6, 4)))
        y = nn.constant(rng.normal(size=(6, 2)))

        def loss_fn():
            h = nn.elu(nn.add(nn.matmul(x, params["W1"]), params["b1"]))
            return nn.mse(nn.matmul(h, params["W2"]), y)

        check_grads(loss_fn, params)

    def test_softmax_attend_gradients(self):
        rng = np.random.default_rng(4)
        params = {"S": nn.parameter(rng.normal(size=(3, 4)))}
        values = nn.constant(rng.normal(size=(5, 2)))
        idx = rng.integers(0, 5, size=(3, 4))

        def loss_fn():
            alpha = nn.softmax(params["S"], axis=-1)
            return nn.total(nn.square(nn.attend(alpha, values, idx)))

        check_grads(loss_fn, params)

    def test_take_and_concat_gradients(self):
        rng = np.random.default_rng(5)
        params = {"A": nn.parameter(rng.normal(size=(4, 3)))}
        idx = np.array([1, 1, 3])

        def loss_fn():
            rows = nn.take(params["A"], idx)
            both = nn.concat([rows, rows], axis=1)
            return nn.mean(nn.square(both))

        check_grads(loss_fn, params)

    def test_mean_square_scalar(self):
        v = nn.parameter(np.array([3.0, -1.0]))
        loss = nn.mean(nn.square(v))
        loss.backward()
        assert loss.data == pytest.approx(5.0)
        np.testing.assert_allclose(v.grad, [3.0, -1.0])


class TestOptimizers:
    def test_sgd_step(self):
        p = nn.parameter(np.array([1.0]))
        opt = nn.Sgd({"p": p}, lr=0.1)
        loss = nn.mean(nn.square(p))
        loss.backward()
        opt.step()
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0)

    def test_adam_converges_on_quadratic(self):
        p = nn.parameter(np.array([5.0, -3.0]))
        opt = nn.Adam({"p": p}, lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            loss = nn.mean(nn.square(p))
            loss.backward()
            opt.step()
        np.testing.assert_allclose(p.data, [0.0, 0.0], atol=1e-3)

    def test_adam_first_step_magnitude(self):
        # with bias correction the first step is lr regardless of grad scale
        p = nn.parameter(np.array([10.0]))
        opt = nn.Adam({"p": p}, lr=0.01)
        nn.total(nn.square(p)).backward()
        opt.step()
        assert p.data[0] == pytest.approx(10.0 - 0.01, abs=1e-6)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        groups = {"net": {"W": nn.parameter(rng.normal(size=(3, 2))),
                          "b": nn.parameter(rng.normal(size=2))}}
        path = tmp_path / "ckpt.json"
        nn.save_checkpoint(path, groups)
        loaded = nn.load_checkpoint(path)
        np.testing.assert_array_equal(loaded["net"]["W"].data,
                                      groups["net"]["W"].data)
        np.testing.assert_array_equal(loaded["net"]["b"].data,
                                      groups["net"]["b"].data)

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99, "groups": {}}')
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)
