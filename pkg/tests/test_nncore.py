import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnmil.nncore import (
    DenseLayer,
    LayerStack,
    ShapeError,
    backward,
    derive_rng,
    dumps_model,
    forward,
    glorot_bound,
    grad_check,
    init_stack,
    loads_model,
    make_rng,
    sgd_step,
)


def random_stack(rng, dims, acts, rates=None):
    return init_stack(dims, acts, rates or [0.0] * (len(dims) - 1), rng)


class TestInit:
    def test_deterministic(self):
        a = init_stack([103, 64, 32], ["relu", "relu"], [0.5, 0.5], make_rng(7))
        b = init_stack([103, 64, 32], ["relu", "relu"], [0.5, 0.5], make_rng(7))
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_biases_zero(self):
        s = init_stack([5, 4, 3, 2], ["tanh", "relu", "sigmoid"], [0, 0, 0], make_rng(1))
        for layer in s.layers:
            assert np.all(layer.biases == 0.0)

    def test_glorot_bound_three_by_three(self):
        assert glorot_bound(3, 3) == 1.0
        for seed in range(200):
            w = init_stack([3, 3], ["identity"], [0.0], make_rng(seed)).layers[0].weights
            assert np.all(np.abs(w) <= 1.0)

    def test_glorot_fills_range(self):
        w = init_stack([50, 50], ["identity"], [0.0], make_rng(3)).layers[0].weights
        bound = math.sqrt(6 / 100)
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.95 * bound

    def test_bad_dims(self):
        with pytest.raises(ShapeError):
            init_stack([3, 0], ["relu"], [0.0], make_rng(0))
        with pytest.raises(ShapeError):
            init_stack([3], [], [], make_rng(0))

    def test_incompatible_layers(self):
        with pytest.raises(ShapeError):
            LayerStack([DenseLayer(np.zeros((2, 3)), np.zeros(2)), DenseLayer(np.zeros((1, 4)), np.zeros(1))])

    def test_dropout_rate_must_be_below_one(self):
        with pytest.raises(ValueError):
            DenseLayer(np.zeros((1, 1)), np.zeros(1), "relu", 1.0)

    def test_derived_streams_are_independent_and_stable(self):
        a = derive_rng(5, 1, 0, 0).random(4)
        np.testing.assert_array_equal(a, derive_rng(5, 1, 0, 0).random(4))
        assert not np.array_equal(a, derive_rng(5, 1, 0, 1).random(4))
        assert not np.array_equal(a, derive_rng(6, 1, 0, 0).random(4))


class TestForward:
    def test_zero_sigmoid_is_half(self):
        s = LayerStack([DenseLayer(np.zeros((3, 4)), np.zeros(3), "relu"),
                        DenseLayer(np.zeros((1, 3)), np.zeros(1), "sigmoid")])
        out, _ = forward(s, np.arange(4.0))
        assert out[0] == 0.5

    def test_dropout_zero_matches_infer(self):
        rng = make_rng(0)
        s = random_stack(rng, [6, 5, 4], ["relu", "tanh"])
        x = rng.normal(size=(3, 6))
        a, _ = forward(s, x, "train", make_rng(1))
        b, _ = forward(s, x, "infer")
        np.testing.assert_array_equal(a, b)

    def test_tanh_scalar(self):
        s = LayerStack([DenseLayer([[2.0]], [1.0], "tanh")])
        out, _ = forward(s, np.array([0.5]))
        assert out[0] == pytest.approx(math.tanh(2.0), abs=1e-15)
        assert out[0] == pytest.approx(0.9640, abs=5e-5)

    def test_dimension_mismatch(self):
        s = random_stack(make_rng(0), [3, 2], ["relu"])
        with pytest.raises(ShapeError):
            forward(s, np.zeros(4))

    def test_infer_is_pure(self):
        rng = make_rng(2)
        s = random_stack(rng, [4, 8, 2], ["relu", "identity"], [0.5, 0.0])
        x = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(forward(s, x)[0], forward(s, x)[0])

    def test_train_mode_deterministic_in_seed(self):
        rng = make_rng(2)
        s = random_stack(rng, [4, 8, 2], ["relu", "identity"], [0.5, 0.0])
        x = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(forward(s, x, "train", make_rng(9))[0],
                                      forward(s, x, "train", make_rng(9))[0])

    def test_inverted_dropout_expectation(self):
        # mean over many masks equals the undropped activation within 3 standard errors
        layer = DenseLayer(np.array([[1.0, -0.5], [0.3, 0.8], [-1.0, 0.2]]), np.array([0.1, 0.0, 2.0]),
                           "identity", 0.5)
        s = LayerStack([layer])
        x = np.array([0.7, -1.2])
        n = 100_000
        out, _ = forward(s, np.tile(x, (n, 1)), "train", make_rng(11))
        expected, _ = forward(s, x)
        se = out.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(out.mean(axis=0) - expected) < 3 * se)

    def test_rows_are_independent_instances(self):
        rng = make_rng(4)
        s = random_stack(rng, [3, 4, 2], ["tanh", "sigmoid"])
        x = rng.normal(size=(4, 3))
        batch, _ = forward(s, x)
        for i in range(4):
            np.testing.assert_allclose(forward(s, x[i])[0], batch[i], rtol=0, atol=1e-15)


class TestBackward:
    def test_zero_upstream(self):
        rng = make_rng(0)
        s = random_stack(rng, [4, 3, 2], ["tanh", "relu"])
        _, tape = forward(s, rng.normal(size=4))
        g = backward(tape, np.zeros(2))
        for arr in g.flat():
            assert np.all(arr == 0)

    def test_identity_half_squared_error(self):
        w, x, t = 1.7, 0.6, 2.0
        s = LayerStack([DenseLayer([[w]], [0.0], "identity")])
        out, tape = forward(s, np.array([x]))
        g = backward(tape, out - t)  # d/dy of (y - t)^2 / 2
        assert g.layers[0][0][0, 0] == pytest.approx((w * x - t) * x, abs=1e-15)

        def loss():
            return 0.5 * (forward(s, np.array([x]))[0][0] - t) ** 2

        rep = grad_check(loss, [s.layers[0].weights], [g.layers[0][0]])
        assert rep.max_rel_error < 1e-8

    def test_tape_mismatch(self):
        rng = make_rng(0)
        s = random_stack(rng, [3, 2], ["relu"])
        _, tape = forward(s, np.ones(3))
        with pytest.raises(ShapeError):
            backward(tape, np.ones(5))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = make_rng(seed)
        acts = [("relu", "tanh", "sigmoid", "identity")[i] for i in rng.integers(0, 4, size=3)]
        dims = [int(d) for d in rng.integers(2, 7, size=4)]
        s = random_stack(rng, dims, acts)
        for layer in s.layers:
            layer.biases[:] = rng.normal(scale=0.5, size=layer.out_dim)
        x = rng.normal(size=(3, dims[0]))
        target = rng.normal(size=(3, dims[-1]))

        def loss():
            out, _ = forward(s, x)
            return 0.5 * float(np.sum((out - target) ** 2))

        out, tape = forward(s, x)
        g = backward(tape, out - target)
        rep = grad_check(loss, s.parameters(), g.flat(), h=1e-5)
        assert rep.max_rel_error < 1e-4, rep

    def test_dropout_masks_replayed(self):
        rng = make_rng(3)
        s = random_stack(rng, [4, 6, 2], ["tanh", "identity"], [0.5, 0.0])
        x = rng.normal(size=(2, 4))
        out, tape = forward(s, x, "train", make_rng(5))
        g = backward(tape, np.ones_like(out))

        def loss():
            # same seed gives the same masks
            return float(forward(s, x, "train", make_rng(5))[0].sum())

        assert grad_check(loss, s.parameters(), g.flat()).max_rel_error < 1e-6


class TestSgd:
    def test_formula(self):
        p = [np.array([1.0])]
        sgd_step(p, [np.array([2.0])], 0.1)
        assert p[0][0] == pytest.approx(0.8, abs=1e-15)

    def test_zero_gradient_fixed_point(self):
        p = [np.array([[1.0, -2.0]]), np.array([3.0])]
        before = [a.copy() for a in p]
        sgd_step(p, [np.zeros((1, 2)), np.zeros(1)], 0.5)
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)

    def test_default_learning_rate(self):
        p = [np.array([0.0])]
        sgd_step(p, [np.array([1.0])], 0.0001)
        assert p[0][0] == -0.0001

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)

    def test_nonpositive_rate(self):
        with pytest.raises(ValueError):
            sgd_step([np.zeros(2)], [np.zeros(2)], 0.0)


class TestGradCheck:
    def test_independent_parameter(self):
        a, b = np.array([1.5]), np.array([2.0])
        rep = grad_check(lambda: float(a[0] ** 2), [a, b], [2 * a, np.zeros(1)])
        assert rep.analytic[1] == 0.0 and rep.numeric[1] == 0.0
        assert rep.max_rel_error < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_affine_exact(self, w, b, x):
        wa, ba = np.array([w]), np.array([b])
        rep = grad_check(lambda: float(wa[0] * x + ba[0]), [wa, ba], [np.array([x]), np.array([1.0])])
        assert np.allclose(rep.analytic, rep.numeric, rtol=1e-9, atol=1e-9)

    def test_sampling_limits_entries(self):
        p = np.zeros((10, 10))
        rep = grad_check(lambda: float(p.sum()), [p], [np.ones((10, 10))], max_per_param=7)
        assert rep.n_checked == 7


class TestPersistenceFormat:
    def test_round_trip_bit_exact(self):
        rng = make_rng(0)
        tensors = {"a": rng.normal(size=(3, 4)) * 1e-7, "b": rng.normal(size=5) * 1e9, "c": np.array([np.pi])}
        header, back = loads_model(dumps_model({"kind": "x", "feature_dim": 4}, tensors))
        assert header == {"kind": "x", "feature_dim": "4"}
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_rejects_foreign_file(self):
        with pytest.raises(ValueError):
            loads_model("hello world\n")
