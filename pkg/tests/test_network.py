import numpy as np
import pytest

from crlab import network as nw
from crlab.penalties import combined_objective

from conftest import rng


def tiny_params(r, obs_dim=4, hidden=(6,), features=5, classes=3, scale=0.5):
    return nw.init_params(obs_dim, hidden, features, classes, scale, r)


class TestForward:
    def test_zero_head_gives_uniform_probabilities(self):
        params = tiny_params(rng(0))
        params = nw.ModelParams(params.layers, np.zeros_like(params.head), params.activation)
        trace = nw.forward(params, rng(1).standard_normal(4))
        assert np.all(trace.logits == 0)
        assert np.allclose(trace.probabilities, 1.0 / 3.0)

    def test_softmax_shift_invariance(self):
        z = rng(2).standard_normal((50, 7))
        assert np.allclose(nw.softmax(z), nw.softmax(z + 3.7), atol=1e-12)

    def test_single_unit_logit_is_feature_times_weight(self):
        # extractor: one linear layer mapping the 1-d input x to feature 2x
        layers = (nw.LayerParams(np.array([[2.0]]), np.zeros(1)),)
        params = nw.ModelParams(layers=layers, head=np.array([[3.0]]))
        trace = nw.forward(params, np.array([1.0]))
        assert trace.features[0] == 2.0
        assert trace.logits[0] == 6.0

    def test_logits_match_independent_dot_product(self):
        params = tiny_params(rng(3))
        x = rng(4).standard_normal((20, 4))
        trace = nw.forward(params, x)
        for i in range(20):
            for c in range(3):
                expected = sum(trace.features[i, u] * params.head[u, c] for u in range(5))
                assert trace.logits[i, c] == pytest.approx(expected, rel=1e-12)

    def test_probabilities_are_normalized(self):
        params = tiny_params(rng(5))
        trace = nw.forward(params, rng(6).standard_normal((100, 4)))
        assert np.all(trace.probabilities >= 0)
        assert np.all(trace.probabilities <= 1)
        assert np.allclose(trace.probabilities.sum(axis=1), 1.0, atol=1e-9)

    def test_shape_mismatch_rejected(self):
        params = tiny_params(rng(7))
        with pytest.raises(ValueError):
            nw.forward(params, np.zeros(3))


class TestPredict:
    def test_uniform_tie_breaks_to_class_zero(self):
        params = tiny_params(rng(10))
        params = nw.ModelParams(params.layers, np.zeros_like(params.head), params.activation)
        assert nw.predict(params, np.ones(4)) == 0

    def test_known_probabilities(self):
        # logits = log p reproduce p through the softmax
        layers = (nw.LayerParams(np.eye(3), np.zeros(3)),)
        params = nw.ModelParams(layers=layers, head=np.eye(3))
        x = np.log(np.array([0.1, 0.7, 0.2]))
        assert nw.predict(params, x) == 1

    def test_agrees_with_logit_argmax(self):
        params = tiny_params(rng(11))
        x = rng(12).standard_normal((1000, 4))
        trace = nw.forward(params, x)
        assert np.array_equal(
            np.argmax(trace.probabilities, axis=1), np.argmax(trace.logits, axis=1)
        )

    def test_invariant_under_increasing_affine_logit_maps(self):
        r = rng(13)
        for _ in range(200):
            z = r.standard_normal(6)
            a = r.uniform(0.1, 5.0)
            b = r.standard_normal()
            assert np.argmax(nw.softmax(z)) == np.argmax(nw.softmax(a * z + b))


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        params = tiny_params(rng(20))
        trace = nw.forward(params, rng(21).standard_normal((3, 4)))
        grads = nw.backward(params, trace, d_logits=np.zeros((3, 3)))
        assert np.all(grads.head == 0)
        for w, b in grads.layers:
            assert np.all(w == 0) and np.all(b == 0)

    def test_softmax_ce_gradient_closed_form(self):
        # at uniform probabilities the cross-entropy gradient on logits is
        # 1/C - [k == y]
        probs = np.full(4, 0.25)
        onehot = np.array([0.0, 1.0, 0.0, 0.0])
        d_logits = nw.softmax_vjp(probs, -onehot / probs)
        assert np.allclose(d_logits, probs - onehot, atol=1e-12)

    def test_upstream_probability_path_matches_finite_differences(self):
        r = rng(22)
        failures = 0
        for trial in range(100):
            params = tiny_params(r, scale=0.6)
            x = r.standard_normal(4)
            alpha = r.standard_normal(3)
            beta = r.standard_normal(5)
            gamma = r.standard_normal(3)

            def objective(p):
                t = nw.forward(p, x)
                return float(alpha @ t.logits + beta @ t.features + gamma @ t.probabilities)

            trace = nw.forward(params, x)
            grads = nw.backward(
                params, trace, d_logits=alpha, d_features=beta, d_probabilities=gamma
            )
            g = nw.gradients_to_vector(grads)
            v0 = nw.params_to_vector(params)
            h = 1e-5
            fd = np.zeros_like(v0)
            for i in range(v0.size):
                vp, vm = v0.copy(), v0.copy()
                vp[i] += h
                vm[i] -= h
                fd[i] = (
                    objective(nw.vector_to_params(vp, params))
                    - objective(nw.vector_to_params(vm, params))
                ) / (2 * h)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
            failures += rel > 1e-5
        assert failures == 0


class TestInitParams:
    def test_vanishing_scale_gives_vanishing_logits(self):
        params = nw.init_params(4, (6,), 5, 3, 1e-12, rng(30))
        trace = nw.forward(params, rng(31).standard_normal((10, 4)))
        assert np.all(np.abs(trace.logits) <= 1e-9)

    def test_same_seed_is_bitwise_identical(self):
        a = nw.init_params(4, (6,), 5, 3, 0.3, rng(32))
        b = nw.init_params(4, (6,), 5, 3, 0.3, rng(32))
        assert np.array_equal(a.head, b.head)
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
            assert np.array_equal(wa, wb) and np.array_equal(ba, bb)

    def test_biases_start_at_zero(self):
        params = nw.init_params(4, (6,), 5, 3, 0.3, rng(33))
        for _, b in params.layers:
            assert np.all(b == 0)

    def test_empirical_weight_std_within_three_sigma(self):
        scale = 0.7
        params = nw.init_params(200, (), 500, 1, scale, rng(34))
        draws = params.layers[0].weights.ravel()
        n = draws.size
        est = draws.std(ddof=1)
        # sampling std of the normal std estimator is roughly scale/sqrt(2n)
        assert abs(est - scale) <= 3 * scale / np.sqrt(2 * n)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            nw.init_params(4, (6,), 5, 3, 0.0, rng(35))


class TestVectorRoundTrip:
    def test_params_vector_round_trip(self):
        params = tiny_params(rng(40))
        vec = nw.params_to_vector(params)
        back = nw.vector_to_params(vec, params)
        assert np.array_equal(back.head, params.head)
        for (wa, ba), (wb, bb) in zip(back.layers, params.layers):
            assert np.array_equal(wa, wb) and np.array_equal(ba, bb)

    def test_wrong_length_rejected(self):
        params = tiny_params(rng(41))
        with pytest.raises(ValueError):
            nw.vector_to_params(np.zeros(3), params)


class TestGradientContractThroughObjective:
    def test_cross_entropy_gradient_at_uniform_start(self):
        # zero-scale weights give uniform outputs; the head gradient follows
        # the closed-form (p - onehot) pullback through zero features, and
        # finite differences agree
        r = rng(50)
        params = tiny_params(r, scale=0.4)
        x = r.standard_normal((6, 4))
        y = r.integers(0, 3, 6)
        value = combined_objective(params, (x, y), None, None)
        g = nw.gradients_to_vector(value.gradients)
        v0 = nw.params_to_vector(params)
        h = 1e-5
        fd = np.zeros_like(v0)
        for i in range(v0.size):
            vp, vm = v0.copy(), v0.copy()
            vp[i] += h
            vm[i] -= h
            fd[i] = (
                combined_objective(nw.vector_to_params(vp, params), (x, y), None, None).loss
                - combined_objective(nw.vector_to_params(vm, params), (x, y), None, None).loss
            ) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-5
