import numpy as np
import pytest

from tcn import nn
from tcn.errors import ConfigError, NumericError, UsageError

from conftest import finite_difference, frozen_loss, max_rel_error


def identity_dense(dim):
    layer = nn.DenseLayer(dim, dim, np.random.default_rng(0))
    layer.weights[...] = np.eye(dim)
    layer.bias[...] = 0.0
    return layer


class TestForward:
    def test_identity_layer_passthrough(self):
        net = nn.Mlp([identity_dense(3)])
        x = np.array([[1.0, -2.0, 0.5]])
        assert np.array_equal(net.forward(x), x)

    def test_relu_clips_negative(self):
        net = nn.Mlp([identity_dense(2), nn.ReluLayer()])
        out = net.forward(np.array([[-1.0, 2.0]]))
        assert np.array_equal(out, [[0.0, 2.0]])

    def test_two_layer_matches_naive_matmul(self):
        rng = np.random.default_rng(3)
        net = nn.feedforward(4, (5,), 3, rng, batchnorm=False)
        x = rng.standard_normal((7, 4))
        w1, b1 = net.layers[0].weights, net.layers[0].bias
        w2, b2 = net.layers[2].weights, net.layers[2].bias
        # Naive oracle: per-sample loops, no shared code with the layer path.
        expected = np.empty((7, 3))
        for i in range(7):
            h = np.array([sum(w1[o, j] * x[i, j] for j in range(4)) + b1[o] for o in range(5)])
            h = np.array([max(v, 0.0) for v in h])
            expected[i] = [sum(w2[o, j] * h[j] for j in range(5)) + b2[o] for o in range(3)]
        assert np.max(np.abs(net.forward(x) - expected)) < 1e-12

    def test_dimension_mismatch_is_config_error(self):
        net = nn.feedforward(4, (5,), 3, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            net.forward(np.zeros((2, 3)))

    def test_nonfinite_input_is_numeric_error(self):
        net = nn.feedforward(2, (3,), 2, np.random.default_rng(0))
        with pytest.raises(NumericError):
            net.forward(np.array([[np.nan, 1.0]]))

    def test_batch_size_one_train_uses_running_stats(self):
        bn = nn.BatchNormLayer(3)
        bn.running_mean[...] = [1.0, 2.0, 3.0]
        bn.running_var[...] = [4.0, 4.0, 4.0]
        x = np.array([[3.0, 4.0, 5.0]])
        out = bn.forward(x, train=True)
        expected = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.epsilon)
        assert np.allclose(out, expected)


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        rng = np.random.default_rng(5)
        bn = nn.BatchNormLayer(4)
        x = rng.standard_normal((32, 4)) * 3.0 + 7.0
        out = bn.forward(x, train=True)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-6
        assert np.max(np.abs(out.var(axis=0) - 1.0)) < 1e-4

    def test_eval_mode_ignores_batch(self):
        rng = np.random.default_rng(6)
        bn = nn.BatchNormLayer(3)
        bn.forward(rng.standard_normal((16, 3)), train=True)
        x1 = rng.standard_normal((8, 3))
        single = np.vstack([bn.forward(x1[i:i + 1], train=False) for i in range(8)])
        assert np.array_equal(bn.forward(x1, train=False), single)

    def test_running_var_nonnegative_after_updates(self):
        rng = np.random.default_rng(7)
        bn = nn.BatchNormLayer(5)
        for _ in range(50):
            bn.forward(rng.standard_normal((12, 5)) * rng.uniform(0.01, 5.0), train=True)
        assert (bn.running_var >= 0).all()


class TestGradients:
    def test_linear_loss_unit_gradient(self):
        layer = nn.DenseLayer(1, 1, np.random.default_rng(0))
        net = nn.Mlp([layer])
        out = net.forward(np.array([[1.0]]), train=True)
        net.backward(np.ones_like(out))
        assert layer.grad_weights[0, 0] == pytest.approx(1.0)
        assert layer.grad_bias[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("batchnorm", [False, True])
    def test_dense_stack_matches_finite_differences(self, batchnorm):
        for trial in range(25):
            rng = np.random.default_rng(100 + trial)
            net = nn.feedforward(3, (4,), 2, rng, batchnorm=batchnorm)
            x = rng.standard_normal((6, 3))
            targets = rng.integers(0, 2, size=6)

            def loss():
                return nn.cross_entropy(net.forward(x, train=True), targets)

            net.zero_grads()
            logits = net.forward(x, train=True)
            net.backward(nn.cross_entropy_backward(logits, targets))
            numeric = finite_difference(frozen_loss(net, loss),
                                        [arr for _, arr in net.parameters()])
            assert max_rel_error(net.gradients(), numeric) < 1e-4

    def test_relu_stack_matches_finite_differences(self):
        for trial in range(25):
            rng = np.random.default_rng(300 + trial)
            net = nn.Mlp([nn.DenseLayer(3, 4, rng), nn.ReluLayer(),
                          nn.DenseLayer(4, 2, rng)])
            x = rng.standard_normal((5, 3)) + 0.3  # keep relu kinks away from 0
            y = rng.standard_normal((5, 2))

            def loss():
                return nn.squared_error(net.forward(x, train=True), y)

            net.zero_grads()
            pred = net.forward(x, train=True)
            net.backward(nn.squared_error_backward(pred, y))
            numeric = finite_difference(frozen_loss(net, loss),
                                        [arr for _, arr in net.parameters()])
            assert max_rel_error(net.gradients(), numeric) < 1e-4

    def test_frozen_network_gradients_stay_zero(self):
        rng = np.random.default_rng(9)
        net = nn.feedforward(3, (4,), 2, rng)
        net.requires_grad = False
        net.zero_grads()
        logits = net.forward(rng.standard_normal((5, 3)), train=True)
        gx = net.backward(nn.cross_entropy_backward(logits, np.zeros(5, dtype=int)))
        assert all(np.all(g == 0.0) for g in net.gradients())
        assert gx.shape == (5, 3)  # input gradient still flows

    def test_backward_before_forward_is_usage_error(self):
        net = nn.feedforward(3, (4,), 2, np.random.default_rng(0))
        with pytest.raises(UsageError):
            net.backward(np.zeros((2, 2)))

    def test_double_backward_is_usage_error(self):
        net = nn.feedforward(3, (4,), 2, np.random.default_rng(0))
        logits = net.forward(np.zeros((2, 3)), train=True)
        g = nn.cross_entropy_backward(logits, np.zeros(2, dtype=int))
        net.backward(g)
        with pytest.raises(UsageError):
            net.backward(g)


class TestCrossEntropy:
    def test_uniform_two_class_is_ln2(self):
        logits = np.zeros((4, 2))
        assert nn.cross_entropy(logits, np.array([0, 1, 0, 1])) == pytest.approx(
            np.log(2.0), abs=1e-12)

    def test_saturated_logits_near_zero_loss(self):
        logits = np.array([[100.0, 0.0], [0.0, 100.0]])
        assert nn.cross_entropy(logits, np.array([0, 1])) < 1e-10

    def test_three_class_matches_per_sample_oracle(self):
        rng = np.random.default_rng(11)
        logits = rng.standard_normal((10, 3)) * 3.0
        targets = rng.integers(0, 3, size=10)
        total = 0.0
        for i in range(10):
            exps = [np.exp(v) for v in logits[i]]
            total += -np.log(exps[targets[i]] / sum(exps))
        assert nn.cross_entropy(logits, targets) == pytest.approx(total / 10, abs=1e-12)

    def test_nonnegative_for_random_inputs(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            logits = rng.standard_normal((4, k)) * 10.0
            targets = rng.integers(0, k, size=4)
            assert nn.cross_entropy(logits, targets) >= 0.0

    def test_bad_target_index_rejected(self):
        with pytest.raises(ConfigError):
            nn.cross_entropy(np.zeros((2, 2)), np.array([0, 2]))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        w = np.array([1.0, -2.0])
        opt = nn.Adam([("w", w)])
        opt.step([np.zeros(2)])
        assert np.array_equal(w, [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        # loss w^2 at w=1: grad 2; bias-corrected update is ~lr * sign(grad).
        w = np.array([1.0])
        opt = nn.Adam([("w", w)], learning_rate=0.001)
        opt.step([np.array([2.0])])
        assert w[0] == pytest.approx(0.999, abs=1e-6)

    def test_constant_gradient_two_steps(self):
        w = np.array([0.0])
        opt = nn.Adam([("w", w)], learning_rate=0.001)
        opt.step([np.array([1.0])])
        opt.step([np.array([1.0])])
        assert opt.step_count == 2
        assert w[0] == pytest.approx(-0.002, abs=1e-6)

    def test_nonfinite_gradient_identifies_parameter(self):
        w = np.array([1.0])
        opt = nn.Adam([("theta", w)])
        with pytest.raises(NumericError, match="theta"):
            opt.step([np.array([np.inf])])

    def test_second_moment_nonnegative(self):
        rng = np.random.default_rng(13)
        w = rng.standard_normal(5)
        opt = nn.Adam([("w", w)])
        for _ in range(20):
            opt.step([rng.standard_normal(5)])
        assert all((v >= 0).all() for v in opt.second_moment)


def test_deterministic_build_and_update():
    def run():
        rng = np.random.default_rng(42)
        net = nn.feedforward(4, (6,), 2, np.random.default_rng(7))
        opt = nn.Adam(net.parameters())
        x = rng.standard_normal((8, 4))
        t = rng.integers(0, 2, size=8)
        for _ in range(3):
            net.zero_grads()
            logits = net.forward(x, train=True)
            net.backward(nn.cross_entropy_backward(logits, t))
            opt.step(net.gradients())
        return net.forward(x, train=False), net.state()

    out1, state1 = run()
    out2, state2 = run()
    assert np.array_equal(out1, out2)
    assert all(np.array_equal(state1[k], state2[k]) for k in state1)
