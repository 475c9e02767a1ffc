import numpy as np
import pytest

from tcn.errors import UsageError
from tcn.svm import LinearSvmModel, fit_svm, predict_svm, svm_objective


class TestFitSvm:
    def test_separable_one_dimensional(self):
        x = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        model = fit_svm(x, y)
        assert np.array_equal(predict_svm(model, x), y)

    def test_label_flip_negates_decision(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((12, 3))
        y = np.sign(x[:, 0] + 0.3 * rng.standard_normal(12))
        y[y == 0] = 1.0
        a = fit_svm(x, y, epochs=300)
        b = fit_svm(x, -y, epochs=300)
        assert np.allclose(a.weights, -b.weights, atol=1e-9)
        assert a.bias == pytest.approx(-b.bias, abs=1e-9)
        assert np.array_equal(predict_svm(a, x), -predict_svm(b, x))

    def test_objective_history_non_increasing(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 4))
        y = np.where(rng.uniform(size=30) < 0.5, -1.0, 1.0)
        model = fit_svm(x, y, epochs=150)
        hist = np.array(model.objective_history)
        assert (np.diff(hist) <= 1e-6).all()

    def test_matches_grid_search_oracle(self):
        # 8 fixed points in 2-D; exhaustive 401^3 grid over (w1, w2, b).
        x = np.array([[1.0, 0.8], [0.9, 1.2], [1.3, 0.7], [0.4, 1.1],
                      [-1.0, -0.6], [-0.8, -1.3], [-1.2, -0.9], [-0.3, -1.0]])
        y = np.array([1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0])
        lam = 1.0
        grid = np.linspace(-2.0, 2.0, 401)
        best = np.inf
        margins_cache = []
        for w1 in grid:
            # vectorized over (w2, b) for speed
            w2 = grid[:, None]
            b = grid[None, :]
            scores = (x[:, 0][:, None, None] * w1 + x[:, 1][:, None, None] * w2[None]
                      + b[None])
            hinge = np.maximum(0.0, 1.0 - y[:, None, None] * scores).mean(axis=0)
            obj = 0.5 * lam * (w1 ** 2 + w2[None, :, 0] ** 2).T + hinge
            best = min(best, float(obj.min()))
        model = fit_svm(x, y, regularization=lam, epochs=2000)
        ours = svm_objective(model.weights, model.bias, x, y, lam)
        assert abs(ours - best) < 1e-3

    def test_single_class_rejected(self):
        with pytest.raises(UsageError):
            fit_svm(np.zeros((3, 2)), np.ones(3))

    def test_bad_labels_rejected(self):
        with pytest.raises(UsageError):
            fit_svm(np.zeros((3, 2)), np.array([0.0, 1.0, 1.0]))


class TestPredictSvm:
    def test_zero_weights_positive_bias(self):
        model = LinearSvmModel(weights=np.zeros(2), bias=1.0, regularization=1.0)
        assert np.array_equal(predict_svm(model, np.zeros((4, 2))), np.ones(4))

    def test_tie_breaks_positive(self):
        model = LinearSvmModel(weights=np.zeros(2), bias=0.0, regularization=1.0)
        assert np.array_equal(predict_svm(model, np.zeros((3, 2))), np.ones(3))

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(2)
        model = LinearSvmModel(weights=rng.standard_normal(5), bias=0.3,
                               regularization=1.0)
        x = rng.standard_normal((20, 5))
        expected = [1 if sum(model.weights[j] * x[i, j] for j in range(5)) + model.bias >= 0
                    else -1 for i in range(20)]
        assert np.array_equal(predict_svm(model, x), expected)

    def test_scale_invariance_of_decision(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(4)
        x = rng.standard_normal((15, 4))
        a = LinearSvmModel(weights=w, bias=0.5, regularization=1.0)
        b = LinearSvmModel(weights=2.5 * w, bias=1.25, regularization=1.0)
        assert np.array_equal(predict_svm(a, x), predict_svm(b, x))

    def test_dimension_mismatch(self):
        model = LinearSvmModel(weights=np.zeros(3), bias=0.0, regularization=1.0)
        with pytest.raises(UsageError):
            predict_svm(model, np.zeros((2, 4)))
