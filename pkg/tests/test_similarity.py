import math

import numpy as np
import pytest

from tcn.data import SyntheticSpec, generate_synthetic
from tcn.errors import UsageError
from tcn.model import ConsensusModel, ModelConfig
from tcn.similarity import (SimilarityReport, csv_header, csv_row,
                            dataset_similarity, entropy, kl, pair_column_names,
                            relative_divergence, to_pmf)


def naive_kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def naive_entropy(p):
    return -sum(pi * math.log(pi) for pi in p)


def random_pmf(rng, dim):
    v = rng.uniform(0.1, 1.0, size=dim)
    return v / v.sum()


class TestToPmf:
    def test_uniform_representation(self):
        mass = to_pmf(np.ones(4), smoothing=1e-8).mass
        assert np.max(np.abs(mass - 0.25)) < 1e-8

    def test_all_zero_falls_back_to_uniform(self):
        mass = to_pmf(np.zeros(3), smoothing=1e-8).mass
        assert np.allclose(mass, [1 / 3, 1 / 3, 1 / 3])

    def test_hand_arithmetic(self):
        mass = to_pmf(np.array([3.0, 1.0]), smoothing=0.0).mass
        assert np.allclose(mass, [0.75, 0.25])

    def test_strictly_positive_and_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = np.maximum(rng.standard_normal(8), 0.0)
            mass = to_pmf(v).mass
            assert (mass > 0).all()
            assert abs(mass.sum() - 1.0) < 1e-9

    def test_scale_invariant_without_smoothing(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.uniform(0.0, 2.0, size=6)
            v[0] = 1.0  # keep the sum positive
            a = to_pmf(v, smoothing=0.0).mass
            b = to_pmf(3.7 * v, smoothing=0.0).mass
            assert np.max(np.abs(a - b)) < 1e-12

    def test_default_smoothing_barely_moves_well_scaled_reps(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            v = rng.uniform(0.0, 1.0, size=8)
            if v.sum() < 1e-2:
                v[0] += 1e-2
            a = to_pmf(v, smoothing=0.0).mass
            b = to_pmf(v).mass
            assert np.max(np.abs(a - b)) < 1e-6


class TestKl:
    def test_identical_pmfs_zero(self):
        p = random_pmf(np.random.default_rng(3), 5)
        assert kl(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_two_term_hand_value(self):
        p = np.array([0.75, 0.25])
        q = np.array([0.5, 0.5])
        expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert kl(p, q) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.1308, abs=1e-4)

    def test_nonnegative_and_matches_naive_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            dim = int(rng.integers(2, 12))
            p, q = random_pmf(rng, dim), random_pmf(rng, dim)
            v = kl(p, q)
            assert v >= 0.0
            assert v == pytest.approx(naive_kl(p, q), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(UsageError):
            kl(np.array([0.5, 0.5]), np.array([1 / 3, 1 / 3, 1 / 3]))


class TestEntropy:
    def test_uniform_is_log_dim(self):
        assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)

    def test_near_one_hot_near_zero(self):
        eps = 1e-8
        p = np.array([1 - 3 * eps, eps, eps, eps])
        assert entropy(p) < 1e-6

    def test_matches_naive_oracle_and_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            dim = int(rng.integers(2, 16))
            p = random_pmf(rng, dim)
            h = entropy(p)
            assert 0.0 <= h <= math.log(dim) + 1e-12
            assert h == pytest.approx(naive_entropy(p), abs=1e-12)


class TestRelativeDivergence:
    def test_identical_zero(self):
        p = random_pmf(np.random.default_rng(6), 7)
        assert relative_divergence(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            p, q = random_pmf(rng, 6), random_pmf(rng, 6)
            assert relative_divergence(p, q) == pytest.approx(
                relative_divergence(q, p), abs=1e-12)

    def test_hand_composed_value(self):
        # Frozen from the naive oracles: sym KL = 0.1308123 + 0.1438410,
        # entropies 0.5623351 and 0.6931472.
        p = np.array([0.75, 0.25])
        q = np.array([0.5, 0.5])
        sym = naive_kl(p, q) + naive_kl(q, p)
        expected = sym / (2.0 * (naive_entropy(p) + naive_entropy(q)))
        assert expected == pytest.approx(0.1093815, abs=1e-6)
        assert relative_divergence(p, q) == pytest.approx(expected, abs=1e-12)


def tiny_model(dims, seed=0):
    cfg = ModelConfig(rep_dim=8, interpreter_hidden=(6,), discriminator_hidden=(4,),
                      classifier_hidden=(4,))
    return ConsensusModel(dims, cfg, seed=seed)


def brute_force_similarity(model, dataset, smoothing=1e-8):
    """Scalar-loop reimplementation used as the oracle."""
    m_count = dataset.n_modalities
    pairs = {}
    values = []
    for m in range(m_count):
        for k in range(m + 1, m_count):
            pairs[(m + 1, k + 1)] = []
    for i in range(dataset.n_samples):
        reps = [r.values for r in model.interpret([b[i] for b in dataset.modality_blocks])]
        pmfs = []
        for v in reps:
            shifted = [x + smoothing for x in v]
            s = sum(shifted)
            pmfs.append([x / s for x in shifted])
        for m in range(m_count):
            for k in range(m + 1, m_count):
                d = (naive_kl(pmfs[m], pmfs[k]) + naive_kl(pmfs[k], pmfs[m])) / (
                    2.0 * (naive_entropy(pmfs[m]) + naive_entropy(pmfs[k])))
                pairs[(m + 1, k + 1)].append(d)
                values.append(d)
    per_pair = {key: float(np.mean(v)) for key, v in pairs.items()}
    return per_pair, -float(np.mean(values))


class TestDatasetSimilarity:
    def setup_method(self):
        self.dataset = generate_synthetic(SyntheticSpec(
            modalities=3, dims=(5, 4, 6), n_samples=20, class_separation=2.0,
            noise=1.0, seed=11))

    def test_pair_count_for_three_modalities(self):
        model = tiny_model(self.dataset.modality_dims)
        report = dataset_similarity(model, self.dataset)
        assert len(report.per_pair) == 3
        assert sorted(report.per_pair) == [(1, 2), (1, 3), (2, 3)]
        assert report.sample_count == 20

    def test_matches_brute_force_oracle(self):
        model = tiny_model(self.dataset.modality_dims, seed=3)
        report = dataset_similarity(model, self.dataset)
        per_pair, overall = brute_force_similarity(model, self.dataset)
        assert report.overall == pytest.approx(overall, abs=1e-10)
        for key in per_pair:
            assert report.per_pair[key] == pytest.approx(per_pair[key], abs=1e-10)

    def test_nonpositive_for_random_models(self):
        for seed in range(10):
            model = tiny_model(self.dataset.modality_dims, seed=seed)
            assert dataset_similarity(model, self.dataset).overall <= 0.0

    def test_identical_interpreters_and_inputs_give_zero(self):
        dims = (5, 5, 5)
        ds = generate_synthetic(SyntheticSpec(modalities=3, dims=dims, n_samples=15,
                                              class_separation=1.0, noise=0.5, seed=2))
        shared = ds.modality_blocks[0]
        ds.modality_blocks[1][...] = shared
        ds.modality_blocks[2][...] = shared
        model = tiny_model(list(dims), seed=5)
        ref_values = list(model.interpreters[0].state().values())
        for net in model.interpreters[1:]:
            net.load_state(dict(zip(net.state().keys(), ref_values)))
        report = dataset_similarity(model, ds)
        assert abs(report.overall) < 1e-6

    def test_permutation_invariance(self):
        model = tiny_model(self.dataset.modality_dims, seed=7)
        report = dataset_similarity(model, self.dataset)
        # Reverse the modality order: swap blocks and interpreters together.
        perm = [2, 1, 0]
        permuted = tiny_model([self.dataset.modality_dims[p] for p in perm], seed=7)
        permuted.interpreters = [model.interpreters[p] for p in perm]
        ds2 = generate_synthetic(SyntheticSpec(
            modalities=3, dims=(5, 4, 6), n_samples=20, class_separation=2.0,
            noise=1.0, seed=11))
        ds2.modality_blocks = [ds2.modality_blocks[p] for p in perm]
        report2 = dataset_similarity(permuted, ds2)
        assert report2.overall == pytest.approx(report.overall, abs=1e-12)
        mapping = {0: 2, 1: 1, 2: 0}  # old index -> new index under perm
        for (m, k), value in report.per_pair.items():
            new = tuple(sorted((mapping[m - 1] + 1, mapping[k - 1] + 1)))
            assert report2.per_pair[new] == pytest.approx(value, abs=1e-12)

    def test_csv_row_layout(self):
        model = tiny_model(self.dataset.modality_dims)
        report = dataset_similarity(model, self.dataset)
        assert csv_header(3) == ["step", "overall", "d_1_2", "d_1_3", "d_2_3"]
        row = csv_row(12, report)
        assert row[0] == 12
        assert row[1] == report.overall
        assert row[2:] == [report.per_pair[(1, 2)], report.per_pair[(1, 3)],
                           report.per_pair[(2, 3)]]

    def test_pair_columns_lexicographic_for_m4(self):
        assert pair_column_names(4) == ["d_1_2", "d_1_3", "d_1_4", "d_2_3",
                                        "d_2_4", "d_3_4"]
