import numpy as np
import pytest
from scipy.spatial.distance import cdist

from stresscast.augment import (
    AugmentationPlan,
    _nearest_neighbors,
    adasyn,
    adasyn_allocation,
    augment_metadataset,
    smote,
)
from stresscast.errors import ConfigError, InsufficientMinorityError
from stresscast.features import N_FEATURES
from stresscast.meta import MetaDataset


def make_meta(n_neg, n_pos, seed=0, sep=3.0):
    rng = np.random.default_rng(seed)
    X_neg = rng.normal(0, 1, size=(n_neg, N_FEATURES))
    X_pos = rng.normal(0, 1, size=(n_pos, N_FEATURES)) + sep
    X = np.vstack([X_neg, X_pos])
    labels = np.concatenate([np.zeros(n_neg, dtype=np.int8), np.ones(n_pos, dtype=np.int8)])
    ids = tuple(f"s{i:03d}" for i in range(n_neg + n_pos))
    errors = labels * 20.0 + 1.0
    return MetaDataset(ids, X, errors, labels, np.zeros(n_neg + n_pos, dtype=bool), tau=10.0)


class TestPlan:
    @pytest.mark.parametrize("kwargs", [
        {"method": "undersample"}, {"k": 0}, {"target_ratio": 0.0},
        {"target_ratio": 1.5}, {"beta": 0.0}, {"beta": 2.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AugmentationPlan(**kwargs)


class TestSmote:
    def test_lambda_zero_reproduces_seed_point(self):
        rng = np.random.default_rng(0)
        minority = rng.normal(size=(8, 4))
        batch = smote(minority, AugmentationPlan(k=3, seed=1), 20, lam_override=0.0)
        assert np.array_equal(batch.rows, minority[batch.seed_idx])

    def test_two_point_midpoint(self):
        minority = np.array([[0.0, 0.0], [1.0, 1.0]])
        batch = smote(minority, AugmentationPlan(k=1, seed=0), 5, lam_override=0.5)
        assert np.allclose(batch.rows, 0.5)

    def test_segment_membership_from_provenance(self):
        rng = np.random.default_rng(1)
        minority = rng.normal(size=(10, 6))
        batch = smote(minority, AugmentationPlan(k=5, seed=2), 100)
        for row, i, z, lam in zip(batch.rows, batch.seed_idx, batch.neighbor_idx, batch.lam):
            expected = minority[i] + lam * (minority[z] - minority[i])
            assert np.allclose(row, expected, atol=1e-12)
            lo = np.minimum(minority[i], minority[z]) - 1e-12
            hi = np.maximum(minority[i], minority[z]) + 1e-12
            assert np.all(row >= lo) and np.all(row <= hi)

    def test_bounding_box_containment(self):
        rng = np.random.default_rng(2)
        minority = rng.normal(size=(15, 3))
        batch = smote(minority, AugmentationPlan(k=4, seed=3), 200)
        assert np.all(batch.rows >= minority.min(axis=0) - 1e-12)
        assert np.all(batch.rows <= minority.max(axis=0) + 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        minority = rng.normal(size=(12, 5))
        b1 = smote(minority, AugmentationPlan(k=3, seed=9), 50)
        b2 = smote(minority, AugmentationPlan(k=3, seed=9), 50)
        assert np.array_equal(b1.rows, b2.rows)
        assert np.array_equal(b1.seed_idx, b2.seed_idx)

    def test_insufficient_minority(self):
        with pytest.raises(InsufficientMinorityError):
            smote(np.zeros((1, 4)), AugmentationPlan(), 5)


class TestNearestNeighbors:
    def test_matches_brute_force_cdist(self):
        rng = np.random.default_rng(4)
        for n in (10, 100, 500):
            pts = rng.normal(size=(n, 7))
            k = min(5, n - 1)
            ours = _nearest_neighbors(pts, pts, k, exclude_self=True)
            d = cdist(pts, pts)
            np.fill_diagonal(d, np.inf)
            expected = np.argsort(d, axis=1, kind="stable")[:, :k]
            assert np.array_equal(ours, expected)


class TestAdasyn:
    def test_majority_fraction_definition(self):
        # one minority point with exactly 3 majority among its 5 nearest
        minority = np.array([[0.0, 0.0], [10.0, 10.0], [10.2, 10.0], [10.0, 10.2]])
        majority = np.array([[0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [50.0, 50.0], [60.0, 60.0]])
        all_rows = np.vstack([majority, minority])
        labels = np.array([0] * 5 + [1] * 4)
        plan = AugmentationPlan(method="adasyn", k=5, seed=0)
        d = cdist(minority[:1], all_rows)[0]
        d[5] = np.inf  # the point itself
        nearest = np.argsort(d, kind="stable")[:5]
        assert (labels[nearest] == 0).sum() == 3  # geometry sanity
        quotas = adasyn_allocation(minority, all_rows, labels, plan)
        g = (5 - 4) * 1.0  # G = (n_maj - n_min) * beta
        r = np.array([3 / 5, 2 / 5, 2 / 5, 2 / 5])
        expected = np.round(r / r.sum() * g).astype(int)
        assert np.array_equal(quotas, expected)

    def test_allocation_sum_within_rounding(self):
        rng = np.random.default_rng(5)
        minority = rng.normal(5, 1, size=(10, 4))
        majority = rng.normal(0, 1, size=(90, 4))
        all_rows = np.vstack([majority, minority])
        labels = np.array([0] * 90 + [1] * 10)
        plan = AugmentationPlan(method="adasyn", k=5, seed=0)
        quotas = adasyn_allocation(minority, all_rows, labels, plan)
        assert np.all(quotas >= 0)
        assert abs(int(quotas.sum()) - 80) <= 10

    def test_border_cluster_receives_more(self):
        rng = np.random.default_rng(6)
        majority = rng.normal(0, 0.5, size=(30, 2))
        border = rng.normal(1.2, 0.3, size=(5, 2))     # touches the majority
        isolated = rng.normal(12, 0.3, size=(5, 2))    # far away
        minority = np.vstack([border, isolated])
        all_rows = np.vstack([majority, minority])
        labels = np.array([0] * 30 + [1] * 10)
        plan = AugmentationPlan(method="adasyn", k=5, seed=0)
        quotas = adasyn_allocation(minority, all_rows, labels, plan)
        assert quotas[:5].sum() > quotas[5:].sum()

    def test_isolated_minority_falls_back_to_uniform(self, caplog):
        rng = np.random.default_rng(7)
        minority = rng.normal(50, 0.1, size=(6, 2))
        majority = rng.normal(0, 0.1, size=(20, 2))
        all_rows = np.vstack([minority, majority])
        labels = np.array([1] * 6 + [0] * 20)
        plan = AugmentationPlan(method="adasyn", k=3, seed=0)
        with caplog.at_level("WARNING"):
            quotas = adasyn_allocation(minority, all_rows, labels, plan)
        assert "uniformly" in caplog.text
        assert np.all(quotas == quotas[0])

    def test_rows_stay_on_minority_segments(self):
        rng = np.random.default_rng(8)
        minority = rng.normal(3, 1, size=(8, 3))
        majority = rng.normal(0, 1, size=(40, 3))
        all_rows = np.vstack([majority, minority])
        labels = np.array([0] * 40 + [1] * 8)
        batch = adasyn(minority, all_rows, labels, AugmentationPlan(method="adasyn", seed=1))
        for row, i, z, lam in zip(batch.rows, batch.seed_idx, batch.neighbor_idx, batch.lam):
            assert np.allclose(row, minority[i] + lam * (minority[z] - minority[i]), atol=1e-12)


class TestAugmentMetadataset:
    def test_none_is_identity(self):
        meta = make_meta(20, 5)
        out = augment_metadataset(meta, AugmentationPlan(method="none"))
        assert out is meta

    def test_smote_balances_to_target_ratio(self):
        meta = make_meta(100, 10)
        out = augment_metadataset(meta, AugmentationPlan(method="smote", seed=0))
        assert len(out) == 110 + 90
        assert int(out.is_synthetic.sum()) == 90
        assert int((out.labels == 1).sum()) == 100

    def test_half_target_ratio(self):
        meta = make_meta(100, 10)
        out = augment_metadataset(meta, AugmentationPlan(method="smote", target_ratio=0.5, seed=0))
        assert int(out.is_synthetic.sum()) == 40

    def test_original_rows_bit_identical(self):
        meta = make_meta(50, 8, seed=1)
        out = augment_metadataset(meta, AugmentationPlan(method="adasyn", seed=2))
        n = len(meta)
        assert out.ids[:n] == meta.ids
        assert np.array_equal(out.X[:n], meta.X)
        assert np.array_equal(out.errors[:n], meta.errors)
        assert np.array_equal(out.labels[:n], meta.labels)
        assert not out.is_synthetic[:n].any()

    def test_synthetic_rows_have_no_error_value(self):
        meta = make_meta(30, 6)
        out = augment_metadataset(meta, AugmentationPlan(method="smote", seed=0))
        assert np.all(np.isnan(out.errors[out.is_synthetic]))
        assert np.all(out.labels[out.is_synthetic] == 1)

    def test_determinism(self):
        meta = make_meta(40, 6, seed=2)
        p = AugmentationPlan(method="adasyn", seed=11)
        o1 = augment_metadataset(meta, p)
        o2 = augment_metadataset(meta, p)
        assert np.array_equal(o1.X, o2.X)

    def test_single_positive_rejected(self):
        meta = make_meta(20, 1)
        with pytest.raises(InsufficientMinorityError):
            augment_metadataset(meta, AugmentationPlan(method="smote"))

    def test_already_augmented_rejected(self):
        meta = make_meta(20, 5)
        out = augment_metadataset(meta, AugmentationPlan(method="smote", seed=0))
        with pytest.raises(ConfigError):
            augment_metadataset(out, AugmentationPlan(method="smote", seed=0))

    def test_synthetic_rows_inside_minority_box_in_raw_space(self):
        meta = make_meta(60, 12, seed=3)
        out = augment_metadataset(meta, AugmentationPlan(method="smote", seed=4))
        minority = meta.X[meta.labels == 1]
        synth = out.X[out.is_synthetic]
        assert np.all(synth >= minority.min(axis=0) - 1e-9)
        assert np.all(synth <= minority.max(axis=0) + 1e-9)
