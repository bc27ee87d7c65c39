import numpy as np
import pytest

from stresscast.corpus import PartitionedSeries, partition
from stresscast.errors import (
    ConfigError,
    EmptyDatasetError,
    InsufficientLengthError,
    ShapeError,
)
from stresscast.forecast import (
    ErrorTable,
    ForecastModel,
    build_global_dataset,
    build_validation_embedding,
    embed,
    evaluate_per_series,
    forecast_recursive,
    forecast_recursive_batch,
    seasonal_naive,
    seasonal_naive_model,
    smape,
    train_global,
)
from stresscast.gbt import TrainConfig

from conftest import make_series, seasonal_series


class TestEmbed:
    def test_definition_unrolled(self):
        ds = embed(make_series("A", [1.0, 2, 3, 4, 5]), p=2)
        assert ds.lags.tolist() == [[2, 1], [3, 2], [4, 3]]
        assert ds.targets.tolist() == [3, 4, 5]
        assert ds.series_ids == ("A",) * 3

    def test_row_count_is_t_minus_p(self):
        ds = embed(make_series("A", np.random.default_rng(0).normal(size=117)), p=12)
        assert len(ds) == 105

    def test_too_short(self):
        with pytest.raises(InsufficientLengthError):
            embed(make_series("A", [1.0, 2]), p=2)

    def test_no_lookahead(self):
        """Rows with targets before index k are identical whether or not the
        series continues past k (future poisoned with extreme sentinels)."""
        rng = np.random.default_rng(1)
        values = rng.normal(size=50)
        poisoned = values.copy()
        poisoned[30:] = 1e12
        full = embed(make_series("A", poisoned), p=5)
        prefix = embed(make_series("A", values[:30]), p=5)
        assert np.array_equal(full.lags[: len(prefix)], prefix.lags)
        assert np.array_equal(full.targets[: len(prefix)], prefix.targets)


def partitions_with_dev_lengths(dev_lengths, h=12):
    parts = []
    for i, n_dev in enumerate(dev_lengths):
        total = n_dev + 2 * h
        ts = make_series(f"S{i}", np.arange(float(total)) + i)
        parts.append(PartitionedSeries(ts.slice(0, n_dev), ts.slice(n_dev, n_dev + h),
                                       ts.slice(n_dev + h, total)))
    return parts


class TestGlobalDataset:
    def test_row_count_sums_series(self):
        parts = partitions_with_dev_lengths([20, 30])
        ds = build_global_dataset(parts, "development", p=12)
        assert len(ds) == (20 - 12) + (30 - 12)

    def test_short_slices_skipped_with_warning(self, caplog):
        parts = partitions_with_dev_lengths([12, 30])
        with caplog.at_level("WARNING"):
            ds = build_global_dataset(parts, "development", p=12)
        assert len(ds) == 18
        assert "skipped" in caplog.text

    def test_all_skipped_is_empty_dataset_error(self):
        parts = partitions_with_dev_lengths([12, 12])
        with pytest.raises(EmptyDatasetError):
            build_global_dataset(parts, "development", p=12)

    def test_ordering_series_then_time(self):
        parts = partitions_with_dev_lengths([14, 14])
        ds = build_global_dataset(parts, "development", p=12)
        assert ds.series_ids == ("S0", "S0", "S1", "S1")
        assert ds.targets[0] < ds.targets[1]

    def test_bad_selector(self):
        with pytest.raises(ConfigError):
            build_global_dataset([], "test", p=12)

    def test_validation_embedding_targets_are_validation_points(self):
        parts = partitions_with_dev_lengths([20, 25], h=12)
        ds = build_validation_embedding(parts, p=12, h=12)
        assert len(ds) == 24
        expected = np.concatenate([parts[0].validation.values, parts[1].validation.values])
        assert np.array_equal(ds.targets, expected)


class TestSeasonalNaive:
    def test_cycle_repeats(self):
        assert seasonal_naive([10.0, 20.0], s=2, h=4).tolist() == [10, 20, 10, 20]

    def test_last_cycle_of_two(self):
        history = np.arange(1.0, 25.0)
        assert seasonal_naive(history, s=12, h=12).tolist() == list(range(13, 25))

    def test_too_short(self):
        with pytest.raises(InsufficientLengthError):
            seasonal_naive(np.arange(11.0), s=12, h=12)

    def test_recursive_model_agrees_with_direct_formula(self):
        history = np.arange(1.0, 25.0)
        model = seasonal_naive_model(s=12, h=12)
        rec = forecast_recursive(model, history, 12)
        assert np.array_equal(rec, seasonal_naive(history, 12, 12))

    def test_idempotent_over_whole_cycles(self):
        rng = np.random.default_rng(2)
        history = rng.normal(size=36)
        model = seasonal_naive_model(s=12, h=12)
        two_cycles = forecast_recursive(model, history, 24)
        one_cycle = forecast_recursive(model, history, 12)
        assert np.array_equal(two_cycles, np.tile(one_cycle, 2))


class TestRecursive:
    def test_identity_on_lag_one_is_fixed_point(self):
        # a period-1 seasonal naive repeats the last observation forever
        model = seasonal_naive_model(s=1, h=5)
        out = forecast_recursive(model, np.array([1.0, 3.0, 7.0]), 5)
        assert out.tolist() == [7.0] * 5

    def test_history_shorter_than_p(self):
        model = seasonal_naive_model(s=12, h=4)
        with pytest.raises(InsufficientLengthError):
            forecast_recursive(model, np.arange(5.0), 4)

    def test_gbt_learns_noiseless_seasonal_rule(self):
        """Model trained on y_i = y_{i-12} data reproduces the pattern."""
        pattern = np.array([3.0, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8]) * 10
        values = np.tile(pattern, 12)
        ds = embed(make_series("A", values), p=12)
        model = train_global(ds, TrainConfig(1.0, 4, 40, 1, "squared", 0), h=12, s=12)
        forecast = forecast_recursive(model, values, 12)
        assert np.allclose(forecast, pattern, rtol=1e-6)

    def test_batch_matches_per_series(self, tiny_corpus):
        parts = [partition(ts, 12) for ts in tiny_corpus]
        ds = build_global_dataset(parts, "development", p=12)
        model = train_global(ds, TrainConfig(0.1, 3, 30, 5, "squared", 0), h=12, s=12)
        histories = np.vstack([p.development.values[-12:] for p in parts])
        batch = forecast_recursive_batch(model, histories, 12)
        for i, part in enumerate(parts):
            single = forecast_recursive(model, part.development.values, 12)
            assert np.array_equal(batch[i], single)


class TestTrainGlobal:
    def test_constant_targets_give_zero_validation_smape(self):
        values = np.full(40, 7.0)
        ds = embed(make_series("A", values), p=6)
        model = train_global(ds, grid=[TrainConfig(0.1, 2, 10, 1, "squared", 0)],
                             validation=ds, h=6, s=12)
        assert model.validation_smape == 0.0
        assert np.allclose(model.predict_rows(ds.lags), 7.0)

    def test_grid_of_one_is_noop(self):
        ds = embed(seasonal_series("A", 60), p=12)
        cfg = TrainConfig(0.1, 2, 10, 5, "squared", 0)
        model = train_global(ds, grid=[cfg], validation=ds, h=12, s=12)
        assert model.learner.config is cfg

    def test_planted_ar1_beats_seasonal_naive(self):
        """One-step oracle: on AR(1) data the fitted model must outscore the
        seasonal-naive baseline evaluated on the same validation slices."""
        rng = np.random.default_rng(3)
        parts = []
        for i in range(20):
            y = np.empty(60)
            y[0] = 100.0
            for t in range(1, 60):
                y[t] = 100 * 0.1 + 0.9 * y[t - 1] + rng.normal(0, 0.01)
            ts = make_series(f"S{i}", y)
            parts.append(partition(ts, h=12))
        ds = build_global_dataset(parts, "development", p=12)
        model = train_global(ds, TrainConfig(0.1, 3, 100, 5, "squared", 0), h=12, s=12)
        gbt_errors = evaluate_per_series(model, parts, "validation")
        naive_errors = evaluate_per_series(seasonal_naive_model(12, 12), parts, "validation")
        assert gbt_errors.mean() < naive_errors.mean()

    def test_empty_dataset(self):
        ds = embed(make_series("A", np.arange(20.0)), p=12)
        empty = type(ds)(ds.lags[:0], ds.targets[:0], (), 12)
        with pytest.raises(EmptyDatasetError):
            train_global(empty, TrainConfig(), h=12, s=12)

    def test_grid_without_validation_rejected(self):
        ds = embed(make_series("A", np.arange(20.0)), p=6)
        with pytest.raises(ConfigError):
            train_global(ds, grid=[TrainConfig(), TrainConfig(seed=1)], h=6, s=12)

    def test_window_mean_scaling_round_trips(self):
        ds = embed(seasonal_series("A", 72, level=1000.0), p=12)
        model = train_global(ds, TrainConfig(0.2, 3, 60, 2, "squared", 0),
                             h=12, s=12, scaling="window_mean")
        preds = model.predict_rows(ds.lags)
        assert smape(ds.targets, preds) < 5.0


class TestSmape:
    def test_hand_value(self):
        assert smape([100, 100], [110, 90]) == pytest.approx(10.0251, abs=1e-3)

    def test_identity_is_zero(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=30)
        assert smape(a, a) == 0.0

    def test_all_zero_convention(self):
        assert smape([0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.normal(size=12) * rng.uniform(0.1, 100)
            b = rng.normal(size=12) * rng.uniform(0.1, 100)
            assert smape(a, b) == smape(b, a)
            c = rng.uniform(0.01, 1000)
            assert smape(c * a, c * b) == pytest.approx(smape(a, b), rel=1e-12)
            assert 0.0 <= smape(a, b) <= 200.0

    def test_opposite_signs_hit_upper_bound(self):
        assert smape([1.0, -2.0], [-1.0, 2.0]) == 200.0

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            smape([1.0, 2.0], [1.0])


class TestEvaluatePerSeries:
    def test_perfect_model_scores_zero(self):
        # periodic series: seasonal naive predicts validation and test exactly
        pattern = np.arange(1.0, 13.0)
        parts = [partition(make_series("A", np.tile(pattern, 5)), h=12)]
        errors = evaluate_per_series(seasonal_naive_model(12, 12), parts, "test")
        assert errors.entries == {"A": 0.0}

    def test_one_entry_per_series(self, tiny_corpus):
        parts = [partition(ts, 12) for ts in tiny_corpus]
        errors = evaluate_per_series(seasonal_naive_model(12, 12), parts, "validation")
        assert sorted(errors.entries) == sorted(tiny_corpus.ids)
        assert all(0.0 <= v <= 200.0 for v in errors.entries.values())

    def test_error_table_rejects_out_of_range(self):
        from stresscast.errors import DataError

        with pytest.raises(DataError):
            ErrorTable({"A": 201.0})

    def test_error_table_csv_round_trip(self, tmp_path):
        table = ErrorTable({"A": 1.5, "B": 0.25})
        path = tmp_path / "errors.csv"
        table.to_csv(path, header_comment="test")
        assert ErrorTable.from_csv(path).entries == table.entries

    def test_bad_slice_name(self):
        with pytest.raises(ConfigError):
            evaluate_per_series(seasonal_naive_model(12, 12), [], "development")
