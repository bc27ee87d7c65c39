import numpy as np
import pytest

from stresscast.corpus import (
    CorpusRecipe,
    TimeSeries,
    filter_short_series,
    generate_synthetic_corpus,
    load_csv,
    min_series_length,
    parse_month,
    partition,
    write_csv,
)
from stresscast.errors import ConfigError, CorpusFormatError, InsufficientLengthError

from conftest import make_series


def write_lines(tmp_path, lines, name="data.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadCsv:
    def test_two_row_series(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-01,1.0", "A,1990-02,2.0"])
        coll = load_csv(path)
        assert len(coll) == 1
        assert len(coll.series[0]) == 2
        assert coll.series[0].values.tolist() == [1.0, 2.0]

    def test_gap_is_rejected(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-01,1.0", "A,1990-03,2.0"])
        with pytest.raises(CorpusFormatError, match="'A'.*gap|gap.*'A'"):
            load_csv(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-01,1.0", "A,1990-01,2.0"])
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_csv(path)

    def test_malformed_value_names_line(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-01,1.0", "A,1990-02,oops"])
        with pytest.raises(CorpusFormatError, match=":3:"):
            load_csv(path)

    def test_malformed_timestamp_names_line(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,January-1990,1.0"])
        with pytest.raises(CorpusFormatError, match=":2:"):
            load_csv(path)

    def test_missing_header(self, tmp_path):
        path = write_lines(tmp_path, ["id,date,value", "A,1990-01,1.0"])
        with pytest.raises(CorpusFormatError, match="header"):
            load_csv(path)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_csv(tmp_path / "nope.csv")

    def test_day_suffix_accepted(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-01-31,1.0", "A,1990-02-28,2.0"])
        coll = load_csv(path)
        assert len(coll.series[0]) == 2

    def test_rows_sorted_within_id(self, tmp_path):
        path = write_lines(tmp_path, ["unique_id,ds,y", "A,1990-02,2.0", "A,1990-01,1.0"])
        coll = load_csv(path)
        assert coll.series[0].values.tolist() == [1.0, 2.0]

    def test_round_trip(self, tmp_path):
        lines = ["unique_id,ds,y", "B,1990-01,3.5", "A,1990-02,2.25", "A,1990-01,1.0"]
        path = write_lines(tmp_path, lines)
        coll = load_csv(path)
        out = tmp_path / "out.csv"
        write_csv(coll, out)
        again = load_csv(out)
        assert again.ids == coll.ids
        for s1, s2 in zip(coll, again):
            assert np.array_equal(s1.values, s2.values)
            assert np.array_equal(s1.timestamps, s2.timestamps)


class TestTimeSeries:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="finite"):
            make_series("A", [1.0, float("nan")])

    def test_rejects_gapped_timestamps(self):
        with pytest.raises(ValueError, match="month"):
            TimeSeries("A", np.array([0, 2]), np.array([1.0, 2.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            TimeSeries("A", np.array([0, 1]), np.array([1.0]))

    def test_values_read_only(self):
        ts = make_series("A", [1.0, 2.0])
        with pytest.raises(ValueError):
            ts.values[0] = 5.0


class TestPartition:
    def test_length_40(self):
        part = partition(make_series("A", np.arange(40.0)), h=12)
        assert (len(part.development), len(part.validation), len(part.test)) == (16, 12, 12)

    def test_boundary_length_36(self):
        part = partition(make_series("A", np.arange(36.0)), h=12)
        assert (len(part.development), len(part.validation), len(part.test)) == (12, 12, 12)

    def test_too_short_names_id_and_minimum(self):
        with pytest.raises(InsufficientLengthError, match="'A'.*16"):
            partition(make_series("A", [1.0, 2, 3, 4, 5]), h=2)

    def test_lossless(self, tiny_corpus):
        for ts in tiny_corpus:
            part = partition(ts, h=12)
            rebuilt = np.concatenate([part.development.values, part.validation.values, part.test.values])
            assert np.array_equal(rebuilt, ts.values)
            assert np.array_equal(part.full.values, ts.values)
            assert np.array_equal(part.train.values, ts.values[:-12])

    def test_test_is_last_h(self):
        part = partition(make_series("A", np.arange(40.0)), h=12)
        assert np.array_equal(part.test.values, np.arange(28.0, 40.0))
        assert np.array_equal(part.validation.values, np.arange(16.0, 28.0))


class TestSyntheticCorpus:
    def test_deterministic(self):
        recipe = CorpusRecipe(n_easy=10, n_hard=10, length=120)
        c1, d1 = generate_synthetic_corpus(recipe, seed=1)
        c2, d2 = generate_synthetic_corpus(recipe, seed=1)
        assert d1 == d2
        for s1, s2 in zip(c1, c2):
            assert s1.id == s2.id
            assert np.array_equal(s1.values, s2.values)

    def test_different_seeds_differ(self):
        recipe = CorpusRecipe(n_easy=2, n_hard=2, length=60)
        c1, _ = generate_synthetic_corpus(recipe, seed=1)
        c2, _ = generate_synthetic_corpus(recipe, seed=2)
        assert not np.array_equal(c1.series[0].values, c2.series[0].values)

    def test_zero_counts_rejected(self):
        with pytest.raises(ConfigError):
            CorpusRecipe(n_easy=0, n_hard=0)

    def test_bad_length_rejected(self):
        with pytest.raises(ConfigError):
            CorpusRecipe(n_easy=1, n_hard=1, length=0)

    def test_labels_cover_all_series(self):
        coll, labels = generate_synthetic_corpus(CorpusRecipe(3, 4, 48), seed=0)
        assert set(labels) == set(coll.ids)
        assert sorted(labels.values()).count("easy") == 3

    def test_hard_series_are_harder_for_seasonal_naive(self):
        # planted-difficulty oracle: run the baseline forecaster on both groups
        from stresscast.forecast import evaluate_per_series, seasonal_naive_model
        from stresscast.corpus import partition as split

        coll, labels = generate_synthetic_corpus(CorpusRecipe(100, 100, 120), seed=7)
        parts = [split(ts, 12) for ts in coll]
        errors = evaluate_per_series(seasonal_naive_model(12, 12), parts, "test")
        easy = [errors.entries[sid] for sid in errors.entries if labels[sid] == "easy"]
        hard = [errors.entries[sid] for sid in errors.entries if labels[sid] == "hard"]
        assert np.median(hard) > np.median(easy)


class TestFiltering:
    def test_min_series_length(self):
        assert min_series_length(12) == 37

    def test_filter_short_series(self):
        coll, _ = generate_synthetic_corpus(CorpusRecipe(2, 2, 40), seed=0)
        kept, rejected = filter_short_series(coll, 37)
        assert len(kept) == 4 and rejected == []
        kept, rejected = filter_short_series(coll, 41)
        assert len(kept) == 0 and len(rejected) == 4


def test_parse_month_variants():
    assert parse_month("1990-01") == 1990 * 12
    assert parse_month("1990-12-31") == 1990 * 12 + 11
    with pytest.raises(ValueError):
        parse_month("1990-13")
