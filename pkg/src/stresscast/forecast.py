"""Time-delay embedding, global forecaster training, seasonal-naive baseline,
recursive multi-step prediction, and per-series SMAPE evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gbt
from .corpus import PartitionedSeries, TimeSeries
from .errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    InsufficientLengthError,
    ShapeError,
)
from .metrics import smape  # noqa: F401  (part of this module's public surface)

logger = logging.getLogger(__name__)

SLICE_SELECTORS = ("development", "train")


@dataclass(frozen=True)
class EmbeddedDataset:
    """Pooled lag-matrix rows. Lags are ordered most recent first:
    row i of a series is ([y_{i-1}, ..., y_{i-p}], target y_i)."""

    lags: np.ndarray          # (n_rows, p)
    targets: np.ndarray       # (n_rows,)
    series_ids: tuple[str, ...]
    p: int

    def __len__(self) -> int:
        return len(self.targets)


def _lag_matrix(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    windows = np.lib.stride_tricks.sliding_window_view(values, p)[:-1]
    return np.ascontiguousarray(windows[:, ::-1]), values[p:]


def embed(series: TimeSeries, p: int) -> EmbeddedDataset:
    """Time-delay embedding of one series slice: t - p rows, temporal order kept."""
    if p < 1:
        raise ConfigError(f"lag count must be positive, got {p}")
    if len(series) < p + 1:
        raise InsufficientLengthError(
            f"series {series.id!r} has {len(series)} points, embedding needs at least {p + 1}"
        )
    lags, targets = _lag_matrix(series.values, p)
    return EmbeddedDataset(lags, targets, (series.id,) * len(targets), p)


def build_global_dataset(partitions, selector: str, p: int) -> EmbeddedDataset:
    """Concatenate per-series embeddings of the selected slice, ordered by
    series then time. Slices shorter than p + 1 are skipped with a warning."""
    if selector not in SLICE_SELECTORS:
        raise ConfigError(f"slice selector must be one of {SLICE_SELECTORS}, got {selector!r}")
    lag_parts, target_parts, ids = [], [], []
    skipped = []
    for part in partitions:
        sl = part.development if selector == "development" else part.train
        if len(sl) < p + 1:
            skipped.append(sl.id)
            continue
        lags, targets = _lag_matrix(sl.values, p)
        lag_parts.append(lags)
        target_parts.append(targets)
        ids.extend([sl.id] * len(targets))
    if skipped:
        logger.warning("skipped %d series with %s slice shorter than %d points (e.g. %s)",
                       len(skipped), selector, p + 1, skipped[:5])
    if not lag_parts:
        raise EmptyDatasetError(f"no series long enough to embed {selector!r} slices with p={p}")
    return EmbeddedDataset(np.vstack(lag_parts), np.concatenate(target_parts), tuple(ids), p)


def build_validation_embedding(partitions, p: int, h: int) -> EmbeddedDataset:
    """One-step rows whose targets are exactly the validation points; the lag
    windows come from the train history, so this scores one-step-ahead
    accuracy on held-out targets without recursion."""
    lag_parts, target_parts, ids = [], [], []
    for part in partitions:
        train = part.train
        if len(train) < p + h:
            continue
        lags, targets = _lag_matrix(train.values, p)
        lag_parts.append(lags[-h:])
        target_parts.append(targets[-h:])
        ids.extend([train.id] * h)
    if not lag_parts:
        raise EmptyDatasetError(f"no series long enough for a validation embedding with p={p}, h={h}")
    return EmbeddedDataset(np.vstack(lag_parts), np.concatenate(target_parts), tuple(ids), p)


@dataclass
class ForecastModel:
    """A trained forecaster: either a boosted ensemble over p lags or the
    seasonal-naive marker. p and h are fixed at training time."""

    kind: str                 # "gbt" | "seasonal_naive"
    p: int
    h: int
    s: int
    learner: gbt.GradientBoostedEnsemble | None = None
    scaling: str = "none"     # "none" | "window_mean"
    validation_smape: float | None = None

    def predict_rows(self, lag_rows: np.ndarray) -> np.ndarray:
        """One-step prediction from lag rows ordered most recent first."""
        lag_rows = np.asarray(lag_rows, dtype=np.float64)
        if lag_rows.ndim != 2 or lag_rows.shape[1] != self.p:
            raise ShapeError(f"expected (n, {self.p}) lag rows, got {lag_rows.shape}")
        if self.kind == "seasonal_naive":
            return lag_rows[:, self.s - 1].copy()
        if self.scaling == "window_mean":
            scale = lag_rows.mean(axis=1)
            scale = np.where(np.abs(scale) < 1e-12, 1.0, scale)
            return self.learner.predict(lag_rows / scale[:, None]) * scale
        return self.learner.predict(lag_rows)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "h": self.h,
            "s": self.s,
            "scaling": self.scaling,
            "validation_smape": self.validation_smape,
            "learner": self.learner.to_json_dict() if self.learner is not None else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ForecastModel":
        try:
            learner = gbt.GradientBoostedEnsemble.from_json_dict(d["learner"]) if d.get("learner") else None
            return cls(kind=d["kind"], p=int(d["p"]), h=int(d["h"]), s=int(d["s"]),
                       learner=learner, scaling=d.get("scaling", "none"),
                       validation_smape=d.get("validation_smape"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed forecaster JSON: {exc!r}") from exc


def seasonal_naive_model(s: int, h: int) -> ForecastModel:
    """Seasonal-naive as a ForecastModel; needs p = s lags of history."""
    return ForecastModel(kind="seasonal_naive", p=s, h=h, s=s)


def seasonal_naive(history, s: int, h: int) -> np.ndarray:
    """Repeat the last observed seasonal cycle: forecast_k = y[t - s + ((k-1) mod s)]."""
    values = history.values if isinstance(history, TimeSeries) else np.asarray(history, dtype=np.float64)
    if len(values) < s:
        raise InsufficientLengthError(f"seasonal naive needs at least s={s} points, got {len(values)}")
    cycle = values[-s:]
    return cycle[np.arange(h) % s]


def forecast_recursive(model: ForecastModel, history, h: int) -> np.ndarray:
    """Multi-step forecast; step k feeds the predictions of steps < k back in
    as lag inputs."""
    values = history.values if isinstance(history, TimeSeries) else np.asarray(history, dtype=np.float64)
    return forecast_recursive_batch(model, values.reshape(1, -1), h)[0]


def forecast_recursive_batch(model: ForecastModel, histories: np.ndarray, h: int) -> np.ndarray:
    """Recursive forecasting for many series at once; row i of histories holds
    (at least) the last p observations of series i."""
    histories = np.asarray(histories, dtype=np.float64)
    if histories.ndim != 2 or histories.shape[1] < model.p:
        raise InsufficientLengthError(
            f"recursive forecasting needs at least p={model.p} history points, got {histories.shape}"
        )
    window = histories[:, -model.p:].copy()  # column j holds y_{t-p+1+j} .. most recent last
    out = np.empty((histories.shape[0], h), dtype=np.float64)
    for k in range(h):
        pred = model.predict_rows(window[:, ::-1])
        out[:, k] = pred
        window = np.concatenate([window[:, 1:], pred[:, None]], axis=1)
    return out


def forecaster_default_grid(seed: int = 0) -> list[gbt.TrainConfig]:
    """Deterministic default grid for the global forecaster."""
    grid = []
    for lr in (0.05, 0.1):
        for depth in (3, 6):
            for n_trees in (200, 500):
                grid.append(gbt.TrainConfig(
                    learning_rate=lr, max_depth=depth, n_trees=n_trees,
                    min_samples_leaf=20, loss="squared", seed=seed))
    return grid


def train_global(dataset: EmbeddedDataset, config: gbt.TrainConfig | None = None,
                 grid=None, validation: EmbeddedDataset | None = None,
                 h: int = 12, s: int = 12, scaling: str = "none") -> ForecastModel:
    """Train the global forecaster on a pooled embedding.

    With a grid and a validation embedding, every configuration is fit and the
    one minimizing one-step SMAPE on the validation rows wins (ties break to
    the earliest grid position). Otherwise `config` is used directly.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty embedding")
    if not np.all(np.isfinite(dataset.targets)):
        raise DataError("embedding targets must be finite")
    if scaling not in ("none", "window_mean"):
        raise ConfigError(f"scaling must be 'none' or 'window_mean', got {scaling!r}")

    def _training_arrays():
        if scaling == "window_mean":
            scale = dataset.lags.mean(axis=1)
            scale = np.where(np.abs(scale) < 1e-12, 1.0, scale)
            return dataset.lags / scale[:, None], dataset.targets / scale
        return dataset.lags, dataset.targets

    X, y = _training_arrays()
    candidates = list(grid) if grid is not None else [config]
    if not candidates or candidates[0] is None:
        raise ConfigError("train_global needs a config or a non-empty grid")
    if len(candidates) > 1 and validation is None:
        raise ConfigError("tuning over a grid requires a validation embedding")
    best_model, best_score = None, None
    for cand in candidates:
        ensemble = gbt.fit(X, y, cand)
        model = ForecastModel(kind="gbt", p=dataset.p, h=h, s=s, learner=ensemble, scaling=scaling)
        score = None
        if validation is not None:
            score = smape(validation.targets, model.predict_rows(validation.lags))
        if best_score is None or (score is not None and score < best_score):
            best_model, best_score = model, score
    best_model.validation_smape = best_score
    return best_model


@dataclass(frozen=True)
class ErrorTable:
    """Per-series SMAPE on an evaluation slice; every value in [0, 200]."""

    entries: dict[str, float]

    def __post_init__(self):
        for sid, v in self.entries.items():
            if not (0.0 <= v <= 200.0):
                raise DataError(f"SMAPE for series {sid!r} out of [0, 200]: {v}")

    def __len__(self) -> int:
        return len(self.entries)

    def values(self) -> np.ndarray:
        return np.array([self.entries[k] for k in sorted(self.entries)], dtype=np.float64)

    def mean(self) -> float:
        return float(self.values().mean())

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["unique_id", "smape"])
            for sid in sorted(self.entries):
                writer.writerow([sid, repr(self.entries[sid])])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ErrorTable":
        entries = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        for row in rows[1:]:
            entries[row[0]] = float(row[1])
        return cls(entries)


def evaluate_per_series(model: ForecastModel, partitions, which: str) -> ErrorTable:
    """Recursive h-step forecasts against the chosen slice, one SMAPE per series.

    which="validation": forecast from the development history, score against
    the validation slice. which="test": forecast from the full train history,
    score against the test slice.
    """
    if which not in ("validation", "test"):
        raise ConfigError(f"slice must be 'validation' or 'test', got {which!r}")
    parts = list(partitions)
    if not parts:
        raise EmptyDatasetError("no partitioned series to evaluate")
    h = len(parts[0].test)
    for part in parts:
        hist = part.development if which == "validation" else part.train
        if len(hist) < model.p:
            raise InsufficientLengthError(
                f"series {part.id!r}: history of {len(hist)} points is shorter than p={model.p}"
            )
    histories = np.vstack([
        (part.development if which == "validation" else part.train).values[-model.p:]
        for part in parts
    ])
    forecasts = forecast_recursive_batch(model, histories, h)
    entries = {}
    for i, part in enumerate(parts):
        actual = (part.validation if which == "validation" else part.test).values
        entries[part.id] = smape(actual, forecasts[i])
    return ErrorTable(entries)
