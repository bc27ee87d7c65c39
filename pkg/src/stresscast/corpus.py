"""Time series containers, CSV ingestion, temporal partitioning, and synthetic corpora.

Timestamps are integer month indices internally (year * 12 + month - 1);
calendar strings exist only at the I/O boundary.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorpusFormatError, InsufficientLengthError

logger = logging.getLogger(__name__)

MONTHLY_PERIOD = 12
DEFAULT_HORIZON = 12

# Smallest development slice partition() will accept (one seasonal cycle).
MIN_DEVELOPMENT = 12

_DS_RE = re.compile(r"^(\d{4})-(\d{2})(?:-\d{2})?$")


def min_series_length(h: int) -> int:
    """Shortest series admitted to the pipeline: 3h + 1 leaves a development
    slice of at least h + 1 points after the two h-sized cuts, so every series
    contributes at least one embedding row at p = h."""
    return 3 * h + 1


def parse_month(ds: str) -> int:
    """YYYY-MM or YYYY-MM-DD -> month index. Raises ValueError on anything else."""
    m = _DS_RE.match(ds.strip())
    if m is None:
        raise ValueError(f"timestamp {ds!r} is not YYYY-MM or YYYY-MM-DD")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"timestamp {ds!r} has month outside 1..12")
    return year * 12 + (month - 1)


def format_month(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeSeries:
    """A single monthly series: strictly consecutive month indices, finite values."""

    id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or vals.ndim != 1 or len(ts) != len(vals) or len(ts) < 1:
            raise ValueError(f"series {self.id!r}: timestamps/values must be equal-length 1-D, length >= 1")
        if len(ts) > 1 and not np.all(np.diff(ts) == 1):
            raise ValueError(f"series {self.id!r}: timestamps must increase by exactly one month")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"series {self.id!r}: values must be finite")
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "values", _readonly(vals))

    def __len__(self) -> int:
        return len(self.values)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        if not (0 <= start < stop <= len(self)):
            raise ValueError(f"series {self.id!r}: invalid slice [{start}, {stop})")
        return TimeSeries(self.id, self.timestamps[start:stop], self.values[start:stop])


@dataclass(frozen=True)
class SeriesCollection:
    """Ordered, immutable collection of series sharing one seasonal period."""

    series: tuple[TimeSeries, ...]
    frequency: int = MONTHLY_PERIOD

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate series ids in collection: {dupes}")

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.series)

    def total_observations(self) -> int:
        return sum(len(s) for s in self.series)


@dataclass(frozen=True)
class PartitionedSeries:
    """development ++ validation ++ test reconstructs the original series;
    validation and test both have length h."""

    development: TimeSeries
    validation: TimeSeries
    test: TimeSeries

    @property
    def id(self) -> str:
        return self.development.id

    @property
    def train(self) -> TimeSeries:
        """development + validation, i.e. everything before the test slice."""
        return TimeSeries(
            self.development.id,
            np.concatenate([self.development.timestamps, self.validation.timestamps]),
            np.concatenate([self.development.values, self.validation.values]),
        )

    @property
    def full(self) -> TimeSeries:
        return TimeSeries(
            self.development.id,
            np.concatenate([self.development.timestamps, self.validation.timestamps, self.test.timestamps]),
            np.concatenate([self.development.values, self.validation.values, self.test.values]),
        )


def partition(series: TimeSeries, h: int, min_development: int = MIN_DEVELOPMENT) -> PartitionedSeries:
    """Cut the last h points as test, the h before as validation, the rest as development."""
    if h < 1:
        raise ConfigError(f"horizon must be positive, got {h}")
    needed = 2 * h + min_development
    if len(series) < needed:
        raise InsufficientLengthError(
            f"series {series.id!r} has {len(series)} points; partition with h={h} needs at least {needed}"
        )
    n = len(series)
    return PartitionedSeries(
        development=series.slice(0, n - 2 * h),
        validation=series.slice(n - 2 * h, n - h),
        test=series.slice(n - h, n),
    )


def filter_short_series(collection: SeriesCollection, min_length: int) -> tuple[SeriesCollection, list[str]]:
    """Drop series shorter than min_length; returns (kept collection, rejected ids)."""
    kept = [s for s in collection if len(s) >= min_length]
    rejected = [s.id for s in collection if len(s) < min_length]
    if rejected:
        logger.warning(
            "rejected %d of %d series shorter than %d points (e.g. %s)",
            len(rejected), len(collection), min_length, rejected[:5],
        )
    return SeriesCollection(tuple(kept), collection.frequency), rejected


def load_csv(path: str | Path, frequency: int = MONTHLY_PERIOD) -> SeriesCollection:
    """Read a long-format CSV with header unique_id,ds,y into a collection.

    Rows are grouped by unique_id and sorted by ds within each id. Raises
    CorpusFormatError on unparseable rows (naming the line number), duplicate
    (id, ds) pairs, or gaps in the monthly sequence.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    per_id: dict[str, list[tuple[int, float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusFormatError(f"{path}: empty file, expected header unique_id,ds,y") from None
        header = [c.strip().lstrip("#").strip() for c in header]
        if header[:3] != ["unique_id", "ds", "y"]:
            raise CorpusFormatError(f"{path}: expected header unique_id,ds,y, got {header[:3]}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise CorpusFormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            uid = row[0].strip()
            if not uid:
                raise CorpusFormatError(f"{path}:{lineno}: empty unique_id")
            try:
                period = parse_month(row[1])
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                value = float(row[2])
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: value {row[2]!r} is not a number") from None
            if not np.isfinite(value):
                raise CorpusFormatError(f"{path}:{lineno}: value {row[2]!r} is not finite")
            per_id.setdefault(uid, []).append((period, value))

    series = []
    for uid in sorted(per_id):
        rows = sorted(per_id[uid], key=lambda r: r[0])
        periods = np.array([r[0] for r in rows], dtype=np.int64)
        dup = np.nonzero(np.diff(periods) == 0)[0]
        if dup.size:
            raise CorpusFormatError(
                f"{path}: duplicate (unique_id, ds) = ({uid!r}, {format_month(int(periods[dup[0]]))})"
            )
        gap = np.nonzero(np.diff(periods) > 1)[0]
        if gap.size:
            missing = format_month(int(periods[gap[0]]) + 1)
            raise CorpusFormatError(f"{path}: series {uid!r} has a gap (missing month {missing})")
        values = np.array([r[1] for r in rows], dtype=np.float64)
        series.append(TimeSeries(uid, periods, values))
    return SeriesCollection(tuple(series), frequency)


def write_csv(collection: SeriesCollection, path: str | Path, header_comment: str | None = None) -> None:
    """Write a collection back to long format, rows ordered by (unique_id, ds)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["unique_id", "ds", "y"])
        for s in sorted(collection, key=lambda s: s.id):
            for t, v in zip(s.timestamps, s.values):
                writer.writerow([s.id, format_month(int(t)), repr(float(v))])


@dataclass(frozen=True)
class CorpusRecipe:
    """Counts and length for a planted-difficulty synthetic corpus."""

    n_easy: int
    n_hard: int
    length: int = 120

    def __post_init__(self):
        if self.n_easy < 1 or self.n_hard < 1:
            raise ConfigError(f"corpus recipe needs positive easy/hard counts, got {self.n_easy}/{self.n_hard}")
        if self.length < 1:
            raise ConfigError(f"corpus recipe needs positive length, got {self.length}")


_START_PERIOD = parse_month("1990-01")


def _easy_series(rng: np.random.Generator, n: int) -> np.ndarray:
    # Strong seasonality: amplitude at least 5x the noise std.
    level = rng.uniform(50.0, 150.0)
    slope = rng.uniform(-0.1, 0.3)
    amplitude = rng.uniform(8.0, 20.0)
    noise_std = amplitude / rng.uniform(5.0, 10.0)
    phase = rng.uniform(0.0, MONTHLY_PERIOD)
    t = np.arange(n)
    seasonal = amplitude * np.sin(2.0 * np.pi * (t + phase) / MONTHLY_PERIOD)
    return level + slope * t + seasonal + rng.normal(0.0, noise_std, n)


def _hard_series(rng: np.random.Generator, n: int, flavor: int) -> np.ndarray:
    # Error severity scales with the same parameters the features see, so the
    # planted difficulty stays learnable from historical slices.
    level = rng.uniform(50.0, 150.0)
    if flavor % 2 == 0:
        # Random walk; per-step size is a fraction of the level.
        step = level * rng.uniform(0.02, 0.06)
        return level + np.cumsum(rng.normal(0.0, step, n))
    # Recurrent level shifts: a jump roughly every 12..24 points, running
    # through the whole series (so evaluation windows contain them too).
    y = level + rng.normal(0.0, 0.01 * level, n)
    t = int(rng.uniform(6, 18))
    while t < n:
        y[t:] += rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.3) * level
        t += int(rng.uniform(12, 24))
    return y


def generate_synthetic_corpus(recipe: CorpusRecipe, seed: int) -> tuple[SeriesCollection, dict[str, str]]:
    """Deterministically generate a corpus of easy (strongly seasonal) and hard
    (random walk / level shift) series. Returns the collection and a
    {series_id: "easy"|"hard"} map for planted-truth testing."""
    rng = np.random.default_rng(seed)
    timestamps = np.arange(_START_PERIOD, _START_PERIOD + recipe.length)
    series: list[TimeSeries] = []
    difficulty: dict[str, str] = {}
    width = max(3, len(str(max(recipe.n_easy, recipe.n_hard) - 1)))
    for i in range(recipe.n_easy):
        sid = f"easy_{i:0{width}d}"
        series.append(TimeSeries(sid, timestamps, _easy_series(rng, recipe.length)))
        difficulty[sid] = "easy"
    for i in range(recipe.n_hard):
        sid = f"hard_{i:0{width}d}"
        series.append(TimeSeries(sid, timestamps, _hard_series(rng, recipe.length, flavor=i)))
        difficulty[sid] = "hard"
    return SeriesCollection(tuple(series), MONTHLY_PERIOD), difficulty
