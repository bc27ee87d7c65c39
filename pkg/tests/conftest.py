import numpy as np
import pytest

from stresscast.corpus import CorpusRecipe, SeriesCollection, TimeSeries, generate_synthetic_corpus
from stresscast.gbt import TrainConfig
from stresscast.meta import PipelineConfig, ThresholdSpec


def make_series(sid: str, values, start: int = 24000) -> TimeSeries:
    values = np.asarray(values, dtype=np.float64)
    return TimeSeries(sid, np.arange(start, start + len(values)), values)


def seasonal_series(sid: str, n: int, amplitude: float = 10.0, noise: float = 0.5,
                    level: float = 100.0, slope: float = 0.0, seed: int = 0) -> TimeSeries:
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    y = level + slope * t + amplitude * np.sin(2 * np.pi * t / 12) + rng.normal(0, noise, n)
    return make_series(sid, y)


@pytest.fixture(scope="session")
def tiny_corpus() -> SeriesCollection:
    collection, _ = generate_synthetic_corpus(CorpusRecipe(n_easy=12, n_hard=12, length=60), seed=7)
    return collection


@pytest.fixture(scope="session")
def fast_config() -> PipelineConfig:
    """Single-configuration grids keep pipeline-level tests quick."""
    return PipelineConfig(
        threshold=ThresholdSpec("percentile", 80.0),
        forecaster_grid=(TrainConfig(0.1, 3, 60, 5, "squared", 0),),
        metamodel_grid=(TrainConfig(0.1, 2, 60, 5, "logistic", 0),),
        seed=0,
    )
