"""Stress-testing univariate forecasting models.

Train a global autoregressive forecaster over a collection of monthly series,
then learn to predict — from statistical features of a series — whether the
forecaster will incur a large error on it, using oversampling to counter the
rarity of large errors.
"""

from .augment import AugmentationPlan, SyntheticBatch, adasyn, augment_metadataset, smote
from .corpus import (
    CorpusRecipe,
    PartitionedSeries,
    SeriesCollection,
    TimeSeries,
    generate_synthetic_corpus,
    load_csv,
    partition,
    write_csv,
)
from .explain import ShapResult, permutation_importance, summary_export, tree_shap
from .features import FEATURE_NAMES, FeatureMatrix, extract_all, extract_matrix
from .forecast import (
    EmbeddedDataset,
    ErrorTable,
    ForecastModel,
    build_global_dataset,
    embed,
    evaluate_per_series,
    forecast_recursive,
    seasonal_naive,
    train_global,
)
from .gbt import GradientBoostedEnsemble, TrainConfig, fit, grid_search
from .meta import (
    MetaDataset,
    PipelineConfig,
    StressReport,
    ThresholdSpec,
    assemble_metadataset,
    label_large_errors,
    predict_stress,
    resolve_threshold,
    run_pipeline,
    sensitivity_sweep,
    train_metamodel,
)
from .metrics import auc, smape

__version__ = "0.1.0"
