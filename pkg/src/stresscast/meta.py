"""Large-error labeling, meta-dataset assembly, metamodel training, AUC
evaluation, threshold sweeps, and the end-to-end pipeline orchestration."""

from __future__ import annotations

import csv
import dataclasses
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gbt
from .augment import AugmentationPlan, METHODS, augment_metadataset
from .corpus import SeriesCollection, min_series_length, filter_short_series, partition
from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateTargetError,
    EmptyDatasetError,
    InsufficientMinorityError,
    PipelineError,
    ShapeError,
    StressCastError,
)
from .features import FeatureMatrix, N_FEATURES, extract_matrix, impute_missing
from .forecast import (
    ErrorTable,
    build_global_dataset,
    build_validation_embedding,
    evaluate_per_series,
    forecaster_default_grid,
    seasonal_naive_model,
    train_global,
)
from .metrics import auc  # noqa: F401  (part of this module's public surface)

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (75.0, 80.0, 85.0, 90.0, 95.0)
MIN_SWEEP_POSITIVES = 5


@dataclass(frozen=True)
class ThresholdSpec:
    """How to resolve the large-error threshold: an absolute SMAPE value or a
    percentile of the observed errors."""

    mode: str = "percentile"
    value: float = 90.0

    def __post_init__(self):
        if self.mode not in ("absolute", "percentile"):
            raise ConfigError(f"threshold mode must be absolute|percentile, got {self.mode!r}")
        if self.mode == "percentile" and not 0.0 < self.value < 100.0:
            raise ConfigError(f"percentile must be in (0, 100), got {self.value}")
        if self.mode == "absolute" and self.value < 0.0:
            raise ConfigError(f"absolute threshold must be >= 0, got {self.value}")


def resolve_threshold(errors: ErrorTable, spec: ThresholdSpec) -> float:
    """Absolute mode passes the value through; percentile mode uses the
    linear-interpolation (closest-ranks) percentile of the error values."""
    if len(errors) == 0:
        raise EmptyDatasetError("cannot resolve a threshold from an empty error table")
    if spec.mode == "absolute":
        return float(spec.value)
    return float(np.percentile(errors.values(), spec.value, method="linear"))


def label_large_errors(errors: ErrorTable, tau: float) -> dict[str, int]:
    """b = 1 iff error strictly exceeds tau."""
    if not np.isfinite(tau):
        raise ConfigError(f"threshold must be finite, got {tau}")
    return {sid: int(e > tau) for sid, e in errors.entries.items()}


@dataclass(frozen=True)
class MetaDataset:
    """Rows of (series id, feature vector, error, large-error label); synthetic
    rows carry NaN errors and the synthetic flag."""

    ids: tuple[str, ...]
    X: np.ndarray
    errors: np.ndarray
    labels: np.ndarray
    is_synthetic: np.ndarray
    tau: float

    def __post_init__(self):
        n = len(self.ids)
        if self.X.shape != (n, N_FEATURES) or self.errors.shape != (n,) or \
                self.labels.shape != (n,) or self.is_synthetic.shape != (n,):
            raise ShapeError("meta-dataset arrays are inconsistent")
        real = ~self.is_synthetic
        real_ids = [self.ids[i] for i in np.nonzero(real)[0]]
        if len(set(real_ids)) != len(real_ids):
            raise AlignmentError("duplicate series ids among non-synthetic meta rows")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))

    def subset(self, idx: np.ndarray) -> "MetaDataset":
        return dataclasses.replace(
            self,
            ids=tuple(self.ids[i] for i in idx),
            X=self.X[idx],
            errors=self.errors[idx],
            labels=self.labels[idx],
            is_synthetic=self.is_synthetic[idx],
        )

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        from .features import FEATURE_NAMES

        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["unique_id", *FEATURE_NAMES, "smape", "label", "is_synthetic"])
            for i, sid in enumerate(self.ids):
                err = "" if np.isnan(self.errors[i]) else repr(float(self.errors[i]))
                writer.writerow([sid, *[repr(float(v)) for v in self.X[i]],
                                 err, int(self.labels[i]), int(self.is_synthetic[i])])

    @classmethod
    def from_csv(cls, path: str | Path, tau: float = float("nan")) -> "MetaDataset":
        from .features import FEATURE_NAMES

        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header = rows[0]
        expected = ["unique_id", *FEATURE_NAMES, "smape", "label", "is_synthetic"]
        if header != expected:
            raise ConfigError(f"meta-dataset CSV header mismatch: {header[:4]}...")
        ids, X, errs, labels, syn = [], [], [], [], []
        for r in rows[1:]:
            ids.append(r[0])
            X.append([float(v) for v in r[1:1 + N_FEATURES]])
            errs.append(float(r[1 + N_FEATURES]) if r[1 + N_FEATURES] else float("nan"))
            labels.append(int(r[2 + N_FEATURES]))
            syn.append(bool(int(r[3 + N_FEATURES])))
        return cls(tuple(ids), np.array(X, dtype=np.float64), np.array(errs),
                   np.array(labels, dtype=np.int8), np.array(syn, dtype=bool), tau)


def assemble_metadataset(features: FeatureMatrix, errors: ErrorTable, tau: float) -> MetaDataset:
    """One row per series, ordered by id; features and errors must cover
    exactly the same ids."""
    feat_ids = set(features.ids)
    err_ids = set(errors.entries)
    if feat_ids != err_ids:
        missing = sorted(feat_ids ^ err_ids)
        raise AlignmentError(f"feature/error key sets differ on {len(missing)} ids (e.g. {missing[:5]})")
    order = sorted(features.ids)
    pos = {sid: i for i, sid in enumerate(features.ids)}
    X = np.vstack([features.X[pos[sid]] for sid in order])
    errs = np.array([errors.entries[sid] for sid in order], dtype=np.float64)
    labels = (errs > tau).astype(np.int8)
    return MetaDataset(tuple(order), X, errs, labels,
                       np.zeros(len(order), dtype=bool), float(tau))


def metamodel_default_grid(seed: int = 0) -> list[gbt.TrainConfig]:
    """Deterministic default grid for the binary metamodel."""
    grid = []
    for lr in (0.05, 0.1):
        for depth in (2, 3):
            for n_trees in (100, 300):
                for msl in (5, 20):
                    grid.append(gbt.TrainConfig(
                        learning_rate=lr, max_depth=depth, n_trees=n_trees,
                        min_samples_leaf=msl, loss="logistic", seed=seed))
    return grid


def _stratified_split(labels: np.ndarray, val_fraction: float, seed: int):
    """Seeded per-class shuffle; at least one validation row per class."""
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = np.nonzero(labels == cls)[0]
        if len(idx) < 2:
            raise DegenerateTargetError(
                f"class {cls} has {len(idx)} rows; need at least 2 for an internal split"
            )
        perm = rng.permutation(idx)
        n_val = max(1, int(round(val_fraction * len(idx))))
        n_val = min(n_val, len(idx) - 1)  # keep at least one training row per class
        val_idx.append(perm[:n_val])
        train_idx.append(perm[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train_metamodel(meta: MetaDataset, plan: AugmentationPlan, grid,
                    seed: int = 0) -> gbt.GradientBoostedEnsemble:
    """Stratified 80/20 internal split (seeded); augmentation applied to the
    training side only; grid search scored by AUC on the untouched validation
    side; the winning configuration is refit on all original rows plus an
    augmentation of the full original set."""
    if meta.is_synthetic.any():
        raise ConfigError("train_metamodel expects an unaugmented meta-dataset")
    labels = np.asarray(meta.labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise DegenerateTargetError("meta-dataset must contain both classes")
    train_idx, val_idx = _stratified_split(labels, 0.2, seed)
    meta_train = meta.subset(train_idx)
    aug_train = augment_metadataset(meta_train, plan)
    best_cfg, _ = gbt.grid_search(
        grid,
        train=(aug_train.X, aug_train.labels.astype(np.float64)),
        validation=(meta.X[val_idx], labels[val_idx].astype(np.float64)),
        metric="auc",
    )
    aug_full = augment_metadataset(meta, plan)
    return gbt.fit(aug_full.X, aug_full.labels.astype(np.float64), best_cfg)


def predict_stress(metamodel: gbt.GradientBoostedEnsemble, features) -> float | np.ndarray:
    """Probability that the forecaster incurs a large error, from a feature
    vector (returns a float) or a feature matrix (returns an array)."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        return float(metamodel.predict(arr.reshape(1, -1))[0])
    return metamodel.predict(arr)


@dataclass(frozen=True)
class PipelineConfig:
    h: int = 12
    p: int = 12
    s: int = 12
    threshold: ThresholdSpec = field(default_factory=ThresholdSpec)
    methods: tuple[str, ...] = METHODS
    k_neighbors: int = 5
    target_ratio: float = 1.0
    beta: float = 1.0
    forecaster_grid: tuple | None = None
    metamodel_grid: tuple | None = None
    seed: int = 0
    scaling: str = "none"
    workers: int = 1
    recompute_test_threshold: bool = False

    def __post_init__(self):
        if self.h < 1 or self.p < 1 or self.s < 1:
            raise ConfigError(f"h, p, s must be positive, got {self.h}, {self.p}, {self.s}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown augmentation method {m!r}")

    def resolved_forecaster_grid(self) -> list[gbt.TrainConfig]:
        return list(self.forecaster_grid) if self.forecaster_grid else forecaster_default_grid(self.seed)

    def resolved_metamodel_grid(self) -> list[gbt.TrainConfig]:
        return list(self.metamodel_grid) if self.metamodel_grid else metamodel_default_grid(self.seed)

    def plan_for(self, method: str) -> AugmentationPlan:
        return AugmentationPlan(method=method, k=self.k_neighbors,
                                target_ratio=self.target_ratio, beta=self.beta,
                                seed=self.seed + 2)


@dataclass
class SweepCell:
    percentile: float
    method: str
    auc: float | None
    note: str = ""


@dataclass
class StressReport:
    """Everything the pipeline measured: error tables, AUC per augmentation
    method, the resolved threshold, and per-series stress probabilities."""

    tau: float
    tau_source: str
    n_series: int
    n_rejected: int
    auc_by_method: dict
    validation_errors: ErrorTable
    test_errors: ErrorTable
    naive_validation_errors: ErrorTable
    naive_test_errors: ErrorTable
    probabilities: dict
    test_labels: dict
    validation_positives: int
    test_positives: int
    forecaster_config: dict | None
    metamodel_configs: dict
    sweep: list | None = None

    def to_json_dict(self) -> dict:
        return {
            "tau": self.tau,
            "tau_source": self.tau_source,
            "n_series": self.n_series,
            "n_rejected": self.n_rejected,
            "smape": {
                "model_validation_mean": self.validation_errors.mean(),
                "model_test_mean": self.test_errors.mean(),
                "naive_validation_mean": self.naive_validation_errors.mean(),
                "naive_test_mean": self.naive_test_errors.mean(),
            },
            "auc_by_method": {k: self.auc_by_method[k] for k in sorted(self.auc_by_method)},
            "validation_positives": self.validation_positives,
            "test_positives": self.test_positives,
            "validation_errors": {k: self.validation_errors.entries[k]
                                  for k in sorted(self.validation_errors.entries)},
            "test_errors": {k: self.test_errors.entries[k]
                            for k in sorted(self.test_errors.entries)},
            "probabilities": {m: {k: v for k, v in sorted(self.probabilities[m].items())}
                              for m in sorted(self.probabilities)},
            "test_labels": {k: self.test_labels[k] for k in sorted(self.test_labels)},
            "forecaster_config": self.forecaster_config,
            "metamodel_configs": {k: self.metamodel_configs[k] for k in sorted(self.metamodel_configs)},
            "sweep": [dataclasses.asdict(c) for c in self.sweep] if self.sweep is not None else None,
        }


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except StressCastError as exc:
        raise PipelineError(name, str(exc)) from exc


@dataclass
class _PipelineState:
    partitions: list
    n_rejected: int
    forecaster: object
    validation_errors: ErrorTable
    test_errors: ErrorTable
    naive_validation_errors: ErrorTable
    naive_test_errors: ErrorTable
    dev_features: FeatureMatrix
    train_features: FeatureMatrix
    feature_medians: np.ndarray


def _develop(collection: SeriesCollection, config: PipelineConfig) -> _PipelineState:
    """Shared heavy lifting: forecaster tuning, error estimation on validation
    and test slices, and feature extraction. Computed once and reused by both
    the report and the threshold sweep."""
    with _stage("corpus"):
        kept, rejected = filter_short_series(collection, min_series_length(config.h))
        if len(kept) == 0:
            raise EmptyDatasetError(
                f"no series meets the minimum length {min_series_length(config.h)}"
            )
        partitions = [partition(ts, config.h) for ts in kept]
    with _stage("forecaster-tuning"):
        dev_emb = build_global_dataset(partitions, "development", config.p)
        val_emb = build_validation_embedding(partitions, config.p, config.h)
        forecaster = train_global(dev_emb, grid=config.resolved_forecaster_grid(),
                                  validation=val_emb, h=config.h, s=config.s,
                                  scaling=config.scaling)
    with _stage("performance-estimation"):
        naive = seasonal_naive_model(config.s, config.h)
        validation_errors = evaluate_per_series(forecaster, partitions, "validation")
        naive_validation = evaluate_per_series(naive, partitions, "validation")
    with _stage("feature-extraction"):
        dev_raw = extract_matrix((p.development for p in partitions), config.s, config.workers)
        dev_features, medians = impute_missing(dev_raw)
    with _stage("forecaster-refit"):
        train_emb = build_global_dataset(partitions, "train", config.p)
        refit = train_global(train_emb, config=forecaster.learner.config,
                             h=config.h, s=config.s, scaling=config.scaling)
    with _stage("test-evaluation"):
        test_errors = evaluate_per_series(refit, partitions, "test")
        naive_test = evaluate_per_series(naive, partitions, "test")
    with _stage("inference-features"):
        train_raw = extract_matrix((p.train for p in partitions), config.s, config.workers)
        train_features, _ = impute_missing(train_raw, medians)
    return _PipelineState(
        partitions=partitions,
        n_rejected=len(rejected),
        forecaster=refit,
        validation_errors=validation_errors,
        test_errors=test_errors,
        naive_validation_errors=naive_validation,
        naive_test_errors=naive_test,
        dev_features=dev_features,
        train_features=train_features,
        feature_medians=medians,
    )


def _train_with_fallback(meta: MetaDataset, method: str, config: PipelineConfig):
    """Train the metamodel for one augmentation method; fall back to no
    augmentation when the minority is too small to oversample."""
    grid = config.resolved_metamodel_grid()
    plan = config.plan_for(method)
    try:
        model = train_metamodel(meta, plan, grid, seed=config.seed + 1)
        return model, plan
    except InsufficientMinorityError as exc:
        if method == "none":
            raise
        logger.warning("augmentation %s failed (%s); falling back to none", method, exc)
        plan = config.plan_for("none")
        return train_metamodel(meta, plan, grid, seed=config.seed + 1), plan


def _resolve_test_tau(state: _PipelineState, config: PipelineConfig, tau_val: float):
    if config.recompute_test_threshold:
        return resolve_threshold(state.test_errors, config.threshold), "test"
    return tau_val, "validation"


@dataclass
class PipelineResult:
    """StressReport plus the fitted artifacts the CLI serializes."""

    report: StressReport
    forecaster: object
    metamodels: dict
    meta_dataset: MetaDataset
    dev_features: FeatureMatrix
    train_features: FeatureMatrix


def run_pipeline_full(collection: SeriesCollection, config: PipelineConfig | None = None,
                      percentiles=None) -> PipelineResult:
    """Full development + inference workflow, returning fitted artifacts.

    Development: tune and fit the global forecaster on development slices,
    estimate per-series validation errors, extract features from development
    slices, resolve the threshold, label, augment, and train one metamodel
    per augmentation method. Inference: refit the forecaster on the train
    slices, evaluate it on test slices, extract train-slice features, score
    the metamodels, and report AUC against the test-derived labels (with the
    threshold carried over from validation). With `percentiles`, a threshold
    sensitivity sweep is appended, reusing the forecaster and features.
    """
    config = config or PipelineConfig()
    state = _develop(collection, config)
    with _stage("labeling"):
        tau = resolve_threshold(state.validation_errors, config.threshold)
        meta_ds = assemble_metadataset(state.dev_features, state.validation_errors, tau)
    metamodels = {}
    with _stage("meta-learning"):
        for method in config.methods:
            metamodels[method], _ = _train_with_fallback(meta_ds, method, config)
    with _stage("stress-evaluation"):
        tau_test, tau_source = _resolve_test_tau(state, config, tau)
        test_label_map = label_large_errors(state.test_errors, tau_test)
        y_test = np.array([test_label_map[sid] for sid in state.train_features.ids])
        probabilities, auc_by_method = {}, {}
        for method in config.methods:
            probs = predict_stress(metamodels[method], state.train_features.X)
            probabilities[method] = {sid: float(p) for sid, p in zip(state.train_features.ids, probs)}
            auc_by_method[method] = auc(y_test, probs)
    sweep = None
    if percentiles is not None:
        sweep = _sweep_from_state(state, config, percentiles)
    fc_cfg = state.forecaster.learner.config if state.forecaster.learner is not None else None
    report = StressReport(
        tau=tau,
        tau_source=tau_source,
        n_series=len(state.partitions),
        n_rejected=state.n_rejected,
        auc_by_method=auc_by_method,
        validation_errors=state.validation_errors,
        test_errors=state.test_errors,
        naive_validation_errors=state.naive_validation_errors,
        naive_test_errors=state.naive_test_errors,
        probabilities=probabilities,
        test_labels=test_label_map,
        validation_positives=int(sum(label_large_errors(state.validation_errors, tau).values())),
        test_positives=int(y_test.sum()),
        forecaster_config=dataclasses.asdict(fc_cfg) if fc_cfg else None,
        metamodel_configs={m: dataclasses.asdict(metamodels[m].config) for m in metamodels},
        sweep=sweep,
    )
    return PipelineResult(
        report=report,
        forecaster=state.forecaster,
        metamodels=metamodels,
        meta_dataset=meta_ds,
        dev_features=state.dev_features,
        train_features=state.train_features,
    )


def run_pipeline(collection: SeriesCollection, config: PipelineConfig | None = None,
                 percentiles=None) -> StressReport:
    """Run the full pipeline and return just the StressReport."""
    return run_pipeline_full(collection, config, percentiles).report


def _sweep_from_state(state: _PipelineState, config: PipelineConfig, percentiles) -> list[SweepCell]:
    seen, cleaned = set(), []
    for q in percentiles:
        q = float(q)
        if not 0.0 < q < 100.0:
            raise ConfigError(f"sweep percentile must be in (0, 100), got {q}")
        if q in seen:
            logger.warning("duplicate sweep percentile %s dropped", q)
            continue
        seen.add(q)
        cleaned.append(q)
    cells: list[SweepCell] = []
    for q in cleaned:
        tau_q = resolve_threshold(state.validation_errors, ThresholdSpec("percentile", q))
        labels_val = label_large_errors(state.validation_errors, tau_q)
        n_pos = sum(labels_val.values())
        if n_pos < MIN_SWEEP_POSITIVES:
            logger.warning("percentile %s leaves %d positives (< %d); skipped", q, n_pos, MIN_SWEEP_POSITIVES)
            for method in config.methods:
                cells.append(SweepCell(q, method, None, f"skipped: {n_pos} positives"))
            continue
        meta_q = assemble_metadataset(state.dev_features, state.validation_errors, tau_q)
        tau_test = (resolve_threshold(state.test_errors, ThresholdSpec("percentile", q))
                    if config.recompute_test_threshold else tau_q)
        test_label_map = label_large_errors(state.test_errors, tau_test)
        y_test = np.array([test_label_map[sid] for sid in state.train_features.ids])
        for method in config.methods:
            try:
                model, _ = _train_with_fallback(meta_q, method, config)
                probs = predict_stress(model, state.train_features.X)
                cells.append(SweepCell(q, method, auc(y_test, probs)))
            except StressCastError as exc:
                logger.warning("sweep cell (q=%s, %s) failed: %s", q, method, exc)
                cells.append(SweepCell(q, method, None, f"error: {exc}"))
    return cells


def sensitivity_sweep(collection: SeriesCollection, config: PipelineConfig | None = None,
                      percentiles=DEFAULT_PERCENTILES) -> list[SweepCell]:
    """Re-label, re-train, and re-evaluate the metamodel per threshold
    percentile per augmentation method; the forecaster and features are
    computed once and reused."""
    config = config or PipelineConfig()
    state = _develop(collection, config)
    return _sweep_from_state(state, config, percentiles)
