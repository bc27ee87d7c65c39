"""Oversampling of the large-error minority class: SMOTE interpolation and
ADASYN density-adaptive allocation, generated in standardized feature space."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, InsufficientMinorityError

if TYPE_CHECKING:
    from .meta import MetaDataset

logger = logging.getLogger(__name__)

METHODS = ("none", "smote", "adasyn")


@dataclass(frozen=True)
class AugmentationPlan:
    method: str = "smote"
    k: int = 5
    target_ratio: float = 1.0   # minority/majority after SMOTE
    beta: float = 1.0           # ADASYN balance degree
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ConfigError(f"target_ratio must be in (0, 1], got {self.target_ratio}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")


@dataclass
class SyntheticBatch:
    """Synthetic minority rows plus the (seed index, neighbor index, lambda)
    provenance of each; every row lies on the segment between its pair."""

    rows: np.ndarray
    seed_idx: np.ndarray
    neighbor_idx: np.ndarray
    lam: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)


def _nearest_neighbors(points: np.ndarray, query: np.ndarray, k: int,
                       exclude_self: bool = False) -> np.ndarray:
    """Brute-force k nearest rows of `points` for each row of `query` by
    Euclidean distance; ties resolve to the lower index."""
    d2 = ((query[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    if exclude_self:
        np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def smote(minority: np.ndarray, plan: AugmentationPlan, n_needed: int,
          lam_override: float | None = None) -> SyntheticBatch:
    """Generate n_needed rows: pick a minority seed uniformly, one of its
    k nearest minority neighbors uniformly, then interpolate at a uniform
    lambda. lam_override pins lambda for tests."""
    minority = np.asarray(minority, dtype=np.float64)
    m = len(minority)
    if m < 2:
        raise InsufficientMinorityError(f"SMOTE needs at least 2 minority rows, got {m}")
    k_eff = min(plan.k, m - 1)
    nn = _nearest_neighbors(minority, minority, k_eff, exclude_self=True)
    rng = np.random.default_rng(plan.seed)
    seed_idx = rng.integers(0, m, size=n_needed)
    pick = rng.integers(0, k_eff, size=n_needed)
    lam = rng.random(n_needed) if lam_override is None else np.full(n_needed, float(lam_override))
    neighbor_idx = nn[seed_idx, pick]
    base = minority[seed_idx]
    rows = base + lam[:, None] * (minority[neighbor_idx] - base)
    return SyntheticBatch(rows, seed_idx, neighbor_idx, lam)


def adasyn_allocation(minority: np.ndarray, all_rows: np.ndarray, labels: np.ndarray,
                      plan: AugmentationPlan) -> np.ndarray:
    """Per-minority-point synthetic quotas g_i = round(r_hat_i * G) where
    r_i is the majority fraction among the point's k nearest neighbors in the
    full dataset and G = (n_majority - n_minority) * beta."""
    labels = np.asarray(labels)
    n_min = len(minority)
    n_maj = int(np.sum(labels == 0))
    if n_maj == 0:
        raise InsufficientMinorityError("ADASYN needs a non-empty majority class")
    if not np.array_equal(minority, all_rows[labels == 1]):
        raise ConfigError("minority rows must be all_rows[labels == 1] in that order")
    G = (n_maj - n_min) * plan.beta
    if G <= 0:
        return np.zeros(n_min, dtype=np.int64)
    k_eff = min(plan.k, len(all_rows) - 1)
    # exclude each minority point itself from its neighborhood
    d2 = ((minority[:, None, :] - all_rows[None, :, :]) ** 2).sum(axis=2)
    minority_positions = np.nonzero(labels == 1)[0]
    d2[np.arange(n_min), minority_positions] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
    delta = (labels[order] == 0).sum(axis=1)
    r = delta / k_eff
    total = r.sum()
    if total == 0:
        logger.warning("ADASYN: no minority point borders the majority; allocating uniformly")
        r_hat = np.full(n_min, 1.0 / n_min)
    else:
        r_hat = r / total
    return np.round(r_hat * G).astype(np.int64)


def adasyn(minority: np.ndarray, all_rows: np.ndarray, labels: np.ndarray,
           plan: AugmentationPlan) -> SyntheticBatch:
    """ADASYN: allocate quotas by local majority density, then interpolate
    each minority point toward its minority-only nearest neighbors."""
    minority = np.asarray(minority, dtype=np.float64)
    all_rows = np.asarray(all_rows, dtype=np.float64)
    m = len(minority)
    if m < 2:
        raise InsufficientMinorityError(f"ADASYN needs at least 2 minority rows, got {m}")
    quotas = adasyn_allocation(minority, all_rows, labels, plan)
    k_eff = min(plan.k, m - 1)
    nn = _nearest_neighbors(minority, minority, k_eff, exclude_self=True)
    rng = np.random.default_rng(plan.seed)
    seeds, neighbors, lams = [], [], []
    for i in range(m):
        g_i = int(quotas[i])
        if g_i == 0:
            continue
        picks = rng.integers(0, k_eff, size=g_i)
        lam = rng.random(g_i)
        seeds.append(np.full(g_i, i))
        neighbors.append(nn[i, picks])
        lams.append(lam)
    if seeds:
        seed_idx = np.concatenate(seeds)
        neighbor_idx = np.concatenate(neighbors)
        lam = np.concatenate(lams)
    else:
        seed_idx = np.empty(0, dtype=np.int64)
        neighbor_idx = np.empty(0, dtype=np.int64)
        lam = np.empty(0)
    base = minority[seed_idx]
    rows = base + lam[:, None] * (minority[neighbor_idx] - base)
    return SyntheticBatch(rows, seed_idx, neighbor_idx, lam)


def augment_metadataset(meta: "MetaDataset", plan: AugmentationPlan) -> "MetaDataset":
    """Append synthetic positive rows to a meta-dataset according to the plan.

    Neighbor search and interpolation run in standardized feature space
    (per-feature mean/std over the given rows); synthetic rows are mapped
    back, labelled 1, flagged synthetic, and carry no error value. Original
    rows are passed through bit-identical.
    """
    if plan.method == "none":
        return meta
    if meta.is_synthetic.any():
        raise ConfigError("refusing to augment a meta-dataset that already holds synthetic rows")
    labels = np.asarray(meta.labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos < 1 or n_neg < 1:
        raise InsufficientMinorityError(f"augmentation needs both classes, got {n_pos} pos / {n_neg} neg")
    if n_pos < 2:
        raise InsufficientMinorityError(f"{plan.method} needs at least 2 minority rows, got {n_pos}")
    if plan.k > n_pos - 1:
        logger.warning("reducing k from %d to %d (tiny minority)", plan.k, n_pos - 1)

    mu = meta.X.mean(axis=0)
    sd = meta.X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Z = (meta.X - mu) / sd
    minority = Z[labels == 1]

    if plan.method == "smote":
        n_needed = int(round(plan.target_ratio * n_neg)) - n_pos
        if n_needed <= 0:
            batch = SyntheticBatch(np.empty((0, meta.X.shape[1])), np.empty(0, dtype=np.int64),
                                   np.empty(0, dtype=np.int64), np.empty(0))
        else:
            batch = smote(minority, plan, n_needed)
    else:
        batch = adasyn(minority, Z, labels, plan)

    synth_X = batch.rows * sd + mu
    n_syn = len(batch)
    syn_ids = tuple(f"synthetic_{i:05d}" for i in range(n_syn))
    return dataclasses.replace(
        meta,
        ids=meta.ids + syn_ids,
        X=np.vstack([meta.X, synth_X]) if n_syn else meta.X,
        errors=np.concatenate([meta.errors, np.full(n_syn, np.nan)]),
        labels=np.concatenate([meta.labels, np.ones(n_syn, dtype=meta.labels.dtype)]),
        is_synthetic=np.concatenate([meta.is_synthetic, np.ones(n_syn, dtype=bool)]),
    )
