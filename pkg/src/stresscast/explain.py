"""Attribute metamodel predictions to series features: exact path-dependent
tree-Shapley values (raw score space) and permutation importance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .features import FEATURE_NAMES
from .gbt import GradientBoostedEnsemble, Tree
from .metrics import auc


@dataclass(frozen=True)
class AttributionRow:
    """Per-feature Shapley values for one row; base_value + sum(values) equals
    the raw prediction score."""

    series_id: str
    values: np.ndarray
    base_value: float


@dataclass(frozen=True)
class ShapResult:
    phi: np.ndarray       # (n_rows, n_features)
    base_value: float     # expected raw score over the training distribution


def _extend(path, pz, po, pi):
    length = len(path)
    out = [e.copy() for e in path]
    out.append([pi, pz, po, 1.0 if length == 0 else 0.0])
    for i in range(length - 1, -1, -1):
        out[i + 1][3] += po * out[i][3] * (i + 1) / (length + 1)
        out[i][3] = pz * out[i][3] * (length - i) / (length + 1)
    return out


def _unwind(path, i):
    length = len(path)
    out = [e.copy() for e in path]
    n = out[length - 1][3]
    zi, oi = out[i][1], out[i][2]
    for j in range(length - 2, -1, -1):
        if oi != 0.0:
            t = out[j][3]
            out[j][3] = n * length / ((j + 1) * oi)
            n = t - out[j][3] * zi * (length - 1 - j) / length
        else:
            out[j][3] = out[j][3] * length / (zi * (length - 1 - j))
    for j in range(i, length - 1):
        out[j][0], out[j][1], out[j][2] = out[j + 1][0], out[j + 1][1], out[j + 1][2]
    return out[: length - 1]


def _unwound_weight_sum(path, i):
    return sum(e[3] for e in _unwind(path, i))


def _tree_shap_row(tree: Tree, x: np.ndarray, phi: np.ndarray) -> None:
    """Path-dependent tree-Shapley recursion; covers define the conditional
    expectation weights for features absent from a coalition."""

    def recurse(node, path, pz, po, pi):
        path = _extend(path, pz, po, pi)
        f = int(tree.feature[node])
        if f < 0:
            leaf_value = tree.value[node]
            for i in range(1, len(path)):
                w = _unwound_weight_sum(path, i)
                d, z, o, _ = path[i]
                phi[int(d)] += w * (o - z) * leaf_value
            return
        xv = x[f]
        go_left = bool(tree.default_left[node]) if np.isnan(xv) else bool(xv <= tree.threshold[node])
        hot = int(tree.left[node]) if go_left else int(tree.right[node])
        cold = int(tree.right[node]) if go_left else int(tree.left[node])
        iz = io = 1.0
        k = None
        for idx in range(1, len(path)):
            if path[idx][0] == f:
                k = idx
                break
        if k is not None:
            iz, io = path[k][1], path[k][2]
            path = _unwind(path, k)
        r_node = tree.cover[node]
        recurse(hot, path, iz * tree.cover[hot] / r_node, io, f)
        recurse(cold, path, iz * tree.cover[cold] / r_node, 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)


def tree_expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value (the tree's output for the empty coalition)."""
    leaves = tree.feature < 0
    return float((tree.value[leaves] * tree.cover[leaves]).sum() / tree.cover[0])


def tree_shap(model: GradientBoostedEnsemble, rows) -> ShapResult:
    """Shapley attributions in raw score space, summed across trees and scaled
    by the learning rate. Satisfies local accuracy per row:
    base_value + sum(phi) == raw prediction."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"expected (n, {model.n_features}) rows, got {X.shape}")
    phi = np.zeros((X.shape[0], model.n_features))
    base = model.base_score
    for tree in model.trees:
        base += model.learning_rate * tree_expected_value(tree)
        tree_phi = np.zeros(model.n_features)
        for i in range(X.shape[0]):
            tree_phi[:] = 0.0
            _tree_shap_row(tree, X[i], tree_phi)
            phi[i] += model.learning_rate * tree_phi
    return ShapResult(phi=phi, base_value=float(base))


def attribution_rows(ids, result: ShapResult) -> list[AttributionRow]:
    if len(ids) != result.phi.shape[0]:
        raise ShapeError(f"{len(ids)} ids for {result.phi.shape[0]} attribution rows")
    return [AttributionRow(sid, result.phi[i].copy(), result.base_value) for i, sid in enumerate(ids)]


def permutation_importance(model: GradientBoostedEnsemble, X, labels,
                           repeats: int = 5, seed: int = 0) -> np.ndarray:
    """Mean AUC drop when one feature column is shuffled; permutations are
    seeded, consumed repeat-major then feature-major."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    base = auc(y, model.predict(X))
    rng = np.random.default_rng(seed)
    drops = np.zeros(X.shape[1])
    for _ in range(repeats):
        for j in range(X.shape[1]):
            perm = rng.permutation(X.shape[0])
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            drops[j] += base - auc(y, model.predict(Xp))
    return drops / repeats


def summary_export(result: ShapResult, X, ids, top_k: int):
    """Rank features by mean |phi| (ties by feature index) and emit the data a
    beeswarm-style summary needs: a ranking table and, for the top_k features,
    one (series, feature, feature value, shap value) row per series."""
    if not 0 <= top_k <= len(FEATURE_NAMES):
        raise ConfigError(f"top_k must be in [0, {len(FEATURE_NAMES)}], got {top_k}")
    X = np.asarray(X, dtype=np.float64)
    mean_abs = np.abs(result.phi).mean(axis=0)
    order = np.lexsort((np.arange(len(mean_abs)), -mean_abs))
    top = order[:top_k]
    ranking = [(FEATURE_NAMES[j], float(mean_abs[j])) for j in top]
    long_rows = []
    for j in top:
        for i, sid in enumerate(ids):
            long_rows.append((sid, FEATURE_NAMES[j], float(X[i, j]), float(result.phi[i, j])))
    return ranking, long_rows
