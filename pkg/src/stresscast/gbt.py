"""Gradient-boosted regression trees: exact greedy variance-reduction splits,
squared or logistic loss, learned NaN routing, deterministic for a fixed seed.

Serves both as the global forecasting learner (squared loss) and as the
binary metamodel classifier (logistic loss).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit
from scipy.special import expit

from .errors import (
    ConfigError,
    DataError,
    DegenerateTargetError,
    EmptyDatasetError,
    ShapeError,
)

BASE_SCORE_CLAMP = 10.0   # logistic base score (log-odds) clamp
LEAF_VALUE_CLAMP = 10.0   # logistic leaf value clamp, tames near-empty-hessian leaves
_MIN_GAIN = 1e-12

LOSSES = ("squared", "logistic")
GRID_METRICS = ("smape", "auc", "logloss")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_depth: int = 3
    n_trees: int = 200
    min_samples_leaf: int = 20
    loss: str = "squared"
    seed: int = 0
    subsample: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        # max_depth 0 is allowed: a depth-0 tree is a single leaf (base-rate model).
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be positive, got {self.n_trees}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be positive, got {self.min_samples_leaf}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError(f"subsample must be in (0, 1], got {self.subsample}")


@dataclass
class Tree:
    """Flat arrays; feature < 0 marks a leaf. cover = training rows reaching the node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    default_left: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict_values(self, X: np.ndarray) -> np.ndarray:
        """Leaf value reached by each row (unscaled by the learning rate)."""
        out = np.empty(X.shape[0], dtype=np.float64)
        _predict_tree(self.feature, self.threshold, self.left, self.right,
                      self.value, self.default_left,
                      np.ascontiguousarray(X, dtype=np.float64), out)
        return out

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            nodes.append({
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "left": int(self.left[i]),
                "right": int(self.right[i]),
                "value": float(self.value[i]),
                "cover": float(self.cover[i]),
                "default_left": bool(self.default_left[i]),
            })
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = d["nodes"]
        return cls(
            feature=np.array([n["feature"] for n in nodes], dtype=np.int64),
            threshold=np.array([n["threshold"] for n in nodes], dtype=np.float64),
            left=np.array([n["left"] for n in nodes], dtype=np.int64),
            right=np.array([n["right"] for n in nodes], dtype=np.int64),
            value=np.array([n["value"] for n in nodes], dtype=np.float64),
            cover=np.array([n["cover"] for n in nodes], dtype=np.float64),
            default_left=np.array([n["default_left"] for n in nodes], dtype=bool),
        )


@njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, value, default_left, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            v = X[i, feature[node]]
            if v != v:
                go = default_left[node]
            else:
                go = v <= threshold[node]
            node = left[node] if go else right[node]
        out[i] = value[node]


@njit(cache=True, nogil=True)
def _scan_block(col, grad, order, s, e, g_all, min_leaf):
    """Fused exact-greedy scan of one node block over one feature.

    The block slice order[s:e] is presorted by col with NaN rows last. The
    split criterion is variance reduction of the gradients: candidate score
    GL^2/nL + GR^2/nR (the parent term is constant per node). The NaN block
    may be routed to either side; the better side wins, left on ties. Ties
    across thresholds keep the smallest (first strict improvement).

    Returns (score, k, a, b, default_left) where k is the non-NaN left count
    and (a, b) bracket the boundary; k < 0 means no valid candidate.
    """
    size = e - s
    nn = size
    g_nan = 0.0
    while nn > 0:
        v = col[order[s + nn - 1]]
        if v == v:
            break
        g_nan += grad[order[s + nn - 1]]
        nn -= 1
    if nn < 2:
        return -np.inf, -1, 0.0, 0.0, True
    nan_cnt = size - nn
    g_nn = g_all - g_nan
    best_score = -np.inf
    best_k = -1
    best_a = 0.0
    best_b = 0.0
    best_dl = True
    gpre = grad[order[s]]
    v_prev = col[order[s]]
    for k in range(1, nn):
        r = order[s + k]
        v = col[r]
        if v != v_prev:
            GL = gpre
            GR = g_nn - gpre
            nL = k
            nR = nn - k
            nLa = nL + nan_cnt
            if nLa >= min_leaf and nR >= min_leaf:
                GLa = GL + g_nan
                score_a = GLa * GLa / nLa + GR * GR / nR
            else:
                score_a = -np.inf
            if nan_cnt > 0:
                nRb = nR + nan_cnt
                if nL >= min_leaf and nRb >= min_leaf:
                    GRb = GR + g_nan
                    score_b = GL * GL / nL + GRb * GRb / nRb
                else:
                    score_b = -np.inf
                if score_a >= score_b:
                    score, dl = score_a, True
                else:
                    score, dl = score_b, False
            else:
                score, dl = score_a, True
            if score > best_score:
                best_score = score
                best_k = k
                best_a = v_prev
                best_b = v
                best_dl = dl
        gpre += grad[r]
        v_prev = v
    return best_score, best_k, best_a, best_b, best_dl


@njit(cache=True, nogil=True)
def _route_rows(col, order, s, e, thr, dl, go_left):
    """Mark each row of the block left/right for threshold thr (NaN follows
    the learned default direction); returns the left count."""
    nl = 0
    for i in range(s, e):
        r = order[i]
        v = col[r]
        if v != v:
            go = dl
        else:
            go = v <= thr
        go_left[r] = go
        if go:
            nl += 1
    return nl


@njit(cache=True, nogil=True)
def _partition_block(arr, s, e, go_left, out, off, n_left):
    """Stable partition of one block into out[off:off+size], left rows first."""
    li = off
    ri = off + n_left
    for i in range(s, e):
        r = arr[i]
        if go_left[r]:
            out[li] = r
            li += 1
        else:
            out[ri] = r
            ri += 1


def _best_split(cols, grad, orders, s, e, g_all, min_leaf):
    """Best split of one node block across features. Ties resolve to the
    lowest feature index, then the lowest threshold, then NaN-to-left.
    Returns (feature, threshold, default_left) or None."""
    size = e - s
    parent = g_all * g_all / size
    best_score = -np.inf
    best = None
    for f in range(len(cols)):
        score, k, a, b, dl = _scan_block(cols[f], grad, orders[f], s, e, g_all, min_leaf)
        if k < 0 or score <= best_score:
            continue
        t = 0.5 * (a + b)
        if t == b:  # adjacent floats: keep the boundary value on the left
            t = a
        best_score = score
        best = (f, t, dl)
    if best is None or best_score - parent <= _MIN_GAIN * max(1.0, abs(parent)):
        return None
    return best


def _fit_tree(cols, grad, hess, max_depth, min_leaf, init_orders, leaf_clamp):
    """Grow one depth-limited tree level by level.

    Rows stay grouped per node as contiguous blocks inside per-feature
    presorted index arrays, so each level costs one O(rows) pass per feature.
    Leaf value is the damped Newton step sum(g)/sum(h).
    """
    n_rows = len(grad)
    feature, threshold = [], []
    left, right = [], []
    value, cover, default_left = [], [], []

    def alloc():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(0.0)
        default_left.append(True)
        return len(feature) - 1

    root = alloc()
    orders = list(init_orders)
    blocks = [(root, 0, n_rows)]
    go_left = np.zeros(n_rows, dtype=bool)
    depth = 0
    while blocks:
        splits = []
        for nid, s, e in blocks:
            rows = orders[0][s:e]
            gs = grad[rows]
            size = e - s
            cover[nid] = float(size)
            best = None
            if depth < max_depth and size >= 2 * min_leaf and np.ptp(gs) > 0.0:
                best = _best_split(cols, grad, orders, s, e, float(gs.sum()), min_leaf)
            if best is None:
                v = float(gs.sum() / max(hess[rows].sum(), 1e-12))
                if leaf_clamp is not None:
                    v = min(leaf_clamp, max(-leaf_clamp, v))
                value[nid] = v
                continue
            f, t, dl = best
            feature[nid] = f
            threshold[nid] = t
            default_left[nid] = dl
            n_left = _route_rows(cols[f], orders[0], s, e, t, dl, go_left)
            splits.append((nid, s, e, n_left))
        if not splits:
            break
        new_blocks = []
        offset = 0
        for nid, s, e, n_left in splits:
            lid = alloc()
            rid = alloc()
            left[nid] = lid
            right[nid] = rid
            new_blocks.append((lid, offset, offset + n_left))
            new_blocks.append((rid, offset + n_left, offset + (e - s)))
            offset += e - s
        total = offset
        for fi in range(len(cols)):
            arr = orders[fi]
            out = np.empty(total, dtype=np.int64)
            off = 0
            for nid, s, e, n_left in splits:
                _partition_block(arr, s, e, go_left, out, off, n_left)
                off += e - s
            orders[fi] = out
        blocks = new_blocks
        depth += 1

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        cover=np.array(cover, dtype=np.float64),
        default_left=np.array(default_left, dtype=bool),
    )


@dataclass
class GradientBoostedEnsemble:
    """Additive model: raw(x) = base_score + learning_rate * sum of tree outputs.
    Logistic loss maps raw scores to probabilities through the sigmoid."""

    loss: str
    base_score: float
    learning_rate: float
    n_features: int
    trees: list = field(default_factory=list)
    config: TrainConfig | None = None

    def _check_features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected (n, {self.n_features}) feature matrix, got {X.shape}")
        return X

    def predict_raw(self, X) -> np.ndarray:
        X = self._check_features(X)
        raw = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            raw += self.learning_rate * tree.predict_values(X)
        return raw

    def predict(self, X) -> np.ndarray:
        """Raw score for squared loss, probability in (0, 1) for logistic."""
        raw = self.predict_raw(X)
        if self.loss == "logistic":
            return expit(raw)
        return raw

    def staged_raw(self, X):
        """Yield raw predictions after each boosting round (for loss audits)."""
        X = self._check_features(X)
        raw = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            raw = raw + self.learning_rate * tree.predict_values(X)
            yield raw

    def to_json_dict(self) -> dict:
        return {
            "loss": self.loss,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "n_features": int(self.n_features),
            "config": asdict(self.config) if self.config is not None else None,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "GradientBoostedEnsemble":
        try:
            cfg = TrainConfig(**d["config"]) if d.get("config") else None
            return cls(
                loss=d["loss"],
                base_score=float(d["base_score"]),
                learning_rate=float(d["learning_rate"]),
                n_features=int(d["n_features"]),
                trees=[Tree.from_dict(t) for t in d["trees"]],
                config=cfg,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model JSON: {exc!r}") from exc

    @classmethod
    def from_json(cls, text: str) -> "GradientBoostedEnsemble":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed model JSON: {exc}") from exc
        return cls.from_json_dict(d)


def _validate_training_inputs(features, targets, config):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be a 2-D row matrix, got ndim={X.ndim}")
    if X.shape[0] < 1:
        raise EmptyDatasetError("cannot fit on zero rows")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ShapeError(f"targets shape {y.shape} does not match {X.shape[0]} rows")
    if np.isinf(X).any():
        raise DataError("features must be finite or NaN (no infinities)")
    if not np.all(np.isfinite(y)):
        raise DataError("targets must be finite")
    if config.loss == "logistic":
        uniq = np.unique(y)
        if not np.all(np.isin(uniq, (0.0, 1.0))):
            raise DataError(f"logistic loss needs 0/1 targets, got values {uniq[:5]}")
        if uniq.size < 2:
            raise DegenerateTargetError("logistic fit needs both classes present")
    return X, y


def fit(features, targets, config: TrainConfig) -> GradientBoostedEnsemble:
    """Gradient boosting: base score, then one depth-limited tree per round fit
    to the negative gradients. Deterministic for fixed inputs and seed."""
    X, y = _validate_training_inputs(features, targets, config)
    n, d = X.shape
    if config.loss == "logistic":
        p_bar = float(y.mean())
        base = float(np.clip(np.log(p_bar) - np.log1p(-p_bar), -BASE_SCORE_CLAMP, BASE_SCORE_CLAMP))
        leaf_clamp = LEAF_VALUE_CLAMP
    else:
        base = float(y.mean())
        leaf_clamp = None

    cols = [np.ascontiguousarray(X[:, j]) for j in range(d)]
    presort = [np.argsort(c, kind="stable") for c in cols]  # NaNs sort last
    rng = np.random.default_rng(config.seed)
    raw = np.full(n, base, dtype=np.float64)
    trees: list[Tree] = []
    for _ in range(config.n_trees):
        if config.loss == "logistic":
            p = expit(raw)
            g = y - p
            h = p * (1.0 - p)
        else:
            g = y - raw
            h = np.ones(n, dtype=np.float64)
        if config.subsample < 1.0:
            k = max(1, int(round(config.subsample * n)))
            sel = np.sort(rng.choice(n, size=k, replace=False))
            sub_cols = [c[sel] for c in cols]
            sub_orders = [np.argsort(c, kind="stable") for c in sub_cols]
            tree = _fit_tree(sub_cols, g[sel], h[sel], config.max_depth,
                             config.min_samples_leaf, sub_orders, leaf_clamp)
        else:
            tree = _fit_tree(cols, g, h, config.max_depth,
                             config.min_samples_leaf, presort, leaf_clamp)
        raw += config.learning_rate * tree.predict_values(X)
        trees.append(tree)
    return GradientBoostedEnsemble(
        loss=config.loss,
        base_score=base,
        learning_rate=config.learning_rate,
        n_features=d,
        trees=trees,
        config=config,
    )


def grid_search(grid, train, validation, metric: str):
    """Fit every configuration on the train split, score on the validation
    split, return (best config, fitted model). Ties break to the earliest
    grid position. metric: smape (squared loss), auc or logloss (logistic)."""
    from .metrics import auc as auc_score, log_loss, smape

    grid = list(grid)
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    if metric not in GRID_METRICS:
        raise ConfigError(f"metric must be one of {GRID_METRICS}, got {metric!r}")
    for cfg in grid:
        if metric == "smape" and cfg.loss != "squared":
            raise ConfigError(f"metric smape requires squared loss, config has {cfg.loss!r}")
        if metric in ("auc", "logloss") and cfg.loss != "logistic":
            raise ConfigError(f"metric {metric} requires logistic loss, config has {cfg.loss!r}")

    X_tr, y_tr = train
    X_va, y_va = validation
    best_cfg, best_model, best_score = None, None, None
    higher_is_better = metric == "auc"
    for cfg in grid:
        model = fit(X_tr, y_tr, cfg)
        pred = model.predict(X_va)
        if metric == "smape":
            score = smape(y_va, pred)
        elif metric == "auc":
            score = auc_score(y_va, pred)
        else:
            score = log_loss(y_va, pred)
        if best_score is None or (score > best_score if higher_is_better else score < best_score):
            best_cfg, best_model, best_score = cfg, model, score
    return best_cfg, best_model
