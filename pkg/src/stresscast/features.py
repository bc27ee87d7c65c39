"""Fixed 19-feature statistical summary of a series, computed on training data
only. Features that cannot be computed on short series come back as NaN and
are imputed with collection medians at the matrix level."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .corpus import TimeSeries
from .errors import InsufficientLengthError, ShapeError

logger = logging.getLogger(__name__)

# Frozen order; serialized headers must match exactly.
FEATURE_NAMES = (
    "mean", "variance", "trend_strength", "seasonal_strength", "linearity",
    "curvature", "spike", "lumpiness", "stability", "spectral_entropy",
    "x_acf1", "x_acf10", "seas_acf1", "diff1_acf1", "crossing_points",
    "flat_spots", "hw_alpha", "hw_beta", "hw_gamma",
)
N_FEATURES = len(FEATURE_NAMES)

HW_PARAM_MIN = 1e-4
HW_PARAM_MAX = 1.0 - 1e-4
HW_STARTS = ((0.1, 0.01, 0.1), (0.3, 0.1, 0.3), (0.5, 0.1, 0.1), (0.7, 0.05, 0.2))
HW_MAX_ITER = 500


@dataclass(frozen=True)
class Decomposition:
    """Classical additive decomposition. trend and remainder are NaN outside
    the centered-moving-average interior; seasonal covers the whole series."""

    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    period: int

    @property
    def interior(self) -> np.ndarray:
        return ~np.isnan(self.trend)


def decompose(values, s: int) -> Decomposition:
    """Trend = centered moving average of window s (half weights at both ends
    for even s); seasonal = per-period means of the detrended interior,
    re-centered to sum zero; remainder = y - trend - seasonal."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 2 * s + 1:
        raise InsufficientLengthError(f"decomposition needs at least {2 * s + 1} points, got {n}")
    if s % 2 == 0:
        w = np.full(s + 1, 1.0 / s)
        w[0] = w[-1] = 0.5 / s
    else:
        w = np.full(s, 1.0 / s)
    trend_core = np.convolve(y, w, mode="valid")
    half = (len(w) - 1) // 2
    trend = np.full(n, np.nan)
    trend[half:half + len(trend_core)] = trend_core

    detrended = y - trend
    seasonal_means = np.empty(s)
    for j in range(s):
        vals = detrended[j::s]
        seasonal_means[j] = np.nanmean(vals)
    seasonal_means -= seasonal_means.mean()
    seasonal = seasonal_means[np.arange(n) % s]
    remainder = y - trend - seasonal
    return Decomposition(trend, seasonal, remainder, s)


def _var(x: np.ndarray) -> float:
    """Sample variance (ddof=1); 0 for fewer than two points."""
    return float(np.var(x, ddof=1)) if len(x) >= 2 else 0.0


def strength_features(dec: Decomposition) -> tuple[float, float]:
    """trend_strength = max(0, 1 - Var(remainder)/Var(trend + remainder)),
    seasonal analogue with the seasonal component; zero-variance denominators
    give 0 by convention. Both in [0, 1]."""
    idx = dec.interior
    r = dec.remainder[idx]
    if len(r) < 2:
        return 0.0, 0.0
    vr = _var(r)
    den_t = _var(dec.trend[idx] + r)
    den_s = _var(dec.seasonal[idx] + r)
    # a denominator at float-noise level relative to the series counts as zero
    eps = 1e-10 * _var(dec.trend[idx] + dec.seasonal[idx] + r)
    trend_strength = max(0.0, 1.0 - vr / den_t) if den_t > eps else 0.0
    seasonal_strength = max(0.0, 1.0 - vr / den_s) if den_s > eps else 0.0
    return trend_strength, seasonal_strength


def poly_trend_features(dec: Decomposition) -> tuple[float, float]:
    """Project the trend on orthonormal polynomials of degree 1 and 2 over the
    index; returns (degree-1 coefficient, degree-2 coefficient)."""
    t = dec.trend[dec.interior]
    n = len(t)
    if n < 3:
        return float("nan"), float("nan")
    x = np.arange(n, dtype=np.float64)
    V = np.column_stack([np.ones(n), x, x * x])
    Q, R = np.linalg.qr(V)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs  # fix QR sign ambiguity: increasing trend gives positive linearity
    coefs = Q.T @ t
    return float(coefs[1]), float(coefs[2])


def spike_lumpiness_stability(values, dec: Decomposition | None, s: int) -> tuple[float, float, float]:
    """spike: variance of leave-one-out variances of the remainder.
    lumpiness/stability: variance of per-window variances/means of the
    standardized series tiled into non-overlapping windows of width s
    (0 by convention with fewer than two complete windows)."""
    spike = 0.0
    if dec is not None:
        r = dec.remainder[dec.interior]
        n = len(r)
        if n >= 4:
            s1, s2 = r.sum(), (r * r).sum()
            s1_loo = s1 - r
            s2_loo = s2 - r * r
            m = n - 1
            loo_var = (s2_loo - s1_loo * s1_loo / m) / (m - 1)
            spike = _var(loo_var)
    y = np.asarray(values, dtype=np.float64)
    sd = np.std(y, ddof=1) if len(y) >= 2 else 0.0
    lumpiness = stability = 0.0
    nw = len(y) // s
    if sd > 0 and nw >= 2:
        z = (y - y.mean()) / sd
        tiles = z[: nw * s].reshape(nw, s)
        lumpiness = _var(np.var(tiles, axis=1, ddof=1))
        stability = _var(tiles.mean(axis=1))
    return spike, lumpiness, stability


def spectral_entropy(values) -> float:
    """Normalized Shannon entropy of the periodogram at Fourier frequencies
    1..floor((n-1)/2); 0 for a zero-variance series, near 1 for white noise."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 8:
        raise InsufficientLengthError(f"spectral entropy needs at least 8 points, got {n}")
    x = y - y.mean()
    if np.all(x == 0.0):
        return 0.0
    spec = np.abs(np.fft.rfft(x)) ** 2
    k_max = (n - 1) // 2
    pgram = spec[1:k_max + 1]
    total = pgram.sum()
    if total <= 0.0:
        return 0.0
    p = pgram / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(k_max))


def _acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations with the biased 1/n normalization; zeros when
    the series has no variance or the lag reaches the length."""
    n = len(x)
    out = np.zeros(max_lag)
    xc = x - x.mean()
    c0 = float((xc * xc).sum())
    if c0 <= 0.0 or n < 2:
        return out
    for k in range(1, max_lag + 1):
        if k >= n:
            break
        out[k - 1] = float((xc[:-k] * xc[k:]).sum()) / c0
    return out


def acf_features(values, s: int) -> tuple[float, float, float, float]:
    """(acf1, sum of squared acf1..10, acf at the seasonal lag, acf1 of the
    first difference)."""
    y = np.asarray(values, dtype=np.float64)
    if len(y) < s + 2:
        raise InsufficientLengthError(f"acf features need at least {s + 2} points, got {len(y)}")
    ac = _acf(y, max(10, s))
    x_acf1 = ac[0]
    x_acf10 = float((ac[:10] ** 2).sum())
    seas_acf1 = ac[s - 1]
    d = np.diff(y)
    diff1_acf1 = _acf(d, 1)[0] if len(d) >= 2 else 0.0
    return float(x_acf1), x_acf10, float(seas_acf1), float(diff1_acf1)


def crossing_flat(values) -> tuple[int, int]:
    """crossing_points: sign changes around the median (values equal to the
    median count as above it). flat_spots: longest run inside one of 10
    equal-width bins spanning [min, max]."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise InsufficientLengthError(f"crossing/flat features need at least 2 points, got {n}")
    med = np.median(y)
    above = y >= med
    crossing_points = int(np.sum(above[1:] != above[:-1]))
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        return crossing_points, n
    bins = np.minimum((10 * (y - lo) / (hi - lo)).astype(np.int64), 9)
    change = np.nonzero(bins[1:] != bins[:-1])[0]
    edges = np.concatenate([[-1], change, [n - 1]])
    flat_spots = int(np.diff(edges).max())
    return crossing_points, flat_spots


@njit(cache=True, nogil=True)
def _hw_sse(alpha: float, beta: float, gamma: float, y: np.ndarray, s: int) -> float:
    """One-step-ahead SSE of additive Holt-Winters with states initialized
    from the first two seasonal cycles."""
    n = len(y)
    c1 = 0.0
    c2 = 0.0
    for j in range(s):
        c1 += y[j]
        c2 += y[s + j]
    level = c1 / s
    trend = (c2 / s - c1 / s) / s
    seas = np.empty(s)
    for j in range(s):
        seas[j] = y[j] - level
    sse = 0.0
    for t in range(s, n):
        j = t % s
        pred = level + trend + seas[j]
        err = y[t] - pred
        sse += err * err
        new_level = alpha * (y[t] - seas[j]) + (1.0 - alpha) * (level + trend)
        new_trend = beta * (new_level - level) + (1.0 - beta) * trend
        seas[j] = gamma * (y[t] - level - trend) + (1.0 - gamma) * seas[j]
        level = new_level
        trend = new_trend
    return sse


def holt_winters_sse(values, s: int, alpha: float, beta: float, gamma: float) -> float:
    """One-step-ahead in-sample SSE at the given smoothing parameters."""
    y = np.ascontiguousarray(values, dtype=np.float64)
    if len(y) < 2 * s + 3:
        raise InsufficientLengthError(f"Holt-Winters needs at least {2 * s + 3} points, got {len(y)}")
    return float(_hw_sse(alpha, beta, gamma, y, s))


def fit_holt_winters(values, s: int) -> tuple[float, float, float]:
    """Additive Holt-Winters smoothing parameters minimizing one-step-ahead
    in-sample SSE; Nelder-Mead from four fixed starts, best of four, boxed to
    [0.0001, 0.9999]. Returns a NaN triple when the series is too short."""
    y = np.ascontiguousarray(values, dtype=np.float64)
    if len(y) < 2 * s + 3:
        return float("nan"), float("nan"), float("nan")

    def objective(params):
        a, b, g = np.clip(params, HW_PARAM_MIN, HW_PARAM_MAX)
        return _hw_sse(a, b, g, y, s)

    best_params, best_sse = None, np.inf
    for start in HW_STARTS:
        res = minimize(objective, np.array(start), method="Nelder-Mead",
                       options={"maxiter": HW_MAX_ITER, "xatol": 1e-4, "fatol": 1e-8})
        sse = float(res.fun)
        if sse < best_sse:
            best_sse = sse
            best_params = np.clip(res.x, HW_PARAM_MIN, HW_PARAM_MAX)
    return float(best_params[0]), float(best_params[1]), float(best_params[2])


def extract_all(values, s: int) -> np.ndarray:
    """All 19 features in FEATURE_NAMES order. Decomposition-based and
    Holt-Winters features come back NaN when the series is too short for
    them; everything else requires at least s + 2 points."""
    y = np.asarray(values, dtype=np.float64)
    if len(y) < s + 2:
        raise InsufficientLengthError(
            f"feature extraction needs at least {s + 2} points, got {len(y)}"
        )
    nan = float("nan")
    mean = float(y.mean())
    variance = _var(y)

    dec = None
    trend_strength = seasonal_strength = linearity = curvature = nan
    if len(y) >= 2 * s + 1:
        dec = decompose(y, s)
        trend_strength, seasonal_strength = strength_features(dec)
        linearity, curvature = poly_trend_features(dec)
    spike, lumpiness, stability = spike_lumpiness_stability(y, dec, s)
    if dec is None:
        spike = nan
    entropy = spectral_entropy(y)
    x_acf1, x_acf10, seas_acf1, diff1_acf1 = acf_features(y, s)
    crossing_points, flat_spots = crossing_flat(y)
    hw_alpha, hw_beta, hw_gamma = fit_holt_winters(y, s)
    return np.array([
        mean, variance, trend_strength, seasonal_strength, linearity,
        curvature, spike, lumpiness, stability, entropy,
        x_acf1, x_acf10, seas_acf1, diff1_acf1, float(crossing_points),
        float(flat_spots), hw_alpha, hw_beta, hw_gamma,
    ])


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-series feature vectors in collection order, columns frozen to
    FEATURE_NAMES."""

    ids: tuple[str, ...]
    X: np.ndarray

    def __post_init__(self):
        if self.X.shape != (len(self.ids), N_FEATURES):
            raise ShapeError(f"feature matrix must be ({len(self.ids)}, {N_FEATURES}), got {self.X.shape}")

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["unique_id", *FEATURE_NAMES])
            for i, sid in enumerate(self.ids):
                writer.writerow([sid, *[repr(float(v)) for v in self.X[i]]])

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header = rows[0]
        if tuple(header[1:]) != FEATURE_NAMES:
            raise ShapeError(f"feature CSV header does not match the frozen feature list: {header[1:]}")
        ids = tuple(r[0] for r in rows[1:])
        X = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
        return cls(ids, X)


def extract_matrix(series_list, s: int, workers: int = 1) -> FeatureMatrix:
    """Feature vectors for many series (NaNs not yet imputed)."""
    series_list = list(series_list)
    values = [np.asarray(ts.values, dtype=np.float64) for ts in series_list]
    if workers > 1 and len(series_list) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(lambda v: extract_all(v, s), values))
    else:
        vectors = [extract_all(v, s) for v in values]
    X = np.vstack(vectors) if vectors else np.empty((0, N_FEATURES))
    return FeatureMatrix(tuple(ts.id for ts in series_list), X)


def impute_missing(matrix: FeatureMatrix, medians: np.ndarray | None = None) -> tuple[FeatureMatrix, np.ndarray]:
    """Replace NaN features with the given per-feature medians (or the
    matrix's own column medians). Returns the imputed matrix and the medians
    actually used, so inference-time matrices can reuse training medians."""
    X = matrix.X.copy()
    if medians is None:
        with np.errstate(all="ignore"):
            medians = np.nanmedian(X, axis=0)
        medians = np.where(np.isnan(medians), 0.0, medians)
    nan_mask = np.isnan(X)
    if nan_mask.any():
        logger.info("imputed %d missing feature values across %d series",
                    int(nan_mask.sum()), int(nan_mask.any(axis=1).sum()))
        X[nan_mask] = np.broadcast_to(medians, X.shape)[nan_mask]
    return FeatureMatrix(matrix.ids, X), medians
