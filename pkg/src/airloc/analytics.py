"""Correlation study, pose-error summaries, accuracy buckets, calibration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .bundle_io import QuerySet, SceneBundle
from .geometry import Pose, rotation_error, translation_error
from .matching import DEFAULT_RATIO_THRESHOLD, match_features, match_ratio
from .policy import Difficulty

# (metres, degrees), tightest first
ACCURACY_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


class DegenerateSampleError(ValueError):
    pass


def _xy(samples) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("samples must be (x, y) pairs")
    if len(arr) < 2:
        raise DegenerateSampleError("degenerate sample: need at least 2 pairs")
    return arr[:, 0], arr[:, 1]


def pearson(samples) -> float:
    x, y = _xy(samples)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateSampleError("degenerate sample: zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(samples) -> float:
    """Pearson correlation of average ranks."""
    x, y = _xy(samples)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateSampleError("degenerate sample: constant coordinate")
    return pearson(np.column_stack([rankdata(x), rankdata(y)]))


# --------------------------------------------------------- correlation study


@dataclass(frozen=True)
class CorrelationSample:
    query_id: int
    reference_id: int
    similarity: float
    match_ratio: float


@dataclass
class CorrelationStudy:
    samples: List[CorrelationSample]
    pcc: float
    src: float

    def pairs(self) -> np.ndarray:
        return np.array([(s.similarity, s.match_ratio) for s in self.samples])


def correlation_study(bundle: SceneBundle, queries: Iterable, k_eval: int = 10,
                      ratio_threshold: float = DEFAULT_RATIO_THRESHOLD) -> CorrelationStudy:
    """Similarity vs match ratio for every query and each of its top-``k_eval`` images."""
    samples = []
    for q in queries:
        for rid, sim in bundle.index.retrieve(q.global_descriptor, k_eval):
            m = match_features(q.features, bundle.images[rid].features, ratio_threshold)
            samples.append(CorrelationSample(q.id, rid, sim, match_ratio(q.features, m)))
    xy = np.array([(s.similarity, s.match_ratio) for s in samples]).reshape(-1, 2)
    return CorrelationStudy(samples, pearson(xy), spearman(xy))


# ------------------------------------------------------------- pose errors


@dataclass(frozen=True)
class AccuracyBuckets:
    high: float
    medium: float
    low: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.high, self.medium, self.low)


def accuracy_buckets(t_err, r_err, total: Optional[int] = None) -> AccuracyBuckets:
    """Percent of ``total`` queries within each (metres, degrees) level.

    Failed queries are simply absent from ``t_err``/``r_err`` but still
    counted in ``total``.
    """
    t = np.asarray(t_err, dtype=np.float64)
    r = np.asarray(r_err, dtype=np.float64)
    total = len(t) if total is None else total
    if total == 0:
        raise ValueError("no queries")
    pct = [100.0 * float(np.sum((t <= mt) & (r <= md))) / total for mt, md in ACCURACY_THRESHOLDS]
    return AccuracyBuckets(*pct)


@dataclass
class ErrorStats:
    count: int
    failed: int
    mean_ate: float
    median_ate: float
    mean_are: float
    median_are: float
    buckets: AccuracyBuckets

    def row(self) -> dict:
        return {"count": self.count, "failed": self.failed,
                "mean_ate_m": self.mean_ate, "median_ate_m": self.median_ate,
                "mean_are_deg": self.mean_are, "median_are_deg": self.median_are,
                "high_pct": self.buckets.high, "medium_pct": self.buckets.medium,
                "low_pct": self.buckets.low}


@dataclass
class ErrorSummary:
    overall: ErrorStats
    by_difficulty: Dict[str, ErrorStats] = field(default_factory=dict)


def _stats(t: List[float], r: List[float], failed: int) -> ErrorStats:
    n = len(t) + failed
    nan = float("nan")
    return ErrorStats(
        n, failed,
        float(np.mean(t)) if t else nan, float(np.median(t)) if t else nan,
        float(np.mean(r)) if r else nan, float(np.median(r)) if r else nan,
        accuracy_buckets(t, r, n))


def summarize_errors(results: Sequence, ground_truth: Mapping[int, Pose]) -> ErrorSummary:
    """Aggregate ATE/ARE over results that expose ``query_id``, ``pose`` and
    ``difficulty``.

    Failed localisations are left out of the means and medians but count
    against every accuracy bucket.
    """
    if not results:
        raise ValueError("empty result set")
    groups: Dict[Optional[str], Tuple[list, list, list]] = {}
    all_t, all_r, all_failed = [], [], 0
    for res in results:
        if res.query_id not in ground_truth:
            raise KeyError(f"no ground truth for query {res.query_id}")
        d = res.difficulty.value if isinstance(res.difficulty, Difficulty) else res.difficulty
        bucket = groups.setdefault(d, ([], [], [0]))
        est = _pose_of(res)
        if est is None:
            all_failed += 1
            bucket[2][0] += 1
            continue
        gt = ground_truth[res.query_id]
        te, re_ = translation_error(est, gt), rotation_error(est, gt)
        all_t.append(te)
        all_r.append(re_)
        bucket[0].append(te)
        bucket[1].append(re_)
    summary = ErrorSummary(_stats(all_t, all_r, all_failed))
    for d in Difficulty:
        if d.value in groups:
            t, r, f = groups[d.value]
            summary.by_difficulty[d.value] = _stats(t, r, f[0])
    return summary


def _pose_of(res) -> Optional[Pose]:
    p = getattr(res, "pose", None)
    if p is None:
        return None
    return p if isinstance(p, Pose) else p.pose


def difficulty_distribution(results: Sequence) -> Dict[str, float]:
    """Percent of easy/medium/hard queries."""
    n = len(results)
    if n == 0:
        raise ValueError("empty result set")
    out = {}
    for d in Difficulty:
        c = sum(1 for r in results
                if (r.difficulty.value if isinstance(r.difficulty, Difficulty) else r.difficulty) == d.value)
        out[d.value] = 100.0 * c / n
    return out


# ------------------------------------------------------------- calibration


def calibrate_thresholds(scores, easy_fraction: float, hard_fraction: float) -> Tuple[float, float]:
    """Pick ``(gamma_low, gamma_high)`` as empirical score quantiles.

    ``gamma_low`` is the ``hard_fraction`` quantile and ``gamma_high`` the
    ``1 - easy_fraction`` quantile (linear interpolation between order
    statistics). With ``easy_fraction == 0`` the high threshold is placed
    just above the largest score so no query is easy.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not (0.0 <= easy_fraction <= 1.0 and 0.0 <= hard_fraction <= 1.0
            and easy_fraction + hard_fraction <= 1.0):
        raise ValueError("need 0 <= easy_fraction, hard_fraction and easy + hard <= 1")
    if len(s) < 10:
        raise ValueError("need at least 10 scores to calibrate")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    gamma_low = float(np.quantile(s, hard_fraction, method="linear"))
    if easy_fraction == 0.0:
        gamma_high = min(float(np.nextafter(s.max(), np.inf)), 1.0)
    else:
        gamma_high = float(np.quantile(s, 1.0 - easy_fraction, method="linear"))
    if not gamma_low < gamma_high:
        raise DegenerateSampleError(
            f"degenerate thresholds: gamma_low={gamma_low} >= gamma_high={gamma_high}")
    return gamma_low, gamma_high


def fit_line(x, y) -> Tuple[float, float, float]:
    """Least-squares ``y = a*x + b``; returns ``(a, b, r_squared)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})
