"""Local feature sets, mutual-nearest-neighbour matching and the match ratio."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_RATIO_THRESHOLD = 0.9
NO_POINT = -1


def _normalize_rows(d: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero-norm local descriptor")
    # leave rows that are already unit untouched so load/save is idempotent
    unit = np.abs(n - 1.0) <= 1e-12
    return np.where(unit, d, d / n)


class LocalFeatureSet:
    """Keypoints and descriptors of one image.

    ``point_ids[i]`` is the 3D point observed by keypoint ``i`` or ``-1``;
    query images carry ``point_ids=None``.
    """

    __slots__ = ("keypoints", "descriptors", "point_ids")

    def __init__(self, keypoints, descriptors, point_ids=None):
        kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
        desc = np.asarray(descriptors, dtype=np.float64)
        if desc.ndim != 2:
            desc = desc.reshape(len(kp), -1) if len(kp) else np.zeros((0, 0))
        if len(kp) != len(desc):
            raise ValueError(f"{len(kp)} keypoints but {len(desc)} descriptors")
        if not (np.all(np.isfinite(kp)) and np.all(np.isfinite(desc))):
            raise ValueError("keypoints and descriptors must be finite")
        if len(desc):
            desc = _normalize_rows(desc)
        else:
            desc = np.zeros((0, 0))  # an empty set has no descriptor width
        if point_ids is not None:
            point_ids = np.asarray(point_ids, dtype=np.int64).ravel()
            if len(point_ids) != len(kp):
                raise ValueError("point_ids length differs from keypoint count")
            point_ids.setflags(write=False)
        kp.setflags(write=False)
        desc.setflags(write=False)
        self.keypoints = kp
        self.descriptors = desc
        self.point_ids = point_ids

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1] if self.descriptors.ndim == 2 else 0

    def truncated(self, max_features: Optional[int]) -> "LocalFeatureSet":
        """First ``max_features`` keypoints (file order)."""
        if max_features is None or len(self) <= max_features:
            return self
        pids = None if self.point_ids is None else self.point_ids[:max_features]
        return LocalFeatureSet(self.keypoints[:max_features], self.descriptors[:max_features], pids)

    def __eq__(self, other):
        if not isinstance(other, LocalFeatureSet):
            return NotImplemented
        if (self.point_ids is None) != (other.point_ids is None):
            return False
        return (np.array_equal(self.keypoints, other.keypoints)
                and np.array_equal(self.descriptors, other.descriptors)
                and (self.point_ids is None or np.array_equal(self.point_ids, other.point_ids)))

    __hash__ = None


@dataclass(frozen=True)
class MatchSet:
    """One-to-one matches, sorted by query keypoint index."""

    query_idx: np.ndarray
    ref_idx: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.query_idx)

    @classmethod
    def empty(cls) -> "MatchSet":
        e = np.zeros(0, dtype=np.int64)
        return cls(e, e.copy(), np.zeros(0))


def match_features(query: LocalFeatureSet, reference: LocalFeatureSet,
                   ratio_threshold: float = DEFAULT_RATIO_THRESHOLD) -> MatchSet:
    """Mutual nearest neighbours under cosine similarity plus Lowe's ratio test.

    The ratio is taken between the angular distances to the best and
    second-best reference descriptor of each query feature. A threshold of
    1.0 disables the test.
    """
    if not 0.0 < ratio_threshold <= 1.0:
        raise ValueError("ratio_threshold must lie in (0, 1]")
    if len(query) == 0 or len(reference) == 0:
        return MatchSet.empty()
    if query.dim != reference.dim:
        raise ValueError(f"descriptor dimension mismatch: {query.dim} vs {reference.dim}")

    sim = query.descriptors @ reference.descriptors.T
    nn12 = np.argmax(sim, axis=1)
    nn21 = np.argmax(sim, axis=0)
    qi = np.arange(len(query))
    mutual = nn21[nn12] == qi
    best = sim[qi, nn12]

    if ratio_threshold < 1.0 and len(reference) > 1:
        second = np.partition(sim, -2, axis=1)[:, -2]
        d1 = np.arccos(np.clip(best, -1.0, 1.0))
        d2 = np.arccos(np.clip(second, -1.0, 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            passed = (d1 <= ratio_threshold * d2) & ~((d1 == 0.0) & (d2 == 0.0))
        keep = mutual & passed
    else:
        keep = mutual

    return MatchSet(qi[keep].astype(np.int64), nn12[keep].astype(np.int64), best[keep])


def match_ratio(query: LocalFeatureSet, matches: MatchSet) -> float:
    """Matched query keypoints over all query keypoints."""
    if len(query) == 0:
        raise ValueError("query has no keypoints")
    if len(matches) and (matches.query_idx.max() >= len(query) or matches.query_idx.min() < 0):
        raise ValueError("match refers to a query keypoint out of range")
    return len(matches) / len(query)
