"""Query localisation: retrieve, match, lift to 2D-3D, RANSAC-PnP."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .bundle_io import Query, SceneBundle
from .geometry import Camera, Pose, Quaternion
from .index import DEFAULT_N_SCORE
from .matching import DEFAULT_RATIO_THRESHOLD, NO_POINT, match_features
from .pnp import Correspondences, PoseEstimate, PoseEstimationError, RansacConfig, ransac_pnp
from .policy import Difficulty, PolicyConfig, budget, classify

STAGES = ("feature_load", "retrieval", "matching", "pnp")


@dataclass(frozen=True)
class Fixed:
    k: int
    n_score: int = DEFAULT_N_SCORE

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError(f"fixed k must be a positive integer, got {self.k!r}")


@dataclass(frozen=True)
class Adaptive:
    policy: PolicyConfig


RunMode = Union[Fixed, Adaptive]


@dataclass(frozen=True)
class MatcherConfig:
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
    max_features: Optional[int] = None


@dataclass
class QueryResult:
    query_id: int
    score: float
    difficulty: Optional[Difficulty]
    budget_k: int
    retrieved_ids: List[int]
    pose: Optional[PoseEstimate]
    matches_total: int
    correspondences_total: int
    timings: Dict[str, float]
    pair_units: int
    failure: Optional[str] = None
    correspondence_point_ids: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.pose is not None

    def comparable(self) -> dict:
        """All fields except wall-clock timings, for determinism checks."""
        d = result_record(self)
        d.pop("timings")
        if self.correspondence_point_ids is not None:
            d["correspondence_point_ids"] = self.correspondence_point_ids.tolist()
        return d


@dataclass
class BatchResult:
    results: List[QueryResult]
    summary: dict


def _query_seed(seed: int, query_id: int) -> int:
    return int(np.random.SeedSequence([seed & (2**64 - 1), query_id & (2**64 - 1)]).generate_state(1, np.uint64)[0])


def lift_matches(query: Query, bundle: SceneBundle, retrieved: Sequence[int], matcher: MatcherConfig,
                 features=None):
    """Match against each retrieved image and build deduplicated correspondences.

    When two retrieved images link the same 3D point, the match with the
    higher descriptor similarity wins (earlier retrieval rank on ties).
    Returns ``(Correspondences, matches_total)``.
    """
    qf = query.features if features is None else features
    best: Dict[int, tuple] = {}
    matches_total = 0
    for rid in retrieved:  # strict ">" below keeps the earlier rank on ties
        ref = bundle.images[rid].features
        m = match_features(qf, ref, matcher.ratio_threshold)
        matches_total += len(m)
        if not len(m):
            continue
        pids = ref.point_ids[m.ref_idx]
        linked = pids != NO_POINT
        for qi, pid, s in zip(m.query_idx[linked].tolist(), pids[linked].tolist(), m.scores[linked].tolist()):
            cur = best.get(pid)
            if cur is None or s > cur[0]:
                best[pid] = (s, qi, rid)
    if not best:
        return Correspondences.from_arrays(np.zeros((0, 2)), np.zeros((0, 3))), matches_total
    # deterministic order: by query keypoint, then point id
    items = sorted((qi, pid, s, rid) for pid, (s, qi, rid) in best.items())
    qi = np.array([it[0] for it in items], dtype=np.int64)
    pid = np.array([it[1] for it in items], dtype=np.int64)
    corr = Correspondences(qf.keypoints[qi], bundle.point_coordinates(pid), pid,
                           np.array([it[3] for it in items], dtype=np.int64),
                           np.array([it[2] for it in items], dtype=np.float64))
    return corr, matches_total


def localize(query: Query, bundle: SceneBundle, mode: RunMode, matcher: MatcherConfig = MatcherConfig(),
             ransac: RansacConfig = RansacConfig(), camera: Optional[Camera] = None) -> QueryResult:
    """Localize one query against ``bundle``.

    ``camera`` defaults to the bundle camera with the query's camera id.
    Failures (no correspondences, RANSAC failure) are reported in the
    result's ``failure`` field with an absent pose.
    """
    if camera is None:
        camera = bundle.cameras[query.camera_id]
    timings = {}
    clock = time.perf_counter

    t0 = clock()
    qf = query.features.truncated(matcher.max_features)
    timings["feature_load"] = (clock() - t0) * 1e3

    t0 = clock()
    index = bundle.index
    n_score = mode.policy.n_score if isinstance(mode, Adaptive) else mode.n_score
    if isinstance(mode, Adaptive):
        k_max = mode.policy.k
    else:
        k_max = mode.k
    ranked = index.retrieve(query.global_descriptor, max(k_max, n_score))
    score = float(np.mean(ranked.similarities[:n_score]))
    if isinstance(mode, Adaptive):
        difficulty = classify(score, mode.policy)
        k = budget(difficulty, mode.policy)
    else:
        difficulty = None
        k = mode.k
    k = min(k, len(index))  # never budget more images than the map holds
    retrieved = list(ranked.ids[:k])
    timings["retrieval"] = (clock() - t0) * 1e3

    t0 = clock()
    corr, matches_total = lift_matches(query, bundle, retrieved, matcher, qf)
    timings["matching"] = (clock() - t0) * 1e3

    t0 = clock()
    estimate, failure = None, None
    if len(corr) == 0:
        failure = "no correspondences"
    else:
        try:
            estimate = ransac_pnp(corr, camera, replace(ransac, seed=_query_seed(ransac.seed, query.id)))
        except PoseEstimationError as exc:
            failure = exc.reason
    timings["pnp"] = (clock() - t0) * 1e3

    return QueryResult(query.id, score, difficulty, k, retrieved, estimate, matches_total, len(corr),
                       timings, len(retrieved), failure, corr.point_ids.copy())


def run_batch(queries, bundle: SceneBundle, mode: RunMode, matcher: MatcherConfig = MatcherConfig(),
              ransac: RansacConfig = RansacConfig(), parallelism: int = 1) -> BatchResult:
    """Localize every query; results keep the input order.

    ``queries`` is a :class:`~airloc.bundle_io.QuerySet` or a sequence of
    :class:`~airloc.bundle_io.Query` (which then use the bundle's cameras).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cameras = getattr(queries, "cameras", None) or bundle.cameras
    qlist = list(queries)
    bundle.index  # build once before fanning out

    def one(q):
        try:
            return localize(q, bundle, mode, matcher, ransac, cameras[q.camera_id])
        except Exception as exc:  # per-query failures never abort the batch
            return QueryResult(q.id, float("nan"), None, 0, [], None, 0, 0,
                               {s: 0.0 for s in STAGES}, 0, f"error: {exc}")

    if parallelism == 1:
        results = [one(q) for q in qlist]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, qlist))
    return BatchResult(results, summarize_batch(results, mode))


def summarize_batch(results: Sequence[QueryResult], mode: Optional[RunMode] = None) -> dict:
    n = len(results)
    summary = {
        "mode": None if mode is None else ("adaptive" if isinstance(mode, Adaptive) else "fixed"),
        "k": None if mode is None else (mode.policy.k if isinstance(mode, Adaptive) else mode.k),
        "num_queries": n,
        "num_localized": sum(r.ok for r in results),
        "mean_budget": float(np.mean([r.budget_k for r in results])) if n else 0.0,
        "total_pair_units": int(sum(r.pair_units for r in results)),
        "stage_ms": {s: float(sum(r.timings.get(s, 0.0) for r in results)) for s in STAGES},
    }
    if mode is not None and isinstance(mode, Adaptive):
        counts = {d.value: sum(r.difficulty is d for r in results) for d in Difficulty}
        summary["difficulty_counts"] = counts
    return summary


# ------------------------------------------------------------ result files


def result_record(r: QueryResult) -> dict:
    pose = None
    if r.pose is not None:
        p = r.pose.pose
        pose = {"qvec": [float(x) for x in p.rotation.as_array()],
                "center": [float(x) for x in p.center],
                "num_inliers": r.pose.num_inliers,
                "iterations": r.pose.iterations_used,
                "mean_reprojection_error": r.pose.mean_reprojection_error,
                "refinement_converged": r.pose.refinement_converged}
    return {
        "type": "result",
        "query_id": r.query_id,
        "score": r.score,
        "difficulty": None if r.difficulty is None else r.difficulty.value,
        "budget_k": r.budget_k,
        "retrieved_ids": list(r.retrieved_ids),
        "pose": pose,
        "failure": r.failure,
        "matches_total": r.matches_total,
        "correspondences_total": r.correspondences_total,
        "pair_units": r.pair_units,
        "timings": {s: round(r.timings.get(s, 0.0), 3) for s in STAGES},
    }


def write_results(path, batch: BatchResult) -> None:
    """One JSON record per query, then a closing summary record."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in batch.results:
            fh.write(json.dumps(result_record(r), separators=(",", ":")) + "\n")
        fh.write(json.dumps({"type": "summary", **batch.summary}, separators=(",", ":")) + "\n")


@dataclass
class ResultRecord:
    """A query result read back from a results file."""

    query_id: int
    score: float
    difficulty: Optional[Difficulty]
    budget_k: int
    retrieved_ids: List[int]
    pose: Optional[Pose]
    failure: Optional[str]
    pair_units: int
    raw: dict

    @property
    def ok(self) -> bool:
        return self.pose is not None


def read_results(path):
    """Parse a results file into ``(records, summary)``."""
    records, summary = [], None
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if rec.get("type") == "summary":
                summary = rec
                continue
            if rec.get("type") != "result":
                raise ValueError(f"{path}:{lineno}: unknown record type {rec.get('type')!r}")
            p = rec.get("pose")
            pose = None if p is None else Pose(Quaternion.from_array(p["qvec"]), p["center"])
            diff = rec.get("difficulty")
            records.append(ResultRecord(rec["query_id"], rec["score"],
                                        None if diff is None else Difficulty(diff), rec["budget_k"],
                                        rec["retrieved_ids"], pose, rec.get("failure"),
                                        rec["pair_units"], rec))
    return records, summary
