import numpy as np
import pytest

from airloc.bundle_io import Query
from airloc.geometry import rotation_error, translation_error
from airloc.matching import LocalFeatureSet, match_features
from airloc.pipeline import (STAGES, Adaptive, Fixed, MatcherConfig, lift_matches, localize, read_results,
                             run_batch, write_results)
from airloc.policy import Difficulty, PolicyConfig, budget, classify
from airloc.synthworld import query_from_reference


def test_fixed_budget_and_pair_units(small_world):
    br = run_batch(small_world.queries, small_world.bundle, Fixed(7))
    assert all(r.budget_k == 7 and r.pair_units == 7 and len(r.retrieved_ids) == 7 for r in br.results)
    assert br.summary["total_pair_units"] == 7 * len(small_world.queries)
    assert br.summary["mean_budget"] == 7.0
    assert set(br.summary["stage_ms"]) == set(STAGES)


def test_adaptive_budget_follows_policy(small_world):
    pc = PolicyConfig(k=10, gamma_low=0.8, gamma_high=0.9)
    br = run_batch(small_world.queries, small_world.bundle, Adaptive(pc))
    for r in br.results:
        assert r.difficulty is classify(r.score, pc)
        assert r.budget_k == budget(r.difficulty, pc) == len(r.retrieved_ids)
    counts = br.summary["difficulty_counts"]
    assert sum(counts.values()) == len(small_world.queries)


def test_retrieved_prefix_of_fixed_ranking(small_world):
    pc = PolicyConfig(k=10, gamma_low=0.8, gamma_high=0.9)
    a = run_batch(small_world.queries, small_world.bundle, Adaptive(pc)).results
    f = run_batch(small_world.queries, small_world.bundle, Fixed(10)).results
    for x, y in zip(a, f):
        assert x.retrieved_ids == y.retrieved_ids[: x.budget_k]
        assert x.score == y.score


def test_mapped_view_localizes_to_its_pose(small_world):
    b = small_world.bundle
    for iid in (0, 13, 27):
        q = query_from_reference(b, iid, query_id=100 + iid)
        r = localize(q, b, Fixed(3))
        assert r.retrieved_ids[0] == iid
        assert r.ok
        # keypoints carry 1 px noise, so this is a noisy but well-constrained fit
        assert translation_error(r.pose.pose, b.images[iid].pose) < 0.05
        assert rotation_error(r.pose.pose, b.images[iid].pose) < 0.5


def test_lift_keeps_best_match_per_point(small_world):
    b, q = small_world.bundle, small_world.queries.queries[0]
    retrieved = list(b.index.retrieve(q.global_descriptor, 6).ids)
    corr, total = lift_matches(q, b, retrieved, MatcherConfig())
    assert len(np.unique(corr.point_ids)) == len(corr)
    # oracle: scan every match and keep the top score per point
    best = {}
    n = 0
    for rid in retrieved:
        ref = b.images[rid].features
        m = match_features(q.features, ref)
        n += len(m)
        for qi, ri, s in zip(m.query_idx, m.ref_idx, m.scores):
            pid = int(ref.point_ids[ri])
            if pid >= 0 and (pid not in best or s > best[pid][0]):
                best[pid] = (s, qi)
    assert total == n
    assert sorted(best) == sorted(corr.point_ids.tolist())
    for pid, qi, s in zip(corr.point_ids, corr.pixels, corr.scores):
        assert s == best[int(pid)][0]
    assert np.allclose(corr.points, b.point_coordinates(corr.point_ids))


def test_point_summary_matches_correspondences(small_world):
    r = localize(small_world.queries.queries[1], small_world.bundle, Fixed(4))
    assert r.correspondences_total == len(r.correspondence_point_ids)


def test_query_without_features_fails_softly(small_world):
    cam_id = small_world.queries.queries[0].camera_id
    blank = Query(999, cam_id, LocalFeatureSet(np.zeros((0, 2)), np.zeros((0, 64))),
                  small_world.queries.queries[0].global_descriptor)
    qs = list(small_world.queries)[:3] + [blank]
    br = run_batch(qs, small_world.bundle, Fixed(3))
    assert [r.ok for r in br.results] == [True, True, True, False]
    assert br.results[-1].failure == "no correspondences"
    assert br.summary["num_localized"] == 3


def test_batch_is_deterministic(small_world):
    a = run_batch(small_world.queries, small_world.bundle, Fixed(5))
    b = run_batch(small_world.queries, small_world.bundle, Fixed(5), parallelism=4)
    assert [r.comparable() for r in a.results] == [r.comparable() for r in b.results]


def test_results_file_round_trip(small_world, tmp_path):
    pc = PolicyConfig(k=6, gamma_low=0.8, gamma_high=0.9)
    br = run_batch(small_world.queries, small_world.bundle, Adaptive(pc))
    write_results(tmp_path / "r.jsonl", br)
    records, summary = read_results(tmp_path / "r.jsonl")
    assert summary["num_queries"] == len(br.results) and summary["mode"] == "adaptive"
    for rec, res in zip(records, br.results):
        assert rec.query_id == res.query_id and rec.budget_k == res.budget_k
        assert rec.difficulty is res.difficulty
        assert rec.retrieved_ids == res.retrieved_ids
        assert rec.pose == (None if res.pose is None else res.pose.pose)
        assert rec.failure == res.failure


def test_malformed_results_file(tmp_path):
    (tmp_path / "r.jsonl").write_text('{"type": "result", "query_id": 1\n')
    with pytest.raises(ValueError, match="r.jsonl:1"):
        read_results(tmp_path / "r.jsonl")


@pytest.mark.parametrize("bad", [lambda: Fixed(0), lambda: run_batch([], None, Fixed(1), parallelism=0)])
def test_invalid_arguments(bad):
    with pytest.raises(ValueError):
        bad()


def test_budget_clamped_to_map_size(small_world):
    r = localize(small_world.queries.queries[0], small_world.bundle, Fixed(500))
    assert r.budget_k == r.pair_units == len(small_world.bundle)
