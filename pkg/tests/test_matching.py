import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from airloc.matching import LocalFeatureSet, MatchSet, match_features, match_ratio


def random_set(rng, n, d=8, linked=False):
    desc = rng.normal(size=(n, d))
    kp = rng.uniform(0, 100, size=(n, 2))
    return LocalFeatureSet(kp, desc, np.arange(n) if linked else None)


def brute_force(q, r, ratio):
    """Loop-by-loop mutual NN and angular ratio test."""
    out = []
    for i in range(len(q)):
        sims = [float(q.descriptors[i] @ r.descriptors[j]) for j in range(len(r))]
        j = int(np.argmax(sims))
        col = [float(q.descriptors[a] @ r.descriptors[j]) for a in range(len(q))]
        if int(np.argmax(col)) != i:
            continue
        if ratio < 1.0 and len(r) > 1:
            s = sorted(sims, reverse=True)
            d1, d2 = math.acos(min(1.0, s[0])), math.acos(min(1.0, s[1]))
            if not d1 <= ratio * d2 or (d1 == 0 and d2 == 0):
                continue
        out.append((i, j))
    return out


@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(1, 25), st.sampled_from([0.6, 0.8, 0.9, 1.0]))
def test_matches_brute_force(seed, nq, nr, ratio):
    rng = np.random.default_rng(seed)
    q, r = random_set(rng, nq), random_set(rng, nr)
    m = match_features(q, r, ratio)
    assert list(zip(m.query_idx.tolist(), m.ref_idx.tolist())) == brute_force(q, r, ratio)
    assert len(set(m.ref_idx.tolist())) == len(m)  # one-to-one
    assert np.all(np.diff(m.query_idx) > 0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 0.7, 0.9]))
def test_ratio_test_only_removes(seed, ratio):
    rng = np.random.default_rng(seed)
    q, r = random_set(rng, 20), random_set(rng, 30)
    strict = set(match_features(q, r, ratio).query_idx.tolist())
    loose = set(match_features(q, r, 1.0).query_idx.tolist())
    assert strict <= loose


def test_identical_sets_match_fully():
    rng = np.random.default_rng(0)
    r = random_set(rng, 40, 32, linked=True)
    q = LocalFeatureSet(r.keypoints, r.descriptors)
    m = match_features(q, r)
    assert np.array_equal(m.query_idx, m.ref_idx)
    assert match_ratio(q, m) == 1.0
    assert np.allclose(m.scores, 1.0)


def test_empty_inputs():
    rng = np.random.default_rng(1)
    empty = LocalFeatureSet(np.zeros((0, 2)), np.zeros((0, 8)))
    assert len(match_features(empty, random_set(rng, 5))) == 0
    assert len(match_features(random_set(rng, 5), empty)) == 0
    with pytest.raises(ValueError):
        match_ratio(empty, MatchSet.empty())


def test_dimension_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        match_features(random_set(rng, 3, 4), random_set(rng, 3, 5))


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
def test_bad_ratio(ratio):
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        match_features(random_set(rng, 3), random_set(rng, 3), ratio)


def test_feature_set_validation():
    with pytest.raises(ValueError):
        LocalFeatureSet(np.zeros((2, 2)), np.zeros((3, 4)) + 1)
    with pytest.raises(ValueError):
        LocalFeatureSet(np.zeros((1, 2)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        LocalFeatureSet([[np.nan, 0.0]], [[1.0, 0.0]])


def test_truncation_keeps_file_order():
    rng = np.random.default_rng(4)
    fs = random_set(rng, 10, linked=True)
    t = fs.truncated(4)
    assert np.array_equal(t.keypoints, fs.keypoints[:4])
    assert t.point_ids.tolist() == [0, 1, 2, 3]
    assert fs.truncated(None) is fs
