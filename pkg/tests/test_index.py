import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from airloc.index import DescriptorError, DescriptorIndex, cosine_similarity, query_score, retrieve_top_k


def test_cosine_basic():
    assert cosine_similarity([1, 0], [2, 0]) == 1.0
    assert cosine_similarity([1, 0], [-3, 0]) == -1.0
    assert cosine_similarity([1, 0], [0, 5]) == 0.0


def test_cosine_errors():
    with pytest.raises(DescriptorError):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(DescriptorError):
        cosine_similarity([0, 0], [1, 0])


def test_empty_index_rejected():
    with pytest.raises(DescriptorError):
        DescriptorIndex({})


def test_ties_broken_by_id():
    idx = DescriptorIndex({5: [1, 0], 2: [1, 0], 9: [0, 1]})
    r = idx.retrieve([1, 0], 3)
    assert list(r.ids) == [2, 5, 9]


def test_k_larger_than_index():
    idx = DescriptorIndex({0: [1, 0], 1: [0, 1]})
    assert len(idx.retrieve([1, 1], 10)) == 2


@st.composite
def index_and_query(draw):
    n = draw(st.integers(1, 30))
    d = draw(st.integers(1, 6))
    el = st.integers(-3, 3).map(float)  # small integers give plenty of exact ties
    mat = draw(arrays(np.float64, (n, d), elements=el).filter(lambda m: np.all(np.any(m != 0, axis=1))))
    q = draw(arrays(np.float64, d, elements=el).filter(lambda v: np.any(v != 0)))
    ids = draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n, unique=True))
    return dict(zip(ids, mat)), q, draw(st.integers(1, n + 2))


@given(index_and_query())
def test_retrieval_matches_brute_force(case):
    mapping, q, k = case
    idx = DescriptorIndex(mapping)
    r = retrieve_top_k(idx, q, k)
    sims = {i: cosine_similarity(v, q) for i, v in mapping.items()}
    expected = sorted(sims.values(), reverse=True)[:k]
    assert np.allclose(r.similarities, expected, atol=1e-12)
    assert np.allclose(r.similarities, [sims[i] for i in r.ids], atol=1e-12)
    # nothing left out beats anything retrieved (analytic ties may differ by an ulp)
    rest = [sims[i] for i in mapping if i not in set(r.ids)]
    if rest:
        assert max(rest) <= min(r.similarities) + 1e-12
    assert np.all(np.diff(r.similarities) <= 0)


@given(index_and_query())
def test_query_score_is_mean_of_top3(case):
    mapping, q, _ = case
    idx = DescriptorIndex(mapping)
    sims = sorted((cosine_similarity(v, q) for v in mapping.values()), reverse=True)
    assert query_score(idx, q) == pytest.approx(np.mean(sims[:3]), abs=1e-12)
