"""Exact cosine-similarity retrieval over global image descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

DEFAULT_N_SCORE = 3


class DescriptorError(ValueError):
    """Malformed global descriptor (wrong dimension, zero norm, non-finite)."""


def _as_vector(a, name="descriptor") -> np.ndarray:
    v = np.asarray(a, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise DescriptorError(f"{name} must be a nonempty finite vector")
    return v


def l2_normalize(a) -> np.ndarray:
    """Unit-norm copy of ``a``; already-unit vectors are returned unchanged."""
    v = _as_vector(a)
    n = float(np.sqrt(np.dot(v, v)))
    if n == 0.0:
        raise DescriptorError("zero-norm descriptor")
    if abs(n - 1.0) <= 1e-12:
        return v.copy()
    return v / n


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two raw descriptor vectors."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise DescriptorError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DescriptorError("zero-norm descriptor")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class RetrievalList:
    """Retrieved image ids with similarities, best first."""

    ids: tuple
    similarities: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[tuple]:
        return iter(zip(self.ids, self.similarities.tolist()))

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RetrievalList(self.ids[i], self.similarities[i])
        return self.ids[i], float(self.similarities[i])


class DescriptorIndex:
    """Write-once store of L2-normalized global descriptors.

    Retrieval is an exhaustive scan; ties are broken by ascending image id.
    """

    def __init__(self, descriptors: Mapping[int, "np.ndarray"]):
        if len(descriptors) == 0:
            raise DescriptorError("descriptor index is empty")
        ids = sorted(descriptors)
        rows = [l2_normalize(descriptors[i]) for i in ids]
        dims = {r.size for r in rows}
        if len(dims) != 1:
            raise DescriptorError(f"inconsistent descriptor dimensions {sorted(dims)}")
        self.ids = np.asarray(ids, dtype=np.int64)
        self.matrix = np.vstack(rows)
        self.matrix.setflags(write=False)
        self.dimension = self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def similarities(self, query) -> np.ndarray:
        """Similarity of ``query`` to every entry, in ``self.ids`` order."""
        q = _as_vector(query, "query")
        if q.size != self.dimension:
            raise DescriptorError(f"query dimension {q.size} != index dimension {self.dimension}")
        q = l2_normalize(q)
        # elementwise reduction instead of BLAS gemv: bitwise stable across
        # thread counts
        return np.clip((self.matrix * q).sum(axis=1), -1.0, 1.0)

    def retrieve(self, query, k: int) -> RetrievalList:
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query)
        order = np.lexsort((self.ids, -sims))[: min(k, len(self.ids))]
        return RetrievalList(tuple(int(i) for i in self.ids[order]), sims[order])


def retrieve_top_k(index: DescriptorIndex, query, k: int) -> RetrievalList:
    return index.retrieve(query, k)


def query_score(index: DescriptorIndex, query, n: int = DEFAULT_N_SCORE) -> float:
    """Mean similarity of the top-``n`` retrievals (clamped to index size)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    top = index.retrieve(query, n)
    return float(np.mean(top.similarities))
