"""Exact nearest-neighbor search by Euclidean distance over l2-normalized vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RankEntry:
    image_id: int
    distance: float


@dataclass
class RankedList:
    """Retrieval result: entries in non-decreasing distance, ties by ascending id."""

    entries: list[RankEntry]
    query_id: int | None = None

    def ids(self) -> list[int]:
        return [e.image_id for e in self.entries]

    def distances(self) -> list[float]:
        return [e.distance for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """v / ||v||; rejects zero and non-finite vectors."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("cannot normalize a non-finite vector")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / norm


@dataclass
class VisualIndex:
    ids: np.ndarray = field(repr=False)      # [N] int64
    vectors: np.ndarray = field(repr=False)  # [N x dim] float64, rows unit-norm

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_index(ids, vectors) -> VisualIndex:
    """Normalize the rows and freeze them into a searchable index."""
    id_arr = np.asarray(list(ids), dtype=np.int64)
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("index needs a non-empty 2-d collection of vectors")
    if len(id_arr) != mat.shape[0]:
        raise ValueError(f"{len(id_arr)} ids for {mat.shape[0]} vectors")
    if len(np.unique(id_arr)) != len(id_arr):
        raise ValueError("duplicate image ids")
    norms = np.linalg.norm(mat, axis=1)
    if (norms == 0).any():
        bad = int(id_arr[int(np.argmax(norms == 0))])
        raise ValueError(f"zero vector for image id {bad}")
    return VisualIndex(ids=id_arr, vectors=mat / norms[:, None])


def query(index: VisualIndex, q: np.ndarray, k: int,
          exclude_id: int | None = None) -> RankedList:
    """Top-k ids by exact Euclidean distance to the normalized query.

    Ties are broken by ascending image id; exclude_id, when given, is removed
    from the candidates before ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ValueError(f"query dim {q.shape} does not match index dim {index.dim}")
    qn = l2_normalize(q)

    ids, vectors = index.ids, index.vectors
    if exclude_id is not None:
        keep = ids != exclude_id
        ids, vectors = ids[keep], vectors[keep]
    dists = np.sqrt(((vectors - qn) ** 2).sum(axis=1))
    order = np.lexsort((ids, dists))[:k]
    entries = [RankEntry(int(ids[i]), float(dists[i])) for i in order]
    return RankedList(entries=entries, query_id=exclude_id)
