"""Exhaustive nearest-neighbour matching over packed descriptor words.

This is the reference backend: every query descriptor is compared against
every stored descriptor, so its output defines correctness for the
approximate backends.  The scan is tiled over the stored rows to keep the
per-tile distance accumulator inside the CPU cache, which matters because
the whole benchmark runs this kernel billions of times.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..bitvec import DescriptorArray
from .base import MatchResult, QueryResult, SearchIndex

_TILE_COLS = 8192


def nearest_rows(
    query_words: np.ndarray,
    db_words: np.ndarray,
    tile: int = _TILE_COLS,
) -> tuple:
    """Exact nearest stored row per query row.

    Returns (distances, indices); ties resolve to the lowest row index.
    """
    n_q = query_words.shape[0]
    n_db = db_words.shape[0]
    n_words = query_words.shape[1]
    best_d = np.full(n_q, np.iinfo(np.uint16).max, dtype=np.uint16)
    best_i = np.zeros(n_q, dtype=np.int64)
    if n_db == 0 or n_q == 0:
        return best_d.astype(np.int64), best_i
    tmp = np.empty((n_q, tile), dtype=np.uint64)
    cnt = np.empty((n_q, tile), dtype=np.uint8)
    acc = np.empty((n_q, tile), dtype=np.uint16)
    rows = np.arange(n_q)
    for start in range(0, n_db, tile):
        end = min(start + tile, n_db)
        m = end - start
        t, c, a = tmp[:, :m], cnt[:, :m], acc[:, :m]
        np.bitwise_xor(query_words[:, 0:1], db_words[None, start:end, 0], out=t)
        np.bitwise_count(t, out=c)
        a[:] = c
        for w in range(1, n_words):
            np.bitwise_xor(query_words[:, w : w + 1], db_words[None, start:end, w], out=t)
            np.bitwise_count(t, out=c)
            np.add(a, c, out=a, casting="unsafe")
        tile_best = a.argmin(axis=1)
        tile_dist = a[rows, tile_best]
        improved = tile_dist < best_d
        best_d[improved] = tile_dist[improved]
        best_i[improved] = tile_best[improved] + start
    return best_d.astype(np.int64), best_i


class BruteForceIndex(SearchIndex):
    """Exact linear-scan index; the ground truth for all other backends."""

    def __init__(self):
        super().__init__()
        self._chunks: list[np.ndarray] = []
        self._chunk_image_idx: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None
        self._row_image: Optional[np.ndarray] = None

    @property
    def descriptor_count(self) -> int:
        return sum(c.shape[0] for c in self._chunks)

    def insert(self, image_id: str, descriptors: DescriptorArray) -> None:
        image_idx = self._register_image(image_id, descriptors)
        self._chunks.append(descriptors.words)
        self._chunk_image_idx.append(
            np.full(len(descriptors), image_idx, dtype=np.int32)
        )
        self._matrix = None
        self._row_image = None

    def _consolidated(self) -> tuple:
        if self._matrix is None:
            self._matrix = (
                np.vstack(self._chunks)
                if self._chunks
                else np.zeros((0, 0), dtype=np.uint64)
            )
            self._row_image = (
                np.concatenate(self._chunk_image_idx)
                if self._chunk_image_idx
                else np.zeros(0, dtype=np.int32)
            )
        return self._matrix, self._row_image

    def query(
        self, query_image_id: str, descriptors: DescriptorArray, tau: float
    ) -> QueryResult:
        tau = self._check_tau(tau)
        self._check_width(descriptors)
        matrix, row_image = self._consolidated()
        if matrix.shape[0] == 0 or len(descriptors) == 0:
            return QueryResult(query_image_id, (), ())
        dist, rows = nearest_rows(descriptors.words, matrix)
        keep = np.flatnonzero(dist <= tau)
        matches = [
            MatchResult(
                query_image_id=query_image_id,
                query_descriptor_index=int(q),
                reference_image_id=self._image_ids[int(row_image[rows[q]])],
                reference_descriptor_id=int(rows[q]),
                distance=int(dist[q]),
            )
            for q in keep
        ]
        return self._rank_images(query_image_id, row_image[rows[keep]], matches)
