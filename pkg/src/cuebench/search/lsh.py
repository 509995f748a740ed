"""Multi-probe locality-sensitive hashing on sampled descriptor bits.

Each table hashes a descriptor to a small key made of ``key_bits`` sampled
bit positions; similar descriptors collide with high probability.  A query
probes every bucket whose key differs from the query key in at most
``probe_radius`` sampled bits, unions the candidates across tables, and
resolves them exactly.  With ``probe_radius >= key_bits`` every bucket of a
table is probed, so a single table degenerates to the brute-force scan.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Optional

import numpy as np

from ..bitvec import DescriptorArray
from .base import MatchResult, QueryResult, SearchIndex


def _probe_masks(key_bits: int, radius: int) -> list:
    masks = [0]
    for r in range(1, radius + 1):
        for positions in combinations(range(key_bits), r):
            m = 0
            for p in positions:
                m |= 1 << p
            masks.append(m)
    return masks


class LshIndex(SearchIndex):
    """Hash-bucket candidate generation with exact re-ranking."""

    def __init__(
        self,
        table_count: int = 4,
        key_bits: int = 12,
        probe_radius: int = 1,
        seed: int = 0,
    ):
        super().__init__()
        if not isinstance(table_count, int) or table_count < 1:
            raise ValueError(f"table_count must be an integer >= 1, got {table_count!r}")
        if not isinstance(key_bits, int) or not 1 <= key_bits <= 63:
            raise ValueError(
                f"key_bits must be an integer in [1, 63] so packed keys fit "
                f"one machine word, got {key_bits!r}"
            )
        if not isinstance(probe_radius, int) or probe_radius < 0:
            raise ValueError(f"probe_radius must be an integer >= 0, got {probe_radius!r}")
        self.table_count = table_count
        self.key_bits = key_bits
        self.probe_radius = min(probe_radius, key_bits)
        self.seed = int(seed)
        self._positions: Optional[list] = None  # per table: sampled bit positions
        self._tables: list = [dict() for _ in range(table_count)]
        self._chunks: list = []
        self._matrix: Optional[np.ndarray] = None
        self._row_image_chunks: list = []
        self._row_image: Optional[np.ndarray] = None
        self._count = 0
        if self.probe_radius >= self.key_bits:
            self._masks = None  # full probing: all buckets qualify
        else:
            total = sum(
                math.comb(self.key_bits, r) for r in range(self.probe_radius + 1)
            )
            # enumerating an enormous mask set would cost more than simply
            # scanning the stored keys, which _candidates falls back to
            self._masks = (
                _probe_masks(self.key_bits, self.probe_radius)
                if total <= 65536
                else []
            )

    def _init_tables(self, nbits: int) -> None:
        if self.key_bits > nbits:
            raise ValueError(
                f"key_bits {self.key_bits} exceeds descriptor length {nbits}"
            )
        rng = np.random.default_rng(self.seed)
        self._positions = [
            np.sort(rng.choice(nbits, size=self.key_bits, replace=False))
            for _ in range(self.table_count)
        ]

    def _keys(self, words: np.ndarray, table: int) -> np.ndarray:
        pos = self._positions[table]
        bits = (words[:, pos // 64] >> (pos % 64).astype(np.uint64)) & np.uint64(1)
        weights = (np.uint64(1) << np.arange(self.key_bits, dtype=np.uint64))
        return (bits * weights).sum(axis=1)

    def insert(self, image_id: str, descriptors: DescriptorArray) -> None:
        image_idx = self._register_image(image_id, descriptors)
        if self._positions is None:
            self._init_tables(descriptors.length_bits)
        words = descriptors.words
        start = self._count
        for t in range(self.table_count):
            keys = self._keys(words, t)
            buckets = self._tables[t]
            for i, key in enumerate(keys):
                buckets.setdefault(int(key), []).append(start + i)
        self._chunks.append(words)
        self._row_image_chunks.append(np.full(len(descriptors), image_idx, dtype=np.int32))
        self._count += len(descriptors)
        self._matrix = None
        self._row_image = None

    def _consolidated(self) -> tuple:
        if self._matrix is None:
            self._matrix = (
                np.vstack(self._chunks) if self._chunks else np.zeros((0, 0), dtype=np.uint64)
            )
            self._row_image = (
                np.concatenate(self._row_image_chunks)
                if self._row_image_chunks
                else np.zeros(0, dtype=np.int32)
            )
        return self._matrix, self._row_image

    def _candidates(self, query_keys: list) -> Optional[np.ndarray]:
        """Union of probed buckets across tables, deduplicated and sorted."""
        if self._masks is None:
            return None  # sentinel: evaluate against every stored row
        found: set = set()
        for t in range(self.table_count):
            buckets = self._tables[t]
            qkey = query_keys[t]
            if self._masks and len(self._masks) < len(buckets):
                for mask in self._masks:
                    rows = buckets.get(qkey ^ mask)
                    if rows:
                        found.update(rows)
            else:
                # sparse table: test stored keys directly
                for key, rows in buckets.items():
                    if (key ^ qkey).bit_count() <= self.probe_radius:
                        found.update(rows)
        return np.fromiter(sorted(found), dtype=np.int64, count=len(found))

    def query(
        self, query_image_id: str, descriptors: DescriptorArray, tau: float
    ) -> QueryResult:
        tau = self._check_tau(tau)
        self._check_width(descriptors)
        matrix, row_image = self._consolidated()
        if matrix.shape[0] == 0 or len(descriptors) == 0:
            return QueryResult(query_image_id, (), ())
        words = descriptors.words
        per_table_keys = [self._keys(words, t) for t in range(self.table_count)]
        matches = []
        matched_imgs = []
        for q in range(len(descriptors)):
            cand = self._candidates([int(per_table_keys[t][q]) for t in range(self.table_count)])
            if cand is None:
                cand_rows = matrix
                cand_ids = None
            elif len(cand) == 0:
                continue
            else:
                cand_rows = matrix[cand]
                cand_ids = cand
            d = np.bitwise_count(words[q] ^ cand_rows).sum(axis=1, dtype=np.int64)
            best = int(d.argmin())
            if d[best] <= tau:
                row = int(cand_ids[best]) if cand_ids is not None else best
                matches.append(
                    MatchResult(
                        query_image_id=query_image_id,
                        query_descriptor_index=q,
                        reference_image_id=self._image_ids[int(row_image[row])],
                        reference_descriptor_id=row,
                        distance=int(d[best]),
                    )
                )
                matched_imgs.append(int(row_image[row]))
        return self._rank_images(
            query_image_id, np.asarray(matched_imgs, dtype=np.int64), matches
        )
