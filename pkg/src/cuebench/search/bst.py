"""Binary search tree over descriptor bits.

Internal nodes test one bit; descriptors descend left or right on its value.
Leaves hold buckets of stored rows and split once they outgrow
``max_leaf_size``, choosing the as yet untested bit whose set fraction over
the bucket is closest to one half (ties toward the lowest bit index) so the
two children stay balanced.  Queries descend a single path, then match
exhaustively inside the reached bucket; there is no backtracking, which
trades a little recall for very cheap lookups.  With an unbounded leaf the
tree never splits and the single bucket reproduces brute-force matching.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..bitvec import DescriptorArray
from .base import MatchResult, QueryResult, SearchIndex


class _Leaf:
    __slots__ = ("rows",)

    def __init__(self, rows: Optional[list] = None):
        self.rows: list = rows if rows is not None else []


class _Inner:
    __slots__ = ("bit", "zero", "one")

    def __init__(self, bit: int, zero, one):
        self.bit = bit
        self.zero = zero
        self.one = one


class BstIndex(SearchIndex):
    """Single-path descent tree with balanced-bit leaf splitting."""

    def __init__(self, max_leaf_size: Optional[int] = 100):
        super().__init__()
        if max_leaf_size is not None and (
            not isinstance(max_leaf_size, int) or max_leaf_size < 1
        ):
            raise ValueError(
                f"max_leaf_size must be a positive integer or None, got {max_leaf_size!r}"
            )
        self.max_leaf_size = max_leaf_size
        self._root = _Leaf()
        self._capacity = 0
        self._count = 0
        self._words: Optional[np.ndarray] = None
        self._row_image: Optional[np.ndarray] = None

    # ---- row storage with amortized growth ----

    def _append_rows(self, words: np.ndarray, image_idx: int) -> np.ndarray:
        n = words.shape[0]
        if self._words is None:
            cap = max(1024, n)
            self._words = np.zeros((cap, words.shape[1]), dtype=np.uint64)
            self._row_image = np.zeros(cap, dtype=np.int32)
            self._capacity = cap
        elif self._count + n > self._capacity:
            cap = max(self._capacity * 2, self._count + n)
            grown = np.zeros((cap, self._words.shape[1]), dtype=np.uint64)
            grown[: self._count] = self._words[: self._count]
            self._words = grown
            grown_img = np.zeros(cap, dtype=np.int32)
            grown_img[: self._count] = self._row_image[: self._count]
            self._row_image = grown_img
            self._capacity = cap
        start = self._count
        self._words[start : start + n] = words
        self._row_image[start : start + n] = image_idx
        self._count += n
        return np.arange(start, start + n, dtype=np.int64)

    def _bit_values(self, rows: np.ndarray, bit: int) -> np.ndarray:
        return (self._words[rows, bit // 64] >> np.uint64(bit % 64)) & np.uint64(1)

    # ---- tree maintenance ----

    def _split_bit(self, rows: list, tested: set) -> Optional[int]:
        """Untested bit with set fraction closest to 0.5, or None."""
        idx = np.asarray(rows, dtype=np.int64)
        as_bytes = self._words[idx].astype("<u8", copy=False).view(np.uint8)
        bits = np.unpackbits(as_bytes, axis=1, count=self._nbits, bitorder="little")
        frac = bits.mean(axis=0)
        score = np.abs(frac - 0.5)
        if tested:
            score[list(tested)] = np.inf
        best = int(score.argmin())
        if not np.isfinite(score[best]) or score[best] == 0.5:
            return None  # bucket is uniform on every untested bit
        return best

    def _insert_into(self, node, rows: np.ndarray, tested: set):
        """Route new rows into ``node``; returns the (possibly new) subtree."""
        if isinstance(node, _Inner):
            vals = self._bit_values(rows, node.bit)
            zeros = rows[vals == 0]
            ones = rows[vals == 1]
            child_tested = tested | {node.bit}
            if len(zeros):
                node.zero = self._insert_into(node.zero, zeros, child_tested)
            if len(ones):
                node.one = self._insert_into(node.one, ones, child_tested)
            return node
        node.rows.extend(int(r) for r in rows)
        if self.max_leaf_size is None or len(node.rows) <= self.max_leaf_size:
            return node
        bit = self._split_bit(node.rows, tested)
        if bit is None:
            return node
        bucket = np.asarray(node.rows, dtype=np.int64)
        vals = self._bit_values(bucket, bit)
        zero_leaf = _Leaf([int(r) for r in bucket[vals == 0]])
        one_leaf = _Leaf([int(r) for r in bucket[vals == 1]])
        inner = _Inner(bit, zero_leaf, one_leaf)
        child_tested = tested | {bit}
        empty = np.zeros(0, dtype=np.int64)
        # children may themselves still exceed the bound on a skewed split
        inner.zero = self._insert_into(inner.zero, empty, child_tested)
        inner.one = self._insert_into(inner.one, empty, child_tested)
        return inner

    def insert(self, image_id: str, descriptors: DescriptorArray) -> None:
        image_idx = self._register_image(image_id, descriptors)
        rows = self._append_rows(descriptors.words, image_idx)
        self._root = self._insert_into(self._root, rows, set())

    # ---- queries ----

    def query(
        self, query_image_id: str, descriptors: DescriptorArray, tau: float
    ) -> QueryResult:
        tau = self._check_tau(tau)
        self._check_width(descriptors)
        if self._count == 0 or len(descriptors) == 0:
            return QueryResult(query_image_id, (), ())
        words = descriptors.words
        best_dist = np.full(len(descriptors), -1, dtype=np.int64)
        best_row = np.full(len(descriptors), -1, dtype=np.int64)
        stack = [(self._root, np.arange(len(descriptors), dtype=np.int64))]
        while stack:
            node, q_idx = stack.pop()
            if isinstance(node, _Inner):
                vals = (words[q_idx, node.bit // 64] >> np.uint64(node.bit % 64)) & np.uint64(1)
                zeros = q_idx[vals == 0]
                ones = q_idx[vals == 1]
                if len(zeros):
                    stack.append((node.zero, zeros))
                if len(ones):
                    stack.append((node.one, ones))
                continue
            if not node.rows:
                continue
            bucket = np.asarray(node.rows, dtype=np.int64)
            cand = self._words[bucket]
            x = words[q_idx][:, None, :] ^ cand[None, :, :]
            d = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
            local_best = d.argmin(axis=1)
            best_dist[q_idx] = d[np.arange(len(q_idx)), local_best]
            best_row[q_idx] = bucket[local_best]
        matches = []
        matched_imgs = []
        for q in range(len(descriptors)):
            if best_row[q] < 0 or best_dist[q] > tau:
                continue
            row = int(best_row[q])
            img = int(self._row_image[row])
            matches.append(
                MatchResult(
                    query_image_id=query_image_id,
                    query_descriptor_index=q,
                    reference_image_id=self._image_ids[img],
                    reference_descriptor_id=row,
                    distance=int(best_dist[q]),
                )
            )
            matched_imgs.append(img)
        return self._rank_images(
            query_image_id, np.asarray(matched_imgs, dtype=np.int64), matches
        )

    # ---- diagnostics used by tests ----

    def leaf_sizes(self) -> list:
        sizes = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            if isinstance(node, _Inner):
                stack.append(node.zero)
                stack.append(node.one)
            else:
                sizes.append(len(node.rows))
        return sizes

    def depth(self) -> int:
        def walk(node):
            if isinstance(node, _Leaf):
                return 0
            return 1 + max(walk(node.zero), walk(node.one))

        return walk(self._root)
