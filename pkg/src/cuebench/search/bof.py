"""Bag-of-features backend: vocabulary tree over binary descriptors.

A vocabulary is built by hierarchical k-majority clustering: descriptors are
grouped by Hamming distance around binary centroids whose bits are updated
by per-bit majority vote.  Leaves of the tree are the visual words.  Images
become sparse, idf-weighted, L1-normalized word histograms, compared with
the L1 similarity 1 - 0.5 * sum(|a - b|), which an inverted index evaluates
touching only the words the query actually contains.

The index trains its vocabulary on the reference images themselves the
first time it is queried and retrains after every ``retrain_every`` newly
inserted images, so incremental insert/query workloads stay supported.
Descriptor-level matches are recovered by exhaustive verification against
the ``top_n`` highest-scoring images, which keeps downstream evaluation
identical across backends.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..bitvec import BinaryDescriptor, DescriptorArray
from .base import MatchResult, QueryResult, SearchIndex
from .bf import nearest_rows

_MAGIC = b"CBVC"
_VERSION = 1
_MAX_ITERS = 10


# ---------------------------------------------------------------------------
# k-majority clustering
# ---------------------------------------------------------------------------


def _majority_centroid(words: np.ndarray, nbits: int) -> np.ndarray:
    """Per-bit majority vote over packed rows; ties resolve to 0."""
    as_bytes = words.astype("<u8", copy=False).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, count=nbits, bitorder="little")
    majority = (bits.sum(axis=0) * 2 > bits.shape[0]).astype(np.uint8)
    packed = np.packbits(majority, bitorder="little")
    out = np.zeros(words.shape[1], dtype=np.uint64)
    out.view(np.uint8)[: packed.size] = packed
    return out


def _k_majority(
    words: np.ndarray, nbits: int, k: int, rng: np.random.Generator
) -> tuple:
    """Cluster rows into <= k groups; returns (centroids, assignment)."""
    n = words.shape[0]
    k_eff = min(k, n)
    init = rng.choice(n, size=k_eff, replace=False)
    centroids = words[np.sort(init)].copy()
    assignment = np.full(n, -1, dtype=np.int64)
    for _ in range(_MAX_ITERS):
        x = words[:, None, :] ^ centroids[None, :, :]
        d = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
        new_assignment = d.argmin(axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(centroids.shape[0]):
            members = words[assignment == c]
            if len(members):
                centroids[c] = _majority_centroid(members, nbits)
    # drop empty clusters, renumbering assignments densely
    used = np.unique(assignment)
    remap = np.zeros(centroids.shape[0], dtype=np.int64)
    remap[used] = np.arange(len(used))
    return centroids[used], remap[assignment]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    centroid: np.ndarray  # packed uint64 words
    children: list  # node indices; empty for leaves
    word_id: int  # -1 for internal nodes


class Vocabulary:
    """Tree of binary centroids; leaves are visual words with idf weights."""

    def __init__(self, k: int, depth: int, nbits: int, nodes: list, idf: np.ndarray):
        self.k = k
        self.depth = depth
        self.nbits = nbits
        self._nodes = nodes
        self.idf = idf

    @property
    def word_count(self) -> int:
        return len(self.idf)

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    def centroid(self, node_index: int) -> BinaryDescriptor:
        return BinaryDescriptor(self._nodes[node_index].centroid, self.nbits)

    # ---- construction ----

    @classmethod
    def train(
        cls, descriptors: DescriptorArray, k: int, depth: int, seed: int = 0
    ) -> "Vocabulary":
        """Hierarchical k-majority clustering of the training descriptors.

        idf weights follow ln(N / n_w) over the N training descriptors,
        so words seeing every descriptor weigh 0 and rare words weigh most;
        words never reached during training also weigh 0.
        """
        if not isinstance(k, int) or k < 2:
            raise ValueError(f"branching factor k must be an integer >= 2, got {k!r}")
        if not isinstance(depth, int) or depth < 1:
            raise ValueError(f"depth must be an integer >= 1, got {depth!r}")
        n = len(descriptors)
        if n < k:
            raise ValueError(
                f"need at least k={k} training descriptors, got {n}"
            )
        nbits = descriptors.length_bits
        rng = np.random.default_rng(seed)
        words = descriptors.words
        nodes: list = [_Node(np.zeros(words.shape[1], dtype=np.uint64), [], -1)]
        word_counts: list = []

        def build(node_index: int, rows: np.ndarray, level: int) -> None:
            subset = words[rows]
            distinct = np.unique(subset, axis=0).shape[0]
            if level >= depth or len(rows) < k or distinct == 1:
                nodes[node_index].word_id = len(word_counts)
                word_counts.append(len(rows))
                return
            centroids, assignment = _k_majority(subset, nbits, k, rng)
            if centroids.shape[0] == 1:
                nodes[node_index].word_id = len(word_counts)
                word_counts.append(len(rows))
                return
            for c in range(centroids.shape[0]):
                child_index = len(nodes)
                nodes.append(_Node(centroids[c].copy(), [], -1))
                nodes[node_index].children.append(child_index)
                build(child_index, rows[assignment == c], level + 1)

        build(0, np.arange(n, dtype=np.int64), 0)
        counts = np.asarray(word_counts, dtype=np.int64)
        idf = np.zeros(len(counts), dtype=np.float64)
        seen = counts > 0
        idf[seen] = np.log(n / counts[seen])
        return cls(k, depth, nbits, nodes, idf)

    # ---- descent ----

    def word_ids(self, descriptors: DescriptorArray) -> np.ndarray:
        """Greedy root-to-leaf descent for every descriptor."""
        if descriptors.length_bits != self.nbits:
            raise ValueError(
                f"descriptor length {descriptors.length_bits} does not match "
                f"vocabulary width {self.nbits}"
            )
        n = len(descriptors)
        words = descriptors.words
        out = np.full(n, -1, dtype=np.int64)
        stack = [(0, np.arange(n, dtype=np.int64))]
        while stack:
            node_index, rows = stack.pop()
            node = self._nodes[node_index]
            if not node.children:
                out[rows] = node.word_id
                continue
            centroids = np.stack(
                [self._nodes[c].centroid for c in node.children]
            )
            x = words[rows][:, None, :] ^ centroids[None, :, :]
            d = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
            choice = d.argmin(axis=1)  # ties toward the first child
            for c in range(len(node.children)):
                sub = rows[choice == c]
                if len(sub):
                    stack.append((node.children[c], sub))
        return out

    def word_id(self, descriptor: BinaryDescriptor) -> int:
        arr = DescriptorArray.from_descriptors([descriptor])
        return int(self.word_ids(arr)[0])

    # ---- serialization ----

    def to_bytes(self) -> bytes:
        nwords = (self.nbits + 63) // 64
        parts = [
            _MAGIC,
            struct.pack(
                "<IIIIII",
                _VERSION,
                self.k,
                self.depth,
                self.nbits,
                len(self._nodes),
                len(self.idf),
            ),
        ]
        for node in self._nodes:
            parts.append(struct.pack("<ii", node.word_id, len(node.children)))
            parts.append(
                np.asarray(node.children, dtype="<i4").tobytes()
            )
            parts.append(node.centroid.astype("<u8").tobytes())
            assert node.centroid.size == nwords
        parts.append(self.idf.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Vocabulary":
        if blob[:4] != _MAGIC:
            raise ValueError("not a vocabulary file (bad magic bytes)")
        version, k, depth, nbits, node_count, word_count = struct.unpack_from(
            "<IIIIII", blob, 4
        )
        if version != _VERSION:
            raise ValueError(f"unsupported vocabulary version {version}")
        offset = 4 + 24
        nwords = (nbits + 63) // 64
        nodes = []
        for _ in range(node_count):
            word_id, child_count = struct.unpack_from("<ii", blob, offset)
            offset += 8
            children = np.frombuffer(
                blob, dtype="<i4", count=child_count, offset=offset
            ).tolist()
            offset += 4 * child_count
            centroid = np.frombuffer(
                blob, dtype="<u8", count=nwords, offset=offset
            ).astype(np.uint64)
            offset += 8 * nwords
            nodes.append(_Node(centroid, children, word_id))
        idf = np.frombuffer(blob, dtype="<f8", count=word_count, offset=offset).copy()
        offset += 8 * word_count
        if offset != len(blob):
            raise ValueError("vocabulary file has trailing bytes")
        return cls(k, depth, nbits, nodes, idf)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def bow_transform(descriptors: DescriptorArray, vocab: Vocabulary) -> dict:
    """Sparse idf-weighted word histogram, L1-normalized; zero-weight words
    are dropped so the remaining weights always sum to one."""
    ids = vocab.word_ids(descriptors)
    counts = np.bincount(ids, minlength=vocab.word_count)
    raw = counts * vocab.idf
    total = raw.sum()
    if total <= 0:
        return {}
    return {int(w): float(raw[w] / total) for w in np.flatnonzero(raw)}


def l1_similarity(a: dict, b: dict) -> float:
    """1 - 0.5 * sum(|a - b|) over the union of words, for L1-normalized
    vectors; equals the sum of min(a_w, b_w) over shared words."""
    return float(sum(min(w, b[word]) for word, w in a.items() if word in b))


# ---------------------------------------------------------------------------
# the search backend
# ---------------------------------------------------------------------------


class BofIndex(SearchIndex):
    """Vocabulary-tree retrieval with exhaustive top-n verification."""

    def __init__(
        self,
        branching_factor: int = 10,
        depth: int = 3,
        top_n: int = 10,
        retrain_every: int = 50,
        seed: int = 0,
        vocabulary: Optional[Vocabulary] = None,
    ):
        super().__init__()
        if not isinstance(branching_factor, int) or branching_factor < 2:
            raise ValueError(
                f"branching_factor must be an integer >= 2, got {branching_factor!r}"
            )
        if not isinstance(depth, int) or depth < 1:
            raise ValueError(f"depth must be an integer >= 1, got {depth!r}")
        if not isinstance(top_n, int) or top_n < 1:
            raise ValueError(f"top_n must be an integer >= 1, got {top_n!r}")
        if not isinstance(retrain_every, int) or retrain_every < 1:
            raise ValueError(
                f"retrain_every must be an integer >= 1, got {retrain_every!r}"
            )
        self.branching_factor = branching_factor
        self.depth = depth
        self.top_n = top_n
        self.retrain_every = retrain_every
        self.seed = int(seed)
        self._vocab = vocabulary
        self._external_vocab = vocabulary is not None
        self._image_words: list = []  # per image: packed descriptor matrix
        self._bow: list = []  # per image: sparse word -> weight
        self._inverted: dict = {}  # word -> list of (image_idx, weight)
        self._images_since_train = 0

    @property
    def vocabulary(self) -> Optional[Vocabulary]:
        return self._vocab

    def insert(self, image_id: str, descriptors: DescriptorArray) -> None:
        if self._external_vocab and descriptors.length_bits != self._vocab.nbits:
            raise ValueError(
                f"descriptor length {descriptors.length_bits} does not match "
                f"vocabulary width {self._vocab.nbits}"
            )
        image_idx = self._register_image(image_id, descriptors)
        self._image_words.append(descriptors.words)
        if self._vocab is not None:
            # quantize with the current vocabulary right away so the image
            # is searchable before the next retrain
            bow = bow_transform(descriptors, self._vocab)
            self._bow.append(bow)
            for word, weight in bow.items():
                self._inverted.setdefault(word, []).append((image_idx, weight))
        else:
            self._bow.append(None)
        self._images_since_train += 1

    def _needs_training(self) -> bool:
        if self._external_vocab:
            return False
        return self._vocab is None or self._images_since_train >= self.retrain_every

    def _rebuild(self) -> None:
        if not self._external_vocab:
            corpus = DescriptorArray(
                np.vstack(self._image_words), self._nbits
            )
            self._vocab = Vocabulary.train(
                corpus, self.branching_factor, self.depth, self.seed
            )
        self._bow = [
            bow_transform(DescriptorArray(words, self._nbits), self._vocab)
            for words in self._image_words
        ]
        self._inverted = {}
        for image_idx, bow in enumerate(self._bow):
            for word, weight in bow.items():
                self._inverted.setdefault(word, []).append((image_idx, weight))
        self._images_since_train = 0

    def rank_images(self, descriptors: DescriptorArray, top_n: Optional[int] = None) -> list:
        """Pure vocabulary ranking: (image_id, similarity) in descending
        similarity, ties toward the lower image id."""
        self._check_width(descriptors)
        if self.image_count == 0 or len(descriptors) == 0:
            return []
        if self._needs_training():
            self._rebuild()
        query_bow = bow_transform(descriptors, self._vocab)
        scores: dict = {}
        for word, weight in query_bow.items():
            for image_idx, stored_weight in self._inverted.get(word, ()):
                scores[image_idx] = scores.get(image_idx, 0.0) + min(
                    weight, stored_weight
                )
        ranked = sorted(
            ((self._image_ids[i], s) for i, s in scores.items()),
            key=lambda item: (-item[1], item[0]),
        )
        n = self.top_n if top_n is None else top_n
        return ranked[:n]

    def query(
        self, query_image_id: str, descriptors: DescriptorArray, tau: float
    ) -> QueryResult:
        tau = self._check_tau(tau)
        self._check_width(descriptors)
        if self.image_count == 0 or len(descriptors) == 0:
            return QueryResult(query_image_id, (), ())
        shortlist = self.rank_images(descriptors)
        if not shortlist:
            return QueryResult(query_image_id, (), ())
        id_to_idx = {image_id: i for i, image_id in enumerate(self._image_ids)}
        shortlist_idx = sorted(id_to_idx[image_id] for image_id, _ in shortlist)
        db = np.vstack([self._image_words[i] for i in shortlist_idx])
        row_image = np.concatenate(
            [
                np.full(len(self._image_words[i]), i, dtype=np.int64)
                for i in shortlist_idx
            ]
        )
        row_offsets = np.cumsum([0] + [len(self._image_words[i]) for i in shortlist_idx])
        global_start = np.cumsum([0] + [len(w) for w in self._image_words])
        dist, local = nearest_rows(descriptors.words, db)
        matches = []
        matched_imgs = []
        for q in range(len(descriptors)):
            if dist[q] > tau:
                continue
            row = int(local[q])
            image_idx = int(row_image[row])
            pos = np.searchsorted(row_offsets, row, side="right") - 1
            global_row = int(global_start[image_idx] + (row - row_offsets[pos]))
            matches.append(
                MatchResult(
                    query_image_id=query_image_id,
                    query_descriptor_index=q,
                    reference_image_id=self._image_ids[image_idx],
                    reference_descriptor_id=global_row,
                    distance=int(dist[q]),
                )
            )
            matched_imgs.append(image_idx)
        return self._rank_images(
            query_image_id, np.asarray(matched_imgs, dtype=np.int64), matches
        )
