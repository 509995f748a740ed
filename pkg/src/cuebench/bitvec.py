"""Packed binary descriptors and Hamming-space primitives.

Bit layout convention, used consistently for in-memory words and serialized
bytes: bit i of a descriptor lives in storage unit i // width at position
i % width, least significant bit first.  In memory descriptors are packed
into 64-bit words; on disk into bytes.  All storage bits at positions at or
above ``length_bits`` are kept at zero (canonical form), so word-level
popcounts never need masking and concatenation distances stay exact.

Serialized form of a single descriptor: a little-endian u32 holding
``length_bits`` followed by ceil(length_bits / 8) payload bytes.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator, Sequence

import numpy as np

WORD_BITS = 64


def _words_needed(nbits: int) -> int:
    return (nbits + WORD_BITS - 1) // WORD_BITS


def _pack_bit_matrix(bits: np.ndarray) -> np.ndarray:
    """Pack a (count, nbits) 0/1 matrix into (count, nwords) uint64 words."""
    if bits.ndim != 2:
        raise ValueError("expected a 2-d bit matrix")
    count, nbits = bits.shape
    nwords = _words_needed(nbits)
    if nbits == 0:
        return np.zeros((count, 0), dtype=np.uint64)
    packed = np.packbits(bits.astype(np.uint8, copy=False), axis=1, bitorder="little")
    buf = np.zeros((count, nwords * 8), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    return buf.view("<u8").astype(np.uint64, copy=False)


def _unpack_bit_matrix(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of :func:`_pack_bit_matrix`; returns a (count, nbits) uint8 matrix."""
    count = words.shape[0]
    if nbits == 0:
        return np.zeros((count, 0), dtype=np.uint8)
    as_bytes = np.ascontiguousarray(words).astype("<u8", copy=False).view(np.uint8)
    as_bytes = as_bytes.reshape(count, -1)
    return np.unpackbits(as_bytes, axis=1, count=nbits, bitorder="little")


def _validate_bits_01(bits: np.ndarray) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bit values must be 0 or 1")
    return arr.astype(np.uint8, copy=False)


class BinaryDescriptor:
    """An immutable fixed-length bit string packed into 64-bit words."""

    __slots__ = ("_words", "_nbits")

    def __init__(self, words: np.ndarray, length_bits: int):
        words = np.asarray(words, dtype=np.uint64)
        if words.ndim != 1:
            raise ValueError("words must be a 1-d uint64 array")
        if length_bits < 0:
            raise ValueError("length_bits must be non-negative")
        if words.shape[0] != _words_needed(length_bits):
            raise ValueError(
                f"expected {_words_needed(length_bits)} words for "
                f"{length_bits} bits, got {words.shape[0]}"
            )
        tail = length_bits % WORD_BITS
        if length_bits and tail:
            mask = np.uint64((1 << tail) - 1)
            if int(words[-1]) & ~int(mask) & ((1 << WORD_BITS) - 1):
                raise ValueError("storage bits above length_bits must be zero")
        self._words = words
        self._words.setflags(write=False)
        self._nbits = int(length_bits)

    # ---- constructors ----

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BinaryDescriptor":
        arr = _validate_bits_01(np.fromiter(bits, dtype=np.int64) if not isinstance(bits, np.ndarray) else bits)
        arr = arr.reshape(1, -1)
        return cls(_pack_bit_matrix(arr)[0], arr.shape[1])

    @classmethod
    def zeros(cls, length_bits: int) -> "BinaryDescriptor":
        return cls(np.zeros(_words_needed(length_bits), dtype=np.uint64), length_bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BinaryDescriptor":
        if len(data) < 4:
            raise ValueError("descriptor blob shorter than its 4-byte header")
        nbits = struct.unpack_from("<I", data)[0]
        nbytes = (nbits + 7) // 8
        if len(data) != 4 + nbytes:
            raise ValueError(
                f"descriptor payload must be {nbytes} bytes for {nbits} bits, "
                f"got {len(data) - 4}"
            )
        payload = np.frombuffer(data, dtype=np.uint8, offset=4)
        if nbits % 8:
            stray = int(payload[-1]) & ~((1 << (nbits % 8)) - 1)
            if stray:
                raise ValueError("padding bits above length_bits are not zero")
        buf = np.zeros(_words_needed(nbits) * 8, dtype=np.uint8)
        buf[:nbytes] = payload
        words = buf.view("<u8").astype(np.uint64, copy=False)
        return cls(words, nbits)

    # ---- accessors ----

    @property
    def length_bits(self) -> int:
        return self._nbits

    @property
    def words(self) -> np.ndarray:
        return self._words

    def __len__(self) -> int:
        return self._nbits

    def bit(self, index: int) -> int:
        if not 0 <= index < self._nbits:
            raise IndexError(f"bit index {index} out of range for {self._nbits} bits")
        word = int(self._words[index // WORD_BITS])
        return (word >> (index % WORD_BITS)) & 1

    def __getitem__(self, index: int) -> int:
        return self.bit(index)

    def to_bits(self) -> np.ndarray:
        return _unpack_bit_matrix(self._words.reshape(1, -1), self._nbits)[0]

    def popcount(self) -> int:
        return int(np.bitwise_count(self._words).sum())

    # ---- operations ----

    def hamming(self, other: "BinaryDescriptor") -> int:
        if self._nbits != other._nbits:
            raise ValueError(
                f"length mismatch: {self._nbits} vs {other._nbits} bits"
            )
        return int(np.bitwise_count(self._words ^ other._words).sum())

    def concat(self, other: "BinaryDescriptor") -> "BinaryDescriptor":
        a = DescriptorArray(self._words.reshape(1, -1), self._nbits)
        b = DescriptorArray(other._words.reshape(1, -1), other._nbits)
        joined = a.concat(b)
        return joined[0]

    def repeat(self, times: int) -> "BinaryDescriptor":
        arr = DescriptorArray(self._words.reshape(1, -1), self._nbits)
        return arr.tile(times)[0]

    def to_bytes(self) -> bytes:
        payload = self._words.astype("<u8").view(np.uint8)[: (self._nbits + 7) // 8]
        return struct.pack("<I", self._nbits) + payload.tobytes()

    # ---- value semantics ----

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryDescriptor):
            return NotImplemented
        return self._nbits == other._nbits and np.array_equal(self._words, other._words)

    def __hash__(self) -> int:
        return hash((self._nbits, self._words.tobytes()))

    def __repr__(self) -> str:
        preview = "".join(str(b) for b in self.to_bits()[:16])
        if self._nbits > 16:
            preview += "..."
        return f"BinaryDescriptor(length_bits={self._nbits}, bits={preview})"


class DescriptorArray:
    """A batch of equal-length descriptors packed as a (count, nwords) matrix.

    This is the workhorse container: search indexes and the augmentation
    pipeline operate on whole arrays so the hot loops stay inside numpy.
    """

    __slots__ = ("_words", "_nbits")

    def __init__(self, words: np.ndarray, length_bits: int):
        words = np.asarray(words, dtype=np.uint64)
        if words.ndim != 2:
            raise ValueError("words must be a 2-d uint64 array")
        if words.shape[1] != _words_needed(length_bits):
            raise ValueError(
                f"expected {_words_needed(length_bits)} word columns for "
                f"{length_bits} bits, got {words.shape[1]}"
            )
        self._words = words
        self._nbits = int(length_bits)

    # ---- constructors ----

    @classmethod
    def from_bit_matrix(cls, bits: np.ndarray) -> "DescriptorArray":
        bits = _validate_bits_01(np.asarray(bits))
        if bits.ndim != 2:
            raise ValueError("expected a 2-d bit matrix")
        return cls(_pack_bit_matrix(bits), bits.shape[1])

    @classmethod
    def from_descriptors(cls, items: Sequence[BinaryDescriptor]) -> "DescriptorArray":
        items = list(items)
        if not items:
            raise ValueError("cannot build an array from zero descriptors")
        nbits = items[0].length_bits
        for d in items:
            if d.length_bits != nbits:
                raise ValueError("descriptors must share one length")
        words = np.vstack([d.words for d in items])
        return cls(words, nbits)

    @classmethod
    def zeros(cls, count: int, length_bits: int) -> "DescriptorArray":
        return cls(np.zeros((count, _words_needed(length_bits)), dtype=np.uint64), length_bits)

    # ---- accessors ----

    @property
    def length_bits(self) -> int:
        return self._nbits

    @property
    def words(self) -> np.ndarray:
        return self._words

    def __len__(self) -> int:
        return self._words.shape[0]

    def __getitem__(self, index: int) -> BinaryDescriptor:
        return BinaryDescriptor(self._words[index].copy(), self._nbits)

    def __iter__(self) -> Iterator[BinaryDescriptor]:
        for i in range(len(self)):
            yield self[i]

    def to_bit_matrix(self) -> np.ndarray:
        return _unpack_bit_matrix(self._words, self._nbits)

    def subset(self, indices: np.ndarray) -> "DescriptorArray":
        return DescriptorArray(self._words[np.asarray(indices)], self._nbits)

    # ---- operations ----

    def concat(self, other: "DescriptorArray") -> "DescriptorArray":
        if len(self) != len(other):
            raise ValueError(f"row count mismatch: {len(self)} vs {len(other)}")
        if other._nbits == 0:
            return DescriptorArray(self._words, self._nbits)
        if self._nbits == 0:
            return DescriptorArray(other._words, other._nbits)
        total = self._nbits + other._nbits
        if self._nbits % WORD_BITS == 0:
            # left side ends on a word boundary: plain column stack
            return DescriptorArray(np.hstack([self._words, other._words]), total)
        bits = np.hstack([self.to_bit_matrix(), other.to_bit_matrix()])
        return DescriptorArray(_pack_bit_matrix(bits), total)

    def tile(self, times: int) -> "DescriptorArray":
        if times < 0:
            raise ValueError("repeat count must be non-negative")
        if times == 0 or self._nbits == 0:
            return DescriptorArray(
                np.zeros((len(self), 0), dtype=np.uint64), 0
            )
        if times == 1:
            return DescriptorArray(self._words, self._nbits)
        if self._nbits % WORD_BITS == 0:
            return DescriptorArray(np.tile(self._words, (1, times)), self._nbits * times)
        bits = np.tile(self.to_bit_matrix(), (1, times))
        return DescriptorArray(_pack_bit_matrix(bits), self._nbits * times)


# ---- module-level convenience forms ----


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    """Hamming distance between two equal-length descriptors."""
    return a.hamming(b)


def concat(a: BinaryDescriptor, b: BinaryDescriptor) -> BinaryDescriptor:
    """Bit-level concatenation; distances add across the seam exactly."""
    return a.concat(b)


def repeat(d: BinaryDescriptor, times: int) -> BinaryDescriptor:
    """Concatenate ``times`` copies of ``d``; zero copies gives the empty string."""
    return d.repeat(times)


def pairwise_hamming(a: DescriptorArray, b: DescriptorArray) -> np.ndarray:
    """Dense (len(a), len(b)) distance matrix.  Intended for small sets."""
    if a.length_bits != b.length_bits:
        raise ValueError(
            f"length mismatch: {a.length_bits} vs {b.length_bits} bits"
        )
    if a.length_bits == 0:
        return np.zeros((len(a), len(b)), dtype=np.int64)
    x = a.words[:, None, :] ^ b.words[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64)


def hamming_rows(a: DescriptorArray, b: DescriptorArray) -> np.ndarray:
    """Row-paired distances between two arrays of equal shape."""
    if a.length_bits != b.length_bits:
        raise ValueError(
            f"length mismatch: {a.length_bits} vs {b.length_bits} bits"
        )
    if len(a) != len(b):
        raise ValueError(f"row count mismatch: {len(a)} vs {len(b)}")
    if a.length_bits == 0:
        return np.zeros(len(a), dtype=np.int64)
    return np.bitwise_count(a.words ^ b.words).sum(axis=1, dtype=np.int64)
