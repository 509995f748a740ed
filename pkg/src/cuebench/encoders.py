"""Cue encoders and augmentation schemas.

Continuous cues (keypoint coordinates, depth, any scalar in [0, 1)) are
quantized into unary thermometer codes: with I intervals the code has I - 1
bits and bit i is set iff c > (i + 1) / I, strictly.  Two such codes then
differ in exactly |steps(c) - steps(c')| bits, so Hamming distance on the
code equals interval distance on the cue.

Selector cues (semantic labels) are one-hot codes of their cardinality;
distinct labels always differ in exactly two bits.

A :class:`CueSchema` stacks the per-cue codes into one augmentation block,
optionally zero-padded to a byte boundary, and appends ``lambda_`` copies of
the block to a base descriptor.  Repetition realizes an integer-weighted
distance: the augmented distance equals the descriptor distance plus
``lambda_`` times the block distance.  With ``lambda_ = 0`` the descriptor
is returned untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np

from .bitvec import BinaryDescriptor, DescriptorArray, _pack_bit_matrix

#: Largest float below 1.0; normalize() clamps to it so results stay encodable.
ONE_BELOW = math.nextafter(1.0, 0.0)


def normalize(value: float, alpha: float = 1.0, beta: float = 0.0) -> float:
    """Affine-map ``value`` by ``alpha * value + beta`` and clamp into [0, 1).

    The upper clamp is the largest representable float below 1.0, so the
    result is always a valid input for :func:`encode_continuous`.
    """
    if not math.isfinite(value):
        raise ValueError(f"cue value must be finite, got {value!r}")
    c = alpha * float(value) + beta
    if not math.isfinite(c):
        raise ValueError(f"normalized cue value is not finite: {c!r}")
    return min(max(c, 0.0), ONE_BELOW)


def _check_intervals(intervals: int, what: str = "intervals") -> None:
    if not isinstance(intervals, (int, np.integer)) or intervals < 2:
        raise ValueError(f"{what} must be an integer >= 2, got {intervals!r}")


def encode_continuous(c: float, intervals: int) -> BinaryDescriptor:
    """Thermometer-encode a normalized value c in [0, 1) into I - 1 bits."""
    _check_intervals(intervals)
    if not math.isfinite(c) or not 0.0 <= c < 1.0:
        raise ValueError(f"continuous cue must lie in [0, 1), got {c!r}")
    bits = np.zeros(intervals - 1, dtype=np.uint8)
    thresholds = np.arange(1, intervals, dtype=np.float64) / intervals
    bits[c > thresholds] = 1
    return BinaryDescriptor.from_bits(bits)


def encode_selector(label: int, cardinality: int) -> BinaryDescriptor:
    """One-hot-encode an integer label into ``cardinality`` bits."""
    _check_intervals(cardinality, "cardinality")
    if not isinstance(label, (int, np.integer)) or not 0 <= label < cardinality:
        raise ValueError(
            f"selector label must be an integer in [0, {cardinality}), got {label!r}"
        )
    bits = np.zeros(cardinality, dtype=np.uint8)
    bits[int(label)] = 1
    return BinaryDescriptor.from_bits(bits)


# ---- cue specifications ----


@dataclass(frozen=True)
class ContinuousCue:
    """A scalar cue quantized by a thermometer code of ``intervals - 1`` bits."""

    name: str
    intervals: int
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        _check_intervals(self.intervals)
        if not self.name:
            raise ValueError("cue name must be non-empty")

    @property
    def bits(self) -> int:
        return self.intervals - 1

    def encode_column(self, values: np.ndarray) -> np.ndarray:
        """Encode a value column into a (n, bits) 0/1 matrix."""
        values = np.asarray(values, dtype=np.float64)
        if not np.isfinite(values).all():
            raise ValueError(f"cue {self.name!r}: values must be finite")
        c = np.clip(self.alpha * values + self.beta, 0.0, ONE_BELOW)
        thresholds = np.arange(1, self.intervals, dtype=np.float64) / self.intervals
        return (c[:, None] > thresholds[None, :]).astype(np.uint8)


@dataclass(frozen=True)
class SelectorCue:
    """A categorical cue one-hot encoded into ``cardinality`` bits."""

    name: str
    cardinality: int

    def __post_init__(self):
        _check_intervals(self.cardinality, "cardinality")
        if not self.name:
            raise ValueError("cue name must be non-empty")

    @property
    def bits(self) -> int:
        return self.cardinality

    def encode_column(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        as_int = values.astype(np.int64)
        if values.dtype.kind == "f" and not np.array_equal(as_int, values):
            raise ValueError(f"cue {self.name!r}: selector values must be integral")
        if as_int.size and (as_int.min() < 0 or as_int.max() >= self.cardinality):
            raise ValueError(
                f"cue {self.name!r}: labels must lie in [0, {self.cardinality})"
            )
        out = np.zeros((len(as_int), self.cardinality), dtype=np.uint8)
        out[np.arange(len(as_int)), as_int] = 1
        return out


CueSpec = Union[ContinuousCue, SelectorCue]


@dataclass(frozen=True)
class CueSchema:
    """An ordered stack of cues plus the repetition weight ``lambda_``."""

    cues: tuple
    lambda_: int = 1
    pad_block_to_byte: bool = True

    def __post_init__(self):
        cues = tuple(self.cues)
        object.__setattr__(self, "cues", cues)
        if not cues:
            raise ValueError("schema needs at least one cue")
        for c in cues:
            if not isinstance(c, (ContinuousCue, SelectorCue)):
                raise ValueError(f"unsupported cue spec: {c!r}")
        names = [c.name for c in cues]
        if len(set(names)) != len(names):
            raise ValueError(f"cue names must be unique, got {names}")
        if not isinstance(self.lambda_, (int, np.integer)) or self.lambda_ < 0:
            raise ValueError(f"lambda must be an integer >= 0, got {self.lambda_!r}")

    # ---- geometry ----

    @property
    def block_bits_raw(self) -> int:
        return sum(c.bits for c in self.cues)

    @property
    def block_bits(self) -> int:
        raw = self.block_bits_raw
        if self.pad_block_to_byte:
            return (raw + 7) // 8 * 8
        return raw

    def augmented_bits(self, base_bits: int) -> int:
        return base_bits + self.lambda_ * self.block_bits

    @property
    def selector_count(self) -> int:
        return sum(1 for c in self.cues if isinstance(c, SelectorCue))

    @property
    def cue_names(self) -> tuple:
        return tuple(c.name for c in self.cues)

    def with_lambda(self, lambda_: int) -> "CueSchema":
        return replace(self, lambda_=lambda_)

    # ---- encoding ----

    def encode_cue_matrix(self, values: np.ndarray) -> DescriptorArray:
        """Encode one row of cue values per descriptor into padded blocks."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.cues):
            raise ValueError(
                f"expected a (n, {len(self.cues)}) cue value matrix, "
                f"got shape {values.shape}"
            )
        cols = [cue.encode_column(values[:, i]) for i, cue in enumerate(self.cues)]
        bits = np.hstack(cols)
        pad = self.block_bits - self.block_bits_raw
        if pad:
            bits = np.hstack([bits, np.zeros((len(bits), pad), dtype=np.uint8)])
        return DescriptorArray(_pack_bit_matrix(bits), self.block_bits)

    def encode_cues(self, values: Sequence[float]) -> BinaryDescriptor:
        """Encode a single cue-value tuple into one augmentation block."""
        arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
        if arr.shape[1] != len(self.cues):
            raise ValueError(
                f"expected {len(self.cues)} cue values, got {arr.shape[1]}"
            )
        return self.encode_cue_matrix(arr)[0]

    def augment(self, d: BinaryDescriptor, values: Sequence[float]) -> BinaryDescriptor:
        """Append ``lambda_`` copies of the cue block to ``d``."""
        if self.lambda_ == 0:
            return d
        block = self.encode_cues(values)
        return d.concat(block.repeat(self.lambda_))

    def augment_array(self, base: DescriptorArray, values: np.ndarray) -> DescriptorArray:
        """Batch form of :meth:`augment` over a packed descriptor array."""
        if self.lambda_ == 0:
            return base
        blocks = self.encode_cue_matrix(values)
        if len(blocks) != len(base):
            raise ValueError(
                f"descriptor count {len(base)} != cue row count {len(blocks)}"
            )
        return base.concat(blocks.tile(self.lambda_))

    # ---- config document ----

    def to_config(self) -> dict:
        cues = []
        for c in self.cues:
            if isinstance(c, ContinuousCue):
                cues.append(
                    {
                        "name": c.name,
                        "kind": "continuous",
                        "intervals": c.intervals,
                        "alpha": c.alpha,
                        "beta": c.beta,
                    }
                )
            else:
                cues.append(
                    {"name": c.name, "kind": "selector", "cardinality": c.cardinality}
                )
        return {
            "cues": cues,
            "lambda": self.lambda_,
            "pad_block_to_byte": self.pad_block_to_byte,
        }

    @classmethod
    def from_config(cls, doc: dict) -> "CueSchema":
        if not isinstance(doc, dict):
            raise ValueError("schema: expected a JSON object")
        raw_cues = doc.get("cues")
        if not isinstance(raw_cues, list) or not raw_cues:
            raise ValueError("cues: expected a non-empty list")
        cues = []
        for i, entry in enumerate(raw_cues):
            path = f"cues[{i}]"
            if not isinstance(entry, dict):
                raise ValueError(f"{path}: expected an object")
            kind = entry.get("kind")
            name = entry.get("name")
            if not isinstance(name, str) or not name:
                raise ValueError(f"{path}.name: expected a non-empty string")
            try:
                if kind == "continuous":
                    intervals = entry.get("intervals")
                    if not isinstance(intervals, int) or intervals < 2:
                        raise ValueError("must be an integer >= 2")
                    cues.append(
                        ContinuousCue(
                            name,
                            intervals,
                            alpha=float(entry.get("alpha", 1.0)),
                            beta=float(entry.get("beta", 0.0)),
                        )
                    )
                elif kind == "selector":
                    cardinality = entry.get("cardinality")
                    if not isinstance(cardinality, int) or cardinality < 2:
                        raise ValueError("must be an integer >= 2")
                    cues.append(SelectorCue(name, cardinality))
                else:
                    raise ValueError(
                        f"{path}.kind: expected 'continuous' or 'selector', got {kind!r}"
                    )
            except ValueError as exc:
                msg = str(exc)
                if not msg.startswith("cues["):
                    field_name = "intervals" if kind == "continuous" else "cardinality"
                    msg = f"{path}.{field_name}: {msg}"
                raise ValueError(msg) from None
        lam = doc.get("lambda", 1)
        if not isinstance(lam, int) or lam < 0:
            raise ValueError(f"lambda: must be an integer >= 0, got {lam!r}")
        pad = doc.get("pad_block_to_byte", True)
        if not isinstance(pad, bool):
            raise ValueError("pad_block_to_byte: must be a boolean")
        return cls(cues=tuple(cues), lambda_=lam, pad_block_to_byte=pad)

    def to_json(self) -> str:
        return json.dumps(self.to_config(), sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "CueSchema":
        return cls.from_config(json.loads(blob))


def keypoint_schema(
    width: int,
    height: int,
    u_intervals: int = 8,
    v_intervals: int = 8,
    lambda_: int = 1,
    pad_block_to_byte: bool = True,
) -> CueSchema:
    """Schema for raw pixel keypoint coordinates on a width x height image."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    return CueSchema(
        cues=(
            ContinuousCue("u", u_intervals, alpha=1.0 / width),
            ContinuousCue("v", v_intervals, alpha=1.0 / height),
        ),
        lambda_=lambda_,
        pad_block_to_byte=pad_block_to_byte,
    )


class CoordinateLUT:
    """Precomputed augmentation blocks for every integer pixel coordinate.

    Pixel encodings only change when a coordinate crosses an interval
    threshold, so the table factorizes into a per-axis cell index plus one
    block per (u-cell, v-cell) pair; lookups stay O(1) and cover all
    width x height pixels.
    """

    def __init__(self, width: int, height: int, schema: CueSchema):
        if width < 1 or height < 1:
            raise ValueError("image dimensions must be positive")
        if len(schema.cues) != 2 or not all(
            isinstance(c, ContinuousCue) for c in schema.cues
        ):
            raise ValueError(
                "coordinate LUT needs a schema of exactly two continuous cues (u, v)"
            )
        self.width = int(width)
        self.height = int(height)
        self.schema = schema
        u_cue, v_cue = schema.cues
        self._u_cell = self._axis_cells(np.arange(width, dtype=np.float64), u_cue)
        self._v_cell = self._axis_cells(np.arange(height, dtype=np.float64), v_cue)
        n_u = int(self._u_cell.max()) + 1
        n_v = int(self._v_cell.max()) + 1
        pairs = np.column_stack(
            [
                np.repeat(np.arange(n_u), n_v),
                np.tile(np.arange(n_v), n_u),
            ]
        )
        # representative raw coordinates mapping back into each cell pair
        rep_u = np.array(
            [np.flatnonzero(self._u_cell == cu)[0] for cu in range(n_u)],
            dtype=np.float64,
        )
        rep_v = np.array(
            [np.flatnonzero(self._v_cell == cv)[0] for cv in range(n_v)],
            dtype=np.float64,
        )
        values = np.column_stack([rep_u[pairs[:, 0]], rep_v[pairs[:, 1]]])
        self._blocks = schema.encode_cue_matrix(values)
        self._n_v = n_v

    @staticmethod
    def _axis_cells(coords: np.ndarray, cue: ContinuousCue) -> np.ndarray:
        c = np.clip(cue.alpha * coords + cue.beta, 0.0, ONE_BELOW)
        thresholds = np.arange(1, cue.intervals, dtype=np.float64) / cue.intervals
        return (c[:, None] > thresholds[None, :]).sum(axis=1)

    @property
    def size(self) -> int:
        """Number of pixels the table covers."""
        return self.width * self.height

    def lookup(self, u: int, v: int) -> BinaryDescriptor:
        """Augmentation block for integer pixel (u, v)."""
        if not 0 <= u < self.width or not 0 <= v < self.height:
            raise ValueError(
                f"pixel ({u}, {v}) outside image {self.width}x{self.height}"
            )
        idx = int(self._u_cell[u]) * self._n_v + int(self._v_cell[v])
        return self._blocks[idx]
