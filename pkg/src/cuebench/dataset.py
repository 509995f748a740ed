"""Dataset model, file formats, and the synthetic benchmark generator.

A dataset is a set of images, each carrying equal-length binary descriptors
plus one row of raw cue values per descriptor, and a ground-truth relation
mapping query images to the reference images showing the same place.

On disk a dataset is a directory:

- ``manifest.json`` — image table (id, role, file paths, checksums) plus the
  cue column names/kinds and the ground-truth file name.
- one ``.bdsc`` file per image — binary: magic ``BDSC``, u32 version,
  u32 descriptor count, u32 bits per descriptor, then one packed
  little-endian payload of ceil(bits/8) bytes per descriptor (bit i lives in
  byte i//8 at position i%8, exactly the in-memory packing).
- one ``.csv`` file per image — header of cue names, one row per descriptor;
  continuous cues as decimals, selector cues as integers.
- ``ground_truth.csv`` — header ``query_id,relevant_id``, one row per
  relevant pair; a row with an empty relevant id declares a query with no
  true match.

The synthetic generator builds place-revisit benchmarks: every place gets a
canonical descriptor set (appearance bits, keypoint positions, labels), and
every revisit re-observes it through noise — independent bit flips,
truncated Gaussian keypoint displacement, label swaps.  Optionally several
places form lookalike groups sharing descriptor appearance verbatim while
keeping their own keypoint layouts, and keypoint layouts can be
concentrated into a few grid cells; both knobs control how much cue
augmentation can help telling places apart.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import re
from dataclasses import dataclass, fields

import numpy as np

from .bitvec import DescriptorArray

_BDSC_MAGIC = b"BDSC"
_BDSC_VERSION = 1
_MANIFEST_FORMAT = "cuebench-dataset"
_MANIFEST_VERSION = 1

ROLE_QUERY = "query"
ROLE_REFERENCE = "reference"
CUE_CONTINUOUS = "continuous"
CUE_SELECTOR = "selector"


# ---------------------------------------------------------------------------
# in-memory model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageRecord:
    """One image: its descriptors, their raw cue rows, and a nominal role."""

    image_id: str
    role: str
    descriptors: DescriptorArray
    cue_values: np.ndarray  # (descriptor_count, cue_arity) float64
    cue_names: tuple
    cue_kinds: tuple

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.role not in (ROLE_QUERY, ROLE_REFERENCE):
            raise ValueError(
                f"role must be {ROLE_QUERY!r} or {ROLE_REFERENCE!r}, got {self.role!r}"
            )
        if not isinstance(self.descriptors, DescriptorArray):
            raise ValueError("descriptors must be a DescriptorArray")
        values = np.asarray(self.cue_values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("cue_values must be a 2-d array")
        object.__setattr__(self, "cue_values", values)
        if len(self.cue_names) != len(self.cue_kinds):
            raise ValueError("cue_names and cue_kinds must have equal length")
        if values.shape != (len(self.descriptors), len(self.cue_names)):
            raise ValueError(
                f"cue_values shape {values.shape} does not match "
                f"{len(self.descriptors)} descriptors x {len(self.cue_names)} cues"
            )
        for kind in self.cue_kinds:
            if kind not in (CUE_CONTINUOUS, CUE_SELECTOR):
                raise ValueError(f"unknown cue kind {kind!r}")

    @property
    def descriptor_count(self) -> int:
        return len(self.descriptors)

    def cue_column(self, name: str) -> np.ndarray:
        try:
            index = self.cue_names.index(name)
        except ValueError:
            raise KeyError(
                f"image {self.image_id!r} has no cue column {name!r}; "
                f"available: {list(self.cue_names)}"
            ) from None
        return self.cue_values[:, index]


@dataclass(frozen=True)
class GroundTruth:
    """Which reference images are correct answers for each query image."""

    relevant: dict  # query image_id -> frozenset of image ids

    def __post_init__(self):
        frozen = {q: frozenset(r) for q, r in self.relevant.items()}
        object.__setattr__(self, "relevant", frozen)
        for q, rel in frozen.items():
            if q in rel:
                raise ValueError(f"query {q!r} lists itself as relevant")

    def for_query(self, query_image_id: str) -> frozenset:
        return self.relevant.get(query_image_id, frozenset())

    @property
    def query_ids(self) -> tuple:
        return tuple(sorted(self.relevant))

    def validate_ids(self, known_ids) -> None:
        known = set(known_ids)
        for q, rel in self.relevant.items():
            if q not in known:
                raise ValueError(f"ground truth references unknown query id {q!r}")
            for r in rel:
                if r not in known:
                    raise ValueError(
                        f"ground truth for {q!r} references unknown image id {r!r}"
                    )


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the seeded place-revisit generator."""

    seed: int = 0
    place_count: int = 20
    revisits_per_place: int = 3
    descriptors_per_image: int = 50
    descriptor_bits: int = 256
    bit_flip_probability: float = 0.05
    keypoint_noise_sigma: float = 5.0
    image_width: int = 640
    image_height: int = 480
    label_count: int = 12
    label_flip_probability: float = 0.05
    distractor_image_count: int = 0
    # layout knobs: lookalike groups share descriptor appearance verbatim
    # (their keypoint layouts and labels stay independent); hotspots pull a
    # fraction of each place's keypoints into a few grid cells
    lookalike_group_size: int = 1
    layout_hotspot_fraction: float = 0.0
    layout_hotspot_cells: int = 1
    layout_grid: int = 8

    def __post_init__(self):
        positive = (
            "place_count",
            "revisits_per_place",
            "descriptors_per_image",
            "descriptor_bits",
            "image_width",
            "image_height",
            "label_count",
            "lookalike_group_size",
            "layout_hotspot_cells",
            "layout_grid",
        )
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.distractor_image_count, int) or self.distractor_image_count < 0:
            raise ValueError(
                f"distractor_image_count must be a non-negative integer, "
                f"got {self.distractor_image_count!r}"
            )
        if not 0.0 <= self.bit_flip_probability <= 0.5:
            raise ValueError(
                f"bit_flip_probability must be in [0, 0.5], "
                f"got {self.bit_flip_probability!r}"
            )
        for name in ("label_flip_probability", "layout_hotspot_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value!r}")
        if not self.keypoint_noise_sigma >= 0.0:
            raise ValueError(
                f"keypoint_noise_sigma must be >= 0, got {self.keypoint_noise_sigma!r}"
            )
        if self.layout_hotspot_cells > self.layout_grid**2:
            raise ValueError(
                "layout_hotspot_cells cannot exceed layout_grid**2 "
                f"({self.layout_hotspot_cells} > {self.layout_grid**2})"
            )

    def to_config(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_config(cls, data: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synthetic config fields: {sorted(unknown)}")
        return cls(**data)


CUE_NAMES = ("u", "v", "label")
CUE_KINDS = (CUE_CONTINUOUS, CUE_CONTINUOUS, CUE_SELECTOR)


def _canonical_layout(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Keypoint positions for one place: a hotspot/uniform mixture."""
    n = cfg.descriptors_per_image
    hot = int(round(cfg.layout_hotspot_fraction * n))
    grid = cfg.layout_grid
    cell_w = cfg.image_width / grid
    cell_h = cfg.image_height / grid
    positions = np.empty((n, 2), dtype=np.float64)
    cells = rng.choice(grid * grid, size=cfg.layout_hotspot_cells, replace=False)
    if hot:
        which = rng.integers(0, cfg.layout_hotspot_cells, size=hot)
        cx = cells[which] % grid
        cy = cells[which] // grid
        positions[:hot, 0] = (cx + rng.random(hot)) * cell_w
        positions[:hot, 1] = (cy + rng.random(hot)) * cell_h
    positions[hot:, 0] = rng.random(n - hot) * cfg.image_width
    positions[hot:, 1] = rng.random(n - hot) * cfg.image_height
    return positions


def _clamp_positions(cfg: SyntheticConfig, positions: np.ndarray) -> np.ndarray:
    limit_x = np.nextafter(float(cfg.image_width), 0.0)
    limit_y = np.nextafter(float(cfg.image_height), 0.0)
    out = positions.copy()
    out[:, 0] = np.clip(out[:, 0], 0.0, limit_x)
    out[:, 1] = np.clip(out[:, 1], 0.0, limit_y)
    return out


def generate_synthetic(cfg: SyntheticConfig) -> tuple:
    """Seeded place-revisit benchmark: (list of ImageRecord, GroundTruth).

    Revisit 0 of each place is the reference view; later revisits are
    queries.  Distractor images are extra references resembling no place.
    Every query's relevant set holds all other images of its place, so the
    relation is symmetric between two queries of the same place.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.descriptors_per_image
    bits = cfg.descriptor_bits

    group_count = math.ceil(cfg.place_count / cfg.lookalike_group_size)
    group_bits = [
        rng.integers(0, 2, size=(n, bits), dtype=np.uint8) for _ in range(group_count)
    ]
    place_bits = [group_bits[p // cfg.lookalike_group_size] for p in range(cfg.place_count)]
    place_layout = [_canonical_layout(cfg, rng) for _ in range(cfg.place_count)]
    place_labels = [
        rng.integers(0, cfg.label_count, size=n) for _ in range(cfg.place_count)
    ]

    def observe(place: int) -> tuple:
        flips = rng.random((n, bits)) < cfg.bit_flip_probability
        observed_bits = np.where(flips, 1 - place_bits[place], place_bits[place])
        noise = rng.normal(0.0, 1.0, size=(n, 2)) * cfg.keypoint_noise_sigma
        positions = _clamp_positions(cfg, place_layout[place] + noise)
        labels = place_labels[place].copy()
        if cfg.label_count > 1:
            flip_mask = rng.random(n) < cfg.label_flip_probability
            offsets = rng.integers(1, cfg.label_count, size=n)
            labels[flip_mask] = (labels[flip_mask] + offsets[flip_mask]) % cfg.label_count
        else:
            rng.random(n)  # keep the stream layout stable
            rng.integers(1, 2, size=n)
        return observed_bits.astype(np.uint8), positions, labels

    def record(image_id: str, role: str, observed) -> ImageRecord:
        observed_bits, positions, labels = observed
        cue_values = np.column_stack(
            [positions[:, 0], positions[:, 1], labels.astype(np.float64)]
        )
        return ImageRecord(
            image_id=image_id,
            role=role,
            descriptors=DescriptorArray.from_bit_matrix(observed_bits),
            cue_values=cue_values,
            cue_names=CUE_NAMES,
            cue_kinds=CUE_KINDS,
        )

    place_ids = [
        [f"p{place:04d}_r{rev:02d}" for rev in range(cfg.revisits_per_place)]
        for place in range(cfg.place_count)
    ]
    images = []
    # revisit 0 (references) for every place, in place order
    for place in range(cfg.place_count):
        images.append(record(place_ids[place][0], ROLE_REFERENCE, observe(place)))
    # distractors: pure noise references
    for k in range(cfg.distractor_image_count):
        observed_bits = rng.integers(0, 2, size=(n, bits), dtype=np.uint8)
        positions = np.column_stack(
            [rng.random(n) * cfg.image_width, rng.random(n) * cfg.image_height]
        )
        labels = rng.integers(0, cfg.label_count, size=n)
        images.append(
            record(f"dst{k:04d}", ROLE_REFERENCE, (observed_bits, positions, labels))
        )
    # later revisits (queries), revisit-major so places interleave
    for rev in range(1, cfg.revisits_per_place):
        for place in range(cfg.place_count):
            images.append(record(place_ids[place][rev], ROLE_QUERY, observe(place)))

    relevant = {}
    for place in range(cfg.place_count):
        ids = place_ids[place]
        for rev in range(1, cfg.revisits_per_place):
            relevant[ids[rev]] = frozenset(other for other in ids if other != ids[rev])
    return images, GroundTruth(relevant)


# ---------------------------------------------------------------------------
# descriptor file format
# ---------------------------------------------------------------------------


def descriptors_to_bytes(descriptors: DescriptorArray) -> bytes:
    count = len(descriptors)
    bits = descriptors.length_bits
    bytes_per = (bits + 7) // 8
    as_bytes = descriptors.words.astype("<u8", copy=False).view(np.uint8)
    payload = as_bytes[:, :bytes_per].tobytes() if count else b""
    header = _BDSC_MAGIC + struct.pack("<III", _BDSC_VERSION, count, bits)
    return header + payload


def descriptors_from_bytes(blob: bytes, source: str = "descriptor data") -> DescriptorArray:
    if blob[:4] != _BDSC_MAGIC:
        raise ValueError(f"{source}: bad magic bytes, not a descriptor file")
    if len(blob) < 16:
        raise ValueError(f"{source}: truncated header")
    version, count, bits = struct.unpack_from("<III", blob, 4)
    if version != _BDSC_VERSION:
        raise ValueError(f"{source}: unsupported descriptor file version {version}")
    if bits < 1:
        raise ValueError(f"{source}: bits per descriptor must be >= 1, got {bits}")
    bytes_per = (bits + 7) // 8
    expected = 16 + count * bytes_per
    if len(blob) != expected:
        raise ValueError(
            f"{source}: payload size mismatch, expected {expected} bytes, "
            f"got {len(blob)}"
        )
    nwords = (bits + 63) // 64
    raw = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(count, bytes_per)
    tail = bits % 8
    if tail and count and np.any(raw[:, -1] >> tail):
        raise ValueError(f"{source}: padding bits beyond {bits} must be zero")
    padded = np.zeros((count, nwords * 8), dtype=np.uint8)
    padded[:, :bytes_per] = raw
    words = padded.view("<u8").astype(np.uint64)
    return DescriptorArray(words, bits)


def write_descriptor_file(path, descriptors: DescriptorArray) -> None:
    with open(path, "wb") as fh:
        fh.write(descriptors_to_bytes(descriptors))


def read_descriptor_file(path) -> DescriptorArray:
    with open(path, "rb") as fh:
        return descriptors_from_bytes(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# cue and ground-truth CSV formats
# ---------------------------------------------------------------------------


def _format_cue(value: float, kind: str) -> str:
    if kind == CUE_SELECTOR:
        as_int = int(value)
        if as_int != value:
            raise ValueError(f"selector cue value {value!r} is not an integer")
        return str(as_int)
    return repr(float(value))


def cues_to_csv(cue_values: np.ndarray, cue_names, cue_kinds) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(cue_names)
    for row in np.asarray(cue_values, dtype=np.float64):
        writer.writerow(
            [_format_cue(v, kind) for v, kind in zip(row, cue_kinds)]
        )
    return out.getvalue()


def cues_from_csv(text: str, cue_names, source: str = "cue data") -> np.ndarray:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ValueError(f"{source}: missing header row")
    if tuple(rows[0]) != tuple(cue_names):
        raise ValueError(
            f"{source}: cue header {rows[0]} does not match manifest "
            f"cue names {list(cue_names)}"
        )
    arity = len(cue_names)
    values = np.empty((len(rows) - 1, arity), dtype=np.float64)
    for i, row in enumerate(rows[1:]):
        if len(row) != arity:
            raise ValueError(
                f"{source}: row {i + 2} has {len(row)} fields, expected {arity}"
            )
        try:
            values[i] = [float(v) for v in row]
        except ValueError:
            raise ValueError(f"{source}: row {i + 2} has a non-numeric field") from None
    return values


def ground_truth_to_csv(gt: GroundTruth) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["query_id", "relevant_id"])
    for query_id in sorted(gt.relevant):
        rel = sorted(gt.relevant[query_id])
        if not rel:
            writer.writerow([query_id, ""])
        for r in rel:
            writer.writerow([query_id, r])
    return out.getvalue()


def ground_truth_from_csv(text: str, source: str = "ground truth") -> GroundTruth:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != ["query_id", "relevant_id"]:
        raise ValueError(f"{source}: expected header 'query_id,relevant_id'")
    relevant: dict = {}
    for i, row in enumerate(rows[1:]):
        if len(row) != 2:
            raise ValueError(f"{source}: row {i + 2} must have exactly 2 fields")
        query_id, relevant_id = row
        if not query_id:
            raise ValueError(f"{source}: row {i + 2} has an empty query id")
        bucket = relevant.setdefault(query_id, set())
        if relevant_id:
            bucket.add(relevant_id)
    return GroundTruth(relevant)


# ---------------------------------------------------------------------------
# dataset directory save/load
# ---------------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_dataset(out_dir, images, gt: GroundTruth) -> str:
    """Write the dataset directory; returns the manifest path."""
    if not images:
        raise ValueError("cannot save a dataset with no images")
    cue_names = images[0].cue_names
    cue_kinds = images[0].cue_kinds
    ids = set()
    for image in images:
        if not re.fullmatch(r"[A-Za-z0-9._-]+", image.image_id):
            raise ValueError(
                f"image id {image.image_id!r} is not filename-safe "
                f"(allowed: letters, digits, . _ -)"
            )
        if image.image_id in ids:
            raise ValueError(f"duplicate image id {image.image_id!r}")
        ids.add(image.image_id)
        if image.cue_names != cue_names or image.cue_kinds != cue_kinds:
            raise ValueError(
                f"image {image.image_id!r} disagrees on cue columns"
            )
    gt.validate_ids(ids)

    os.makedirs(out_dir, exist_ok=True)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    entries = []
    for image in images:
        desc_rel = os.path.join("images", f"{image.image_id}.bdsc")
        cue_rel = os.path.join("images", f"{image.image_id}.csv")
        desc_blob = descriptors_to_bytes(image.descriptors)
        cue_blob = cues_to_csv(image.cue_values, cue_names, cue_kinds).encode()
        with open(os.path.join(out_dir, desc_rel), "wb") as fh:
            fh.write(desc_blob)
        with open(os.path.join(out_dir, cue_rel), "wb") as fh:
            fh.write(cue_blob)
        entries.append(
            {
                "image_id": image.image_id,
                "role": image.role,
                "descriptor_file": desc_rel,
                "cue_file": cue_rel,
                "descriptor_count": image.descriptor_count,
                "descriptor_bits": image.descriptors.length_bits,
                "cue_arity": len(cue_names),
                "sha256_descriptors": _sha256(desc_blob),
                "sha256_cues": _sha256(cue_blob),
            }
        )
    gt_blob = ground_truth_to_csv(gt).encode()
    with open(os.path.join(out_dir, "ground_truth.csv"), "wb") as fh:
        fh.write(gt_blob)
    manifest = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "cue_names": list(cue_names),
        "cue_kinds": list(cue_kinds),
        "ground_truth_file": "ground_truth.csv",
        "sha256_ground_truth": _sha256(gt_blob),
        "images": entries,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_dataset(manifest_path) -> tuple:
    """Read a dataset directory back: (list of ImageRecord, GroundTruth).

    Any missing file, checksum mismatch, malformed record, or dangling
    ground-truth id fails the whole load.
    """
    with open(manifest_path, "r") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _MANIFEST_FORMAT:
        raise ValueError(f"{manifest_path}: not a dataset manifest")
    if manifest.get("version") != _MANIFEST_VERSION:
        raise ValueError(
            f"{manifest_path}: unsupported manifest version {manifest.get('version')!r}"
        )
    base = os.path.dirname(os.path.abspath(manifest_path))
    cue_names = tuple(manifest["cue_names"])
    cue_kinds = tuple(manifest["cue_kinds"])
    images = []
    bits_seen = None
    for entry in manifest["images"]:
        image_id = entry["image_id"]
        desc_path = os.path.join(base, entry["descriptor_file"])
        cue_path = os.path.join(base, entry["cue_file"])
        if not os.path.exists(desc_path):
            raise FileNotFoundError(f"missing descriptor file {desc_path}")
        if not os.path.exists(cue_path):
            raise FileNotFoundError(f"missing cue file {cue_path}")
        with open(desc_path, "rb") as fh:
            desc_blob = fh.read()
        with open(cue_path, "rb") as fh:
            cue_blob = fh.read()
        if _sha256(desc_blob) != entry["sha256_descriptors"]:
            raise ValueError(f"{desc_path}: checksum mismatch")
        if _sha256(cue_blob) != entry["sha256_cues"]:
            raise ValueError(f"{cue_path}: checksum mismatch")
        descriptors = descriptors_from_bytes(desc_blob, source=desc_path)
        if descriptors.length_bits != entry["descriptor_bits"]:
            raise ValueError(
                f"{desc_path}: descriptor bits {descriptors.length_bits} do not "
                f"match manifest value {entry['descriptor_bits']}"
            )
        if len(descriptors) != entry["descriptor_count"]:
            raise ValueError(
                f"{desc_path}: descriptor count {len(descriptors)} does not "
                f"match manifest value {entry['descriptor_count']}"
            )
        if entry["cue_arity"] != len(cue_names):
            raise ValueError(
                f"{manifest_path}: image {image_id!r} cue arity "
                f"{entry['cue_arity']} does not match cue names"
            )
        if bits_seen is None:
            bits_seen = descriptors.length_bits
        elif descriptors.length_bits != bits_seen:
            raise ValueError(
                f"{desc_path}: descriptor bits {descriptors.length_bits} differ "
                f"from earlier images ({bits_seen})"
            )
        cue_values = cues_from_csv(cue_blob.decode(), cue_names, source=cue_path)
        images.append(
            ImageRecord(
                image_id=image_id,
                role=entry["role"],
                descriptors=descriptors,
                cue_values=cue_values,
                cue_names=cue_names,
                cue_kinds=cue_kinds,
            )
        )
    gt_path = os.path.join(base, manifest["ground_truth_file"])
    if not os.path.exists(gt_path):
        raise FileNotFoundError(f"missing ground-truth file {gt_path}")
    with open(gt_path, "rb") as fh:
        gt_blob = fh.read()
    if _sha256(gt_blob) != manifest["sha256_ground_truth"]:
        raise ValueError(f"{gt_path}: checksum mismatch")
    gt = ground_truth_from_csv(gt_blob.decode(), source=gt_path)
    gt.validate_ids({image.image_id for image in images})
    return images, gt
