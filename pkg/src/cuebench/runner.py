"""Sweep driver: run backends x augmentation weights over one dataset.

A run is described by a JSON-friendly config document::

    {
      "dataset":   {"manifest": "path/to/manifest.json"}
                   or {"synthetic": { ...SyntheticConfig fields... }},
      "schema":    { ...CueSchema document, lambda optional... },
      "lambdas":   [0, 1, 2, 4, 8, 16, 32],
      "backends":  ["bf", "lsh", "bof", "bst"],
      "backend_configs": {"lsh": {"table_count": 4}},
      "tau":       {"rule": "fraction", "value": 0.1},
      "protocol":  {"kind": "batch"}
                   or {"kind": "incremental", "stride": 10},
      "seed":      0,
      "timing":    {"enabled": false, "runs": 10}
    }

For every (backend, lambda) cell the driver augments all descriptors with
the schema at that weight (lambda 0 leaves the stream bit-identical to the
raw dataset), executes the protocol, and scores the per-query image
rankings.  Outputs land in the chosen directory only after the whole sweep
succeeds: ``sweep.csv`` (one summary row per cell), one
``pr_<backend>_<lambda>.csv`` per cell, and ``report.json`` containing every
report plus the resolved config echo.

The match threshold for a cell follows the configured rule:

- ``absolute``: tau is used as given for every lambda.
- ``fraction`` on a schema without selector cues: tau = fraction x
  augmented bit length, so tau grows with lambda.
- ``fraction`` on a schema with selector cues: tau = fraction x original
  bit length + 2 x lambda x selector count.  Selector blocks only ever
  differ in 0 or 2 bits per copy, so scaling tau by the full block length
  would drown the cue; this rule keeps the acceptance band of the original
  descriptor and concedes exactly one full selector mismatch.

Timing, when enabled, re-executes each cell's protocol ``runs`` more times
(after one discarded warm-up) and reports the mean per-image duration of
querying plus inserting.  Timing output is the only non-deterministic
quantity, so it stays empty unless explicitly requested.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import (
    GroundTruth,
    ImageRecord,
    ROLE_QUERY,
    ROLE_REFERENCE,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
)
from .encoders import CueSchema
from .evaluation import EvalReport, build_report, mean_processing_time
from .search import create_index

BACKEND_NAMES = ("bf", "lsh", "bof", "bst")
_BACKEND_CODES = {name: i for i, name in enumerate(BACKEND_NAMES)}
_SEEDED_BACKENDS = ("lsh", "bof")

PROTOCOL_BATCH = "batch"
PROTOCOL_INCREMENTAL = "incremental"
TAU_FRACTION = "fraction"
TAU_ABSOLUTE = "absolute"


def _expect(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ValueError(f"{path}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """Validated sweep description; build one with ``from_config``."""

    schema: CueSchema
    lambdas: tuple
    dataset_manifest: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    backends: tuple = BACKEND_NAMES
    backend_configs: dict = field(default_factory=dict)
    tau_rule: str = TAU_FRACTION
    tau_value: float = 0.1
    protocol: str = PROTOCOL_BATCH
    stride: int = 10
    seed: int = 0
    timing_enabled: bool = False
    timing_runs: int = 10

    def __post_init__(self):
        _expect(
            (self.dataset_manifest is None) != (self.synthetic is None),
            "dataset",
            "exactly one of manifest or synthetic must be given",
        )
        _expect(len(self.lambdas) > 0, "lambdas", "must be non-empty")
        for i, lam in enumerate(self.lambdas):
            _expect(
                isinstance(lam, int) and not isinstance(lam, bool) and lam >= 0,
                f"lambdas[{i}]",
                f"must be a non-negative integer, got {lam!r}",
            )
        _expect(
            len(set(self.lambdas)) == len(self.lambdas),
            "lambdas",
            "must not repeat values",
        )
        _expect(len(self.backends) > 0, "backends", "must be non-empty")
        for i, name in enumerate(self.backends):
            _expect(
                name in BACKEND_NAMES,
                f"backends[{i}]",
                f"unknown backend {name!r}; expected one of {list(BACKEND_NAMES)}",
            )
        _expect(
            len(set(self.backends)) == len(self.backends),
            "backends",
            "must not repeat values",
        )
        for name in self.backend_configs:
            _expect(
                name in BACKEND_NAMES,
                f"backend_configs.{name}",
                "does not name a backend",
            )
        _expect(
            self.tau_rule in (TAU_FRACTION, TAU_ABSOLUTE),
            "tau.rule",
            f"must be {TAU_FRACTION!r} or {TAU_ABSOLUTE!r}, got {self.tau_rule!r}",
        )
        if self.tau_rule == TAU_FRACTION:
            _expect(
                0.0 < self.tau_value <= 1.0,
                "tau.value",
                f"fraction must be in (0, 1], got {self.tau_value!r}",
            )
        else:
            _expect(
                self.tau_value >= 0.0,
                "tau.value",
                f"absolute threshold must be >= 0, got {self.tau_value!r}",
            )
        _expect(
            self.protocol in (PROTOCOL_BATCH, PROTOCOL_INCREMENTAL),
            "protocol.kind",
            f"must be {PROTOCOL_BATCH!r} or {PROTOCOL_INCREMENTAL!r}, "
            f"got {self.protocol!r}",
        )
        _expect(
            isinstance(self.stride, int)
            and not isinstance(self.stride, bool)
            and self.stride >= 1,
            "protocol.stride",
            f"must be an integer >= 1, got {self.stride!r}",
        )
        _expect(
            isinstance(self.seed, int)
            and not isinstance(self.seed, bool)
            and self.seed >= 0,
            "seed",
            f"must be a non-negative integer, got {self.seed!r}",
        )
        _expect(
            isinstance(self.timing_runs, int)
            and not isinstance(self.timing_runs, bool)
            and self.timing_runs >= 1,
            "timing.runs",
            f"must be an integer >= 1, got {self.timing_runs!r}",
        )

    # ---- config document round trip ----

    @classmethod
    def from_config(cls, data: dict) -> "RunConfig":
        _expect(isinstance(data, dict), "config", "must be a JSON object")
        known = {
            "dataset",
            "schema",
            "lambdas",
            "backends",
            "backend_configs",
            "tau",
            "protocol",
            "seed",
            "timing",
        }
        unknown = set(data) - known
        _expect(not unknown, "config", f"unknown fields: {sorted(unknown)}")

        dataset = data.get("dataset")
        _expect(isinstance(dataset, dict), "dataset", "must be an object")
        ds_keys = set(dataset)
        _expect(
            ds_keys in ({"manifest"}, {"synthetic"}),
            "dataset",
            "must contain exactly one of 'manifest' or 'synthetic'",
        )
        manifest = None
        synthetic = None
        if "manifest" in dataset:
            _expect(
                isinstance(dataset["manifest"], str) and dataset["manifest"],
                "dataset.manifest",
                "must be a non-empty path string",
            )
            manifest = dataset["manifest"]
        else:
            _expect(
                isinstance(dataset["synthetic"], dict),
                "dataset.synthetic",
                "must be an object",
            )
            try:
                synthetic = SyntheticConfig.from_config(dataset["synthetic"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"dataset.synthetic: {exc}") from None

        _expect("schema" in data, "schema", "is required")
        try:
            schema = CueSchema.from_config(data["schema"])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"schema: {exc}") from None

        lambdas = data.get("lambdas")
        _expect(isinstance(lambdas, list), "lambdas", "must be a list")

        backends = data.get("backends", list(BACKEND_NAMES))
        _expect(isinstance(backends, list), "backends", "must be a list")

        backend_configs = data.get("backend_configs", {})
        _expect(
            isinstance(backend_configs, dict),
            "backend_configs",
            "must be an object",
        )
        for name, cfg in backend_configs.items():
            _expect(
                isinstance(cfg, dict),
                f"backend_configs.{name}",
                "must be an object",
            )

        tau = data.get("tau", {"rule": TAU_FRACTION, "value": 0.1})
        _expect(isinstance(tau, dict), "tau", "must be an object")
        _expect(
            set(tau) <= {"rule", "value"},
            "tau",
            f"unknown fields: {sorted(set(tau) - {'rule', 'value'})}",
        )
        tau_rule = tau.get("rule", TAU_FRACTION)
        tau_value = tau.get("value", 0.1)
        _expect(
            isinstance(tau_value, (int, float)) and not isinstance(tau_value, bool),
            "tau.value",
            f"must be a number, got {tau_value!r}",
        )

        protocol = data.get("protocol", {"kind": PROTOCOL_BATCH})
        _expect(isinstance(protocol, dict), "protocol", "must be an object")
        _expect(
            set(protocol) <= {"kind", "stride"},
            "protocol",
            f"unknown fields: {sorted(set(protocol) - {'kind', 'stride'})}",
        )
        kind = protocol.get("kind", PROTOCOL_BATCH)
        stride = protocol.get("stride", 10)
        _expect(
            not (kind == PROTOCOL_BATCH and "stride" in protocol),
            "protocol.stride",
            "only applies to the incremental protocol",
        )

        seed = data.get("seed", 0)

        timing = data.get("timing", {"enabled": False, "runs": 10})
        _expect(isinstance(timing, dict), "timing", "must be an object")
        _expect(
            set(timing) <= {"enabled", "runs"},
            "timing",
            f"unknown fields: {sorted(set(timing) - {'enabled', 'runs'})}",
        )
        timing_enabled = timing.get("enabled", False)
        _expect(
            isinstance(timing_enabled, bool),
            "timing.enabled",
            f"must be a boolean, got {timing_enabled!r}",
        )
        timing_runs = timing.get("runs", 10)

        return cls(
            schema=schema,
            lambdas=tuple(lambdas),
            dataset_manifest=manifest,
            synthetic=synthetic,
            backends=tuple(backends),
            backend_configs={k: dict(v) for k, v in backend_configs.items()},
            tau_rule=tau_rule,
            tau_value=float(tau_value),
            protocol=kind,
            stride=stride,
            seed=seed,
            timing_enabled=timing_enabled,
            timing_runs=timing_runs,
        )

    def to_config(self) -> dict:
        dataset = (
            {"manifest": self.dataset_manifest}
            if self.dataset_manifest is not None
            else {"synthetic": self.synthetic.to_config()}
        )
        protocol = {"kind": self.protocol}
        if self.protocol == PROTOCOL_INCREMENTAL:
            protocol["stride"] = self.stride
        return {
            "dataset": dataset,
            "schema": self.schema.to_config(),
            "lambdas": list(self.lambdas),
            "backends": list(self.backends),
            "backend_configs": {k: dict(v) for k, v in self.backend_configs.items()},
            "tau": {"rule": self.tau_rule, "value": self.tau_value},
            "protocol": protocol,
            "seed": self.seed,
            "timing": {"enabled": self.timing_enabled, "runs": self.timing_runs},
        }

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        with open(path, "r") as fh:
            return cls.from_config(json.load(fh))


# ---------------------------------------------------------------------------
# per-cell mechanics
# ---------------------------------------------------------------------------


def resolve_tau(config: RunConfig, schema: CueSchema, original_bits: int) -> float:
    """Match threshold for one cell (the schema carries the cell's lambda)."""
    if config.tau_rule == TAU_ABSOLUTE:
        return config.tau_value
    if schema.selector_count == 0:
        return config.tau_value * schema.augmented_bits(original_bits)
    return (
        config.tau_value * original_bits
        + 2.0 * schema.lambda_ * schema.selector_count
    )


def cell_seed(seed: int, backend: str, lambda_: int) -> int:
    """Stable per-cell RNG seed, independent of sweep order."""
    ss = np.random.SeedSequence((seed, _BACKEND_CODES[backend], lambda_))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _build_index(config: RunConfig, backend: str, lambda_: int):
    kwargs = dict(config.backend_configs.get(backend, {}))
    if backend in _SEEDED_BACKENDS and "seed" not in kwargs:
        kwargs["seed"] = cell_seed(config.seed, backend, lambda_)
    return create_index(backend, **kwargs)


def _augment_images(images, schema: CueSchema):
    """(image_id -> augmented DescriptorArray) for one cell's schema."""
    out = {}
    for image in images:
        if schema.lambda_ == 0 or not schema.cues:
            out[image.image_id] = image.descriptors
            continue
        values = np.column_stack(
            [image.cue_column(cue.name) for cue in schema.cues]
        )
        out[image.image_id] = schema.augment_array(image.descriptors, values)
    return out


def _execute_protocol(
    config: RunConfig,
    index,
    images,
    augmented: dict,
    gt: GroundTruth,
    tau: float,
    clock=None,
) -> tuple:
    """Run one cell: returns (results, effective_gt, timing_samples).

    results maps query image id -> image_scores tuple; effective_gt keeps
    only relevant ids actually present in the index when a query ran.
    """
    results = {}
    effective: dict = {}
    samples = []
    if config.protocol == PROTOCOL_BATCH:
        inserted = set()
        for image in images:
            if image.role != ROLE_REFERENCE:
                continue
            t0 = clock() if clock else 0.0
            index.insert(image.image_id, augmented[image.image_id])
            if clock:
                samples.append(clock() - t0)
            inserted.add(image.image_id)
        for image in images:
            if image.role != ROLE_QUERY:
                continue
            t0 = clock() if clock else 0.0
            result = index.query(image.image_id, augmented[image.image_id], tau)
            if clock:
                samples.append(clock() - t0)
            results[image.image_id] = result.image_scores
            effective[image.image_id] = gt.for_query(image.image_id) & inserted
    else:
        inserted = set()
        for image in images[:: config.stride]:
            t0 = clock() if clock else 0.0
            result = index.query(image.image_id, augmented[image.image_id], tau)
            index.insert(image.image_id, augmented[image.image_id])
            if clock:
                samples.append(clock() - t0)
            results[image.image_id] = result.image_scores
            effective[image.image_id] = gt.for_query(image.image_id) & inserted
            inserted.add(image.image_id)
    return results, effective, samples


def run_cell(
    config: RunConfig,
    backend: str,
    lambda_: int,
    images,
    gt: GroundTruth,
) -> EvalReport:
    """Evaluate one (backend, lambda) combination."""
    schema = config.schema.with_lambda(lambda_)
    original_bits = images[0].descriptors.length_bits
    augmented = _augment_images(images, schema)
    tau = resolve_tau(config, schema, original_bits)

    index = _build_index(config, backend, lambda_)
    results, effective, _ = _execute_protocol(
        config, index, images, augmented, gt, tau
    )

    mean_time = None
    if config.timing_enabled:
        all_samples = []
        for run in range(config.timing_runs + 1):  # first run is warm-up
            timed_index = _build_index(config, backend, lambda_)
            _, _, samples = _execute_protocol(
                config,
                timed_index,
                images,
                augmented,
                gt,
                tau,
                clock=time.perf_counter,
            )
            if run > 0:
                all_samples.extend(samples)
        mean_time = mean_processing_time(all_samples)

    known_ids = {image.image_id for image in images}
    return build_report(
        backend=backend,
        lambda_=lambda_,
        seed=config.seed,
        schema_config=schema.to_config(),
        results=results,
        gt=GroundTruth(effective),
        known_ids=known_ids,
        mean_time=mean_time,
        timing_run_count=config.timing_runs if config.timing_enabled else 0,
        config={"tau": tau, "protocol": config.protocol},
    )


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = (
    "backend",
    "lambda",
    "seed",
    "map",
    "query_count",
    "evaluable_query_count",
    "mean_processing_time_seconds",
    "timing_run_count",
)
PR_COLUMNS = ("backend", "lambda", "recall", "precision")


def csv_text(columns, rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            ["" if row[c] is None else row[c] for c in columns]
        )
    return out.getvalue()


def load_run_dataset(config: RunConfig) -> tuple:
    """Materialize the configured dataset: (images, ground truth)."""
    if config.dataset_manifest is not None:
        return load_dataset(config.dataset_manifest)
    return generate_synthetic(config.synthetic)


def run_sweep(config: RunConfig, out_dir) -> list:
    """Run every (backend, lambda) cell and write the output files.

    Files are committed only after every cell succeeded, so a failing sweep
    leaves no partial outputs behind.  Returns the list of EvalReports in
    execution order (backends outer, lambdas inner, both as configured).
    """
    images, gt = load_run_dataset(config)
    if not images:
        raise ValueError("dataset contains no images")
    for cue in config.schema.cues:
        if cue.name not in images[0].cue_names:
            raise ValueError(
                f"schema cue {cue.name!r} has no matching dataset cue column; "
                f"available: {list(images[0].cue_names)}"
            )

    reports = []
    for backend in config.backends:
        for lambda_ in config.lambdas:
            reports.append(run_cell(config, backend, lambda_, images, gt))

    pending = []
    summary_rows = [report.summary_row() for report in reports]
    pending.append(("sweep.csv", csv_text(SWEEP_COLUMNS, summary_rows).encode()))
    for report in reports:
        name = f"pr_{report.backend}_{report.lambda_}.csv"
        pending.append(
            (name, csv_text(PR_COLUMNS, report.pr_rows()).encode())
        )
    document = {
        "config": config.to_config(),
        "results": [report.to_json_dict() for report in reports],
    }
    pending.append(
        ("report.json", (json.dumps(document, indent=2, sort_keys=True) + "\n").encode())
    )

    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        for name, blob in pending:
            path = os.path.join(out_dir, name)
            with open(path, "wb") as fh:
                fh.write(blob)
            written.append(path)
    except BaseException:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise
    return reports
