"""Retrieval quality metrics: precision/recall curves, AP, mAP, timing.

Definitions used throughout:

- A *report* is a (query image, reference image) pair emitted by a backend,
  carrying a vote score.  A report is correct when the reference image is in
  the query's relevant set; reports for queries with an empty relevant set
  are incorrect by definition.
- ``pr_curve`` sweeps a score threshold from strict to permissive and
  records (recall, precision) at every distinct score, so recall is
  non-decreasing along the curve.  With zero reports the curve is the single
  conventional anchor (recall 0, precision 1).
- ``average_precision`` walks one query's ranked image list.  Every relevant
  hit raises recall by 1/|relevant| and contributes that recall step times
  the trapezoid of the precision at this hit and at the previous hit; the
  first hit contributes its own precision.  A query with an empty relevant
  set has AP 0 and is excluded from mAP averaging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .dataset import GroundTruth


# ---------------------------------------------------------------------------
# average precision and mAP
# ---------------------------------------------------------------------------


def average_precision(ranked, relevant) -> float:
    """AP of one ranked image-id list against a set of relevant ids."""
    relevant = frozenset(relevant)
    if not relevant:
        return 0.0
    seen = set()
    hits = 0
    ap = 0.0
    previous_precision: Optional[float] = None
    for rank, image_id in enumerate(ranked, 1):
        if image_id in seen:
            raise ValueError(f"ranked list repeats image id {image_id!r}")
        seen.add(image_id)
        if image_id not in relevant:
            continue
        hits += 1
        precision = hits / rank
        if previous_precision is None:
            ap += precision / len(relevant)
        else:
            ap += (previous_precision + precision) / 2.0 / len(relevant)
        previous_precision = precision
    return ap


def mean_average_precision(ranked_lists: dict, gt: GroundTruth) -> tuple:
    """(mAP, {query_id: AP}) over the given per-query rankings.

    Queries whose relevant set is empty get AP 0 and do not enter the mean;
    with no evaluable query at all the mAP is 0.
    """
    per_query = {}
    evaluable = []
    for query_id in sorted(ranked_lists):
        rel = gt.for_query(query_id)
        ap = average_precision(ranked_lists[query_id], rel)
        per_query[query_id] = ap
        if rel:
            evaluable.append(ap)
    map_score = sum(evaluable) / len(evaluable) if evaluable else 0.0
    return map_score, per_query


# ---------------------------------------------------------------------------
# precision/recall curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PRCurve:
    """Operating points (recall, precision), strictest threshold first."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(r), float(p)) for r, p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("a PR curve needs at least one point")
        last_recall = 0.0
        for recall, precision in pts:
            if not 0.0 <= recall <= 1.0 or not 0.0 <= precision <= 1.0:
                raise ValueError(
                    f"PR point ({recall}, {precision}) outside the unit square"
                )
            if recall < last_recall - 1e-12:
                raise ValueError("recall must be non-decreasing along the curve")
            last_recall = recall

    @property
    def recalls(self) -> tuple:
        return tuple(r for r, _ in self.points)

    @property
    def precisions(self) -> tuple:
        return tuple(p for _, p in self.points)


def pr_curve(results: dict, gt: GroundTruth, known_ids=None) -> PRCurve:
    """Threshold-sweep PR curve over per-query scored image lists.

    ``results`` maps query image id -> iterable of (image_id, score).
    ``known_ids``, when given, validates every referenced id against the
    dataset.  Possible correct matches are counted from the queries present
    in ``results``.
    """
    if known_ids is not None:
        known = set(known_ids)
        for query_id, scored in results.items():
            if query_id not in known:
                raise ValueError(f"unknown query id {query_id!r}")
            for image_id, _ in scored:
                if image_id not in known:
                    raise ValueError(
                        f"query {query_id!r} reports unknown image id {image_id!r}"
                    )
    possible = sum(len(gt.for_query(q)) for q in results)
    reports = []
    for query_id, scored in results.items():
        rel = gt.for_query(query_id)
        for image_id, score in scored:
            reports.append((float(score), image_id in rel))
    if not reports:
        return PRCurve(((0.0, 1.0),))
    reports.sort(key=lambda item: -item[0])
    points = []
    reported = 0
    correct = 0
    i = 0
    while i < len(reports):
        score = reports[i][0]
        while i < len(reports) and reports[i][0] == score:
            reported += 1
            correct += int(reports[i][1])
            i += 1
        recall = correct / possible if possible else 0.0
        points.append((recall, correct / reported))
    return PRCurve(tuple(points))


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def mean_processing_time(samples) -> float:
    """Arithmetic mean of per-image processing durations in seconds."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one timing sample")
    for s in samples:
        if not s >= 0.0:
            raise ValueError(f"timing samples must be >= 0, got {s!r}")
    return sum(samples) / len(samples)


# ---------------------------------------------------------------------------
# the per-configuration report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Everything measured for one (backend, schema, lambda) configuration."""

    backend: str
    lambda_: int
    seed: int
    schema_config: dict
    per_query_ap: tuple  # (query_id, ap, evaluable) triples
    map_score: float
    curve: PRCurve
    mean_processing_time_seconds: Optional[float] = None
    timing_run_count: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.map_score <= 1.0:
            raise ValueError(f"mAP {self.map_score} outside [0, 1]")
        evaluable = [ap for _, ap, ok in self.per_query_ap if ok]
        expected = sum(evaluable) / len(evaluable) if evaluable else 0.0
        if abs(expected - self.map_score) > 1e-9:
            raise ValueError(
                f"mAP {self.map_score} does not equal the mean of evaluable "
                f"per-query APs ({expected})"
            )

    @property
    def query_count(self) -> int:
        return len(self.per_query_ap)

    @property
    def evaluable_query_count(self) -> int:
        return sum(1 for _, _, ok in self.per_query_ap if ok)

    # ---- stable serialization ----

    def summary_row(self) -> dict:
        """One flat row per configuration (the sweep CSV schema)."""
        return {
            "backend": self.backend,
            "lambda": self.lambda_,
            "seed": self.seed,
            "map": self.map_score,
            "query_count": self.query_count,
            "evaluable_query_count": self.evaluable_query_count,
            "mean_processing_time_seconds": self.mean_processing_time_seconds,
            "timing_run_count": self.timing_run_count,
        }

    def pr_rows(self) -> list:
        """One flat row per operating point (the PR CSV schema)."""
        return [
            {
                "backend": self.backend,
                "lambda": self.lambda_,
                "recall": recall,
                "precision": precision,
            }
            for recall, precision in self.curve.points
        ]

    def to_json_dict(self) -> dict:
        return {
            "backend": self.backend,
            "lambda": self.lambda_,
            "seed": self.seed,
            "schema_config": self.schema_config,
            "map": self.map_score,
            "mean_processing_time_seconds": self.mean_processing_time_seconds,
            "timing_run_count": self.timing_run_count,
            "per_query_ap": [
                {"query_id": q, "ap": ap, "evaluable": ok}
                for q, ap, ok in self.per_query_ap
            ],
            "pr_curve": [
                {"recall": r, "precision": p} for r, p in self.curve.points
            ],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def build_report(
    backend: str,
    lambda_: int,
    seed: int,
    schema_config: dict,
    results: dict,
    gt: GroundTruth,
    known_ids=None,
    mean_time: Optional[float] = None,
    timing_run_count: int = 0,
    config: Optional[dict] = None,
) -> EvalReport:
    """Assemble an EvalReport from per-query scored image lists."""
    ranked = {
        q: [image_id for image_id, _ in scored] for q, scored in results.items()
    }
    map_score, per_query = mean_average_precision(ranked, gt)
    triples = tuple(
        (q, per_query[q], bool(gt.for_query(q))) for q in sorted(per_query)
    )
    curve = pr_curve(results, gt, known_ids=known_ids)
    return EvalReport(
        backend=backend,
        lambda_=lambda_,
        seed=seed,
        schema_config=schema_config,
        per_query_ap=triples,
        map_score=map_score,
        curve=curve,
        mean_processing_time_seconds=mean_time,
        timing_run_count=timing_run_count,
        config=dict(config or {}),
    )
