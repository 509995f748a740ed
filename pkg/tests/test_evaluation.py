"""Precision/recall curves, average precision, mAP, and timing stats."""

import itertools

import numpy as np
import pytest

from cuebench.dataset import GroundTruth
from cuebench.evaluation import (
    EvalReport,
    PRCurve,
    average_precision,
    build_report,
    mean_average_precision,
    mean_processing_time,
    pr_curve,
)


def oracle_ap(ranked, relevant):
    """Quadratic re-count oracle: precision at every hit is recomputed by
    scanning the prefix, then hits are integrated pairwise."""
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hit_ranks = [k for k in range(1, len(ranked) + 1) if ranked[k - 1] in relevant]
    total = 0.0
    prev = None
    for k in hit_ranks:
        prefix_hits = sum(1 for item in ranked[:k] if item in relevant)
        p = prefix_hits / k
        step = p if prev is None else (prev + p) / 2.0
        total += step / len(relevant)
        prev = p
    return total


def oracle_pr_points(results, gt):
    """Quadratic threshold-sweep oracle: re-count reported/correct pairs
    from scratch at every distinct score."""
    pairs = [
        (score, image_id in gt.for_query(q))
        for q, scored in results.items()
        for image_id, score in scored
    ]
    possible = sum(len(gt.for_query(q)) for q in results)
    thresholds = sorted({s for s, _ in pairs}, reverse=True)
    points = []
    for t in thresholds:
        reported = [ok for s, ok in pairs if s >= t]
        correct = sum(ok for ok in reported)
        recall = correct / possible if possible else 0.0
        points.append((recall, correct / len(reported)))
    return points


class TestAveragePrecision:
    def test_single_relevant_at_rank_two(self):
        """Frozen case: one relevant item found second of two."""
        assert average_precision(["miss", "hit"], {"hit"}) == pytest.approx(0.5)

    def test_all_relevant_ranked_first(self):
        for m in (1, 2, 5):
            ranked = [f"r{i}" for i in range(m)] + ["x", "y"]
            relevant = {f"r{i}" for i in range(m)}
            assert average_precision(ranked, relevant) == pytest.approx(1.0)

    def test_empty_relevant_set_scores_zero(self):
        assert average_precision(["a", "b"], set()) == 0.0

    def test_missed_relevant_items_cap_recall(self):
        # one of two relevant items never retrieved: half the area is gone
        ap = average_precision(["hit", "x"], {"hit", "never"})
        assert ap == pytest.approx(0.5)

    def test_duplicate_ranked_id_rejected(self):
        with pytest.raises(ValueError, match="repeats"):
            average_precision(["a", "a"], {"a"})

    def test_matches_quadratic_oracle_exhaustively(self):
        """Every ranking of up to 5 items against every relevant subset."""
        items = ["a", "b", "c", "d", "e"]
        for n in range(1, 6):
            pool = items[:n]
            for ranked in itertools.permutations(pool):
                for r in range(n + 1):
                    for relevant in itertools.combinations(pool, r):
                        assert average_precision(ranked, set(relevant)) == pytest.approx(
                            oracle_ap(ranked, set(relevant))
                        )

    def test_invariant_to_shuffling_tail_irrelevants(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(4, 10))
            ranked = [f"i{j}" for j in range(n)]
            relevant = set(rng.choice(ranked[: n - 2], size=2, replace=False))
            last_hit = max(k for k, item in enumerate(ranked) if item in relevant)
            tail = ranked[last_hit + 1 :]
            rng.shuffle(tail)
            shuffled = ranked[: last_hit + 1] + tail
            assert average_precision(shuffled, relevant) == pytest.approx(
                average_precision(ranked, relevant)
            )

    def test_irrelevant_above_a_hit_strictly_decreases(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            ranked = [f"i{j}" for j in range(n)]
            relevant = {ranked[int(rng.integers(0, n))]}
            first_hit = next(k for k, item in enumerate(ranked) if item in relevant)
            worse = ranked[:first_hit] + ["intruder"] + ranked[first_hit:]
            assert average_precision(worse, relevant) < average_precision(
                ranked, relevant
            )


class TestMeanAveragePrecision:
    def test_excludes_queries_without_relevant_items(self):
        gt = GroundTruth({"q1": {"r"}, "q2": set()})
        ranked = {"q1": ["r", "x"], "q2": ["x", "y"]}
        map_score, per_query = mean_average_precision(ranked, gt)
        assert per_query["q1"] == pytest.approx(1.0)
        assert per_query["q2"] == 0.0
        assert map_score == pytest.approx(1.0)  # q2 excluded, not averaged in

    def test_identical_queries_collapse_to_single_ap(self):
        gt = GroundTruth({f"q{i}": {"r"} for i in range(5)})
        ranked = {f"q{i}": ["x", "r"] for i in range(5)}
        map_score, _ = mean_average_precision(ranked, gt)
        assert map_score == pytest.approx(0.5)

    def test_no_evaluable_queries_gives_zero(self):
        gt = GroundTruth({"q": set()})
        map_score, _ = mean_average_precision({"q": ["a"]}, gt)
        assert map_score == 0.0


class TestPRCurve:
    def test_all_correct_and_complete_is_single_point(self):
        gt = GroundTruth({"q": {"r1", "r2"}})
        curve = pr_curve({"q": [("r1", 3), ("r2", 3)]}, gt)
        assert curve.points == ((1.0, 1.0),)

    def test_zero_reports_anchor(self):
        gt = GroundTruth({"q": {"r"}})
        curve = pr_curve({"q": []}, gt)
        assert curve.points == ((0.0, 1.0),)

    def test_hand_built_half_half(self):
        """Four images, two relevant; reports hit one of them plus one
        wrong image at the same score."""
        gt = GroundTruth({"q": {"r1", "r2"}})
        curve = pr_curve({"q": [("r1", 1), ("wrong", 1)]}, gt)
        assert curve.points == ((0.5, 0.5),)

    def test_threshold_sweep_orders_points(self):
        gt = GroundTruth({"q": {"r1", "r2"}})
        results = {"q": [("r1", 5), ("wrong", 3), ("r2", 1)]}
        curve = pr_curve(results, gt)
        assert curve.points == (
            (0.5, 1.0),  # score >= 5
            (0.5, 0.5),  # score >= 3
            (1.0, 2 / 3),  # score >= 1
        )

    def test_empty_gt_reports_count_as_incorrect(self):
        gt = GroundTruth({"q1": {"r"}, "q2": set()})
        results = {"q1": [("r", 2)], "q2": [("r", 2)]}
        curve = pr_curve(results, gt)
        # two reports at one threshold, one correct; possible = 1
        assert curve.points == ((1.0, 0.5),)

    def test_matches_quadratic_oracle_on_random_instances(self):
        rng = np.random.default_rng(21)
        ids = [f"im{i}" for i in range(6)]
        for _ in range(100):
            n_q = int(rng.integers(1, 4))
            gt_map = {}
            results = {}
            for qi in range(n_q):
                q = f"q{qi}"
                gt_map[q] = set(
                    rng.choice(ids, size=int(rng.integers(0, 4)), replace=False)
                )
                scored = [
                    (ids[int(rng.integers(0, len(ids)))], int(rng.integers(0, 4)))
                    for _ in range(int(rng.integers(0, 5)))
                ]
                # deduplicate image ids within one query's report list
                seen = {}
                for image_id, s in scored:
                    seen.setdefault(image_id, s)
                results[q] = list(seen.items())
            gt = GroundTruth(
                {q: rel - {q} for q, rel in gt_map.items()}
            )
            curve = pr_curve(results, gt)
            expected = oracle_pr_points(results, gt)
            if not expected:
                assert curve.points == ((0.0, 1.0),)
            else:
                assert len(curve.points) == len(expected)
                for got, want in zip(curve.points, expected):
                    assert got[0] == pytest.approx(want[0])
                    assert got[1] == pytest.approx(want[1])

    def test_unknown_ids_rejected(self):
        gt = GroundTruth({"q": {"r"}})
        with pytest.raises(ValueError, match="unknown query id"):
            pr_curve({"mystery": [("r", 1)]}, gt, known_ids={"q", "r"})
        with pytest.raises(ValueError, match="unknown image id"):
            pr_curve({"q": [("mystery", 1)]}, gt, known_ids={"q", "r"})

    def test_curve_validation(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            PRCurve(((0.5, 1.0), (0.2, 1.0)))
        with pytest.raises(ValueError, match="unit square"):
            PRCurve(((0.0, 1.5),))
        with pytest.raises(ValueError, match="at least one point"):
            PRCurve(())


class TestTiming:
    def test_mean(self):
        assert mean_processing_time([0.1, 0.2, 0.3]) == pytest.approx(0.2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            mean_processing_time([])

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            mean_processing_time([0.1, -0.2])


class TestEvalReport:
    def make_report(self, **overrides):
        gt = GroundTruth({"q1": {"r1"}, "q2": set()})
        results = {"q1": [("r1", 2), ("x", 1)], "q2": [("x", 1)]}
        kwargs = dict(
            backend="bf",
            lambda_=4,
            seed=7,
            schema_config={"cues": []},
            results=results,
            gt=gt,
            known_ids={"q1", "q2", "r1", "x"},
            mean_time=0.025,
            timing_run_count=10,
            config={"note": "unit"},
        )
        kwargs.update(overrides)
        return build_report(**kwargs)

    def test_build_report_assembles_consistent_fields(self):
        report = self.make_report()
        assert report.map_score == pytest.approx(1.0)
        assert report.query_count == 2
        assert report.evaluable_query_count == 1
        aps = dict((q, ap) for q, ap, _ in report.per_query_ap)
        assert aps == {"q1": pytest.approx(1.0), "q2": 0.0}
        assert report.curve.points[-1][0] == pytest.approx(1.0)

    def test_map_consistency_enforced(self):
        report = self.make_report()
        with pytest.raises(ValueError, match="does not equal the mean"):
            EvalReport(
                backend=report.backend,
                lambda_=report.lambda_,
                seed=report.seed,
                schema_config=report.schema_config,
                per_query_ap=report.per_query_ap,
                map_score=0.123,
                curve=report.curve,
            )

    def test_summary_row_schema_is_stable(self):
        row = self.make_report().summary_row()
        assert list(row) == [
            "backend",
            "lambda",
            "seed",
            "map",
            "query_count",
            "evaluable_query_count",
            "mean_processing_time_seconds",
            "timing_run_count",
        ]
        assert row["backend"] == "bf" and row["lambda"] == 4

    def test_pr_rows_and_json_round_trip(self):
        import json

        report = self.make_report()
        rows = report.pr_rows()
        assert all(row["backend"] == "bf" and row["lambda"] == 4 for row in rows)
        assert [
            (row["recall"], row["precision"]) for row in rows
        ] == list(report.curve.points)
        doc = json.loads(report.to_json())
        assert doc["map"] == pytest.approx(1.0)
        assert doc["per_query_ap"][0]["query_id"] == "q1"
        assert doc["config"] == {"note": "unit"}
