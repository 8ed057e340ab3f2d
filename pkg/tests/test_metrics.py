import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irforge.metrics import (
    DetectionRecord,
    NoGroundTruthError,
    average_precision,
    evaluate,
    iou,
    load_ground_truth,
    load_predictions,
    match_detections,
    recall_at,
)
from irforge.types import Annotation, BBox

from ap_reference import frac_iou, greedy, reference_ap

GT = {
    "a": [BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)],
    "b": [BBox(0, 0, 10, 10), BBox(50, 50, 60, 60)],
}
PREDS = [
    DetectionRecord("a", (0, 0, 10, 10), 0.95),
    DetectionRecord("b", (1, 1, 11, 11), 0.90),
    DetectionRecord("a", (0, 0, 10, 10), 0.80),
    DetectionRecord("a", (20, 20, 30, 28), 0.70),
    DetectionRecord("b", (30, 30, 40, 40), 0.60),
    DetectionRecord("b", (52, 50, 62, 60), 0.50),
]
# Values from docs/ap_worked_example.md.
WORKED = {
    (0.5, "elevenpoint"): Fraction(19, 22),
    (0.5, "allpoint"): Fraction(41, 48),
    (0.75, "elevenpoint"): Fraction(9, 22),
    (0.75, "allpoint"): Fraction(3, 8),
}
WORKED_RECALL = {0.5: Fraction(1), 0.75: Fraction(1, 2)}


# Tests ---------------------------------------------------------------------

class TestIoU:
    def test_examples(self):
        assert iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0
        assert iou((0, 0, 2, 2), (2, 2, 4, 4)) == 0.0
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)
        assert iou(BBox(0, 0, 2, 2), (1.0, 1.0, 3.0, 3.0)) == iou((0, 0, 2, 2), (1, 1, 3, 3))

    @given(*[st.integers(0, 10)] * 8)
    def test_symmetric_and_bounded(self, a, b, c, d, e, f, g, h):
        box1 = (min(a, c), min(b, d), max(a, c) + 1, max(b, d) + 1)
        box2 = (min(e, g), min(f, h), max(e, g) + 1, max(f, h) + 1)
        v = iou(box1, box2)
        assert v == iou(box2, box1) and 0 <= v <= 1
        assert v == pytest.approx(float(frac_iou(box1, box2)), abs=1e-15)


class TestMatching:
    def test_single_tp(self):
        assert match_detections([DetectionRecord("x", (0, 0, 3, 3), 0.5)], [BBox(0, 0, 3, 3)], 0.5) == [True]

    def test_duplicate(self):
        preds = [DetectionRecord("x", (0, 0, 3, 3), 0.4), DetectionRecord("x", (0, 0, 3, 3), 0.8)]
        assert match_detections(preds, [BBox(0, 0, 3, 3)], 0.5) == [False, True]

    def test_tie_keeps_input_order(self):
        preds = [DetectionRecord("x", (0, 0, 3, 3), 0.5), DetectionRecord("x", (0, 0, 3, 3), 0.5)]
        assert match_detections(preds, [BBox(0, 0, 3, 3)], 0.5) == [True, False]

    @settings(max_examples=200)
    @given(st.data())
    def test_against_ordering_oracle(self, data):
        coords = st.integers(0, 6)
        gts = [BBox(x, y, x + data.draw(st.integers(1, 4)), y + data.draw(st.integers(1, 4)))
               for x, y in data.draw(st.lists(st.tuples(coords, coords), min_size=1, max_size=2))]
        preds = [DetectionRecord("x", (x, y, x + w, y + h), s) for x, y, w, h, s in data.draw(
            st.lists(st.tuples(coords, coords, st.integers(1, 4), st.integers(1, 4),
                               st.sampled_from([0.2, 0.5, 0.9])), min_size=1, max_size=3))]
        thr = data.draw(st.sampled_from([0.1, 0.5, 0.75]))
        got = match_detections(preds, gts, thr)
        # Every permutation sorted by descending score, input order on ties.
        valid = [o for o in itertools.permutations(range(len(preds)))
                 if all((-preds[o[i]].score, o[i]) < (-preds[o[i + 1]].score, o[i + 1])
                        for i in range(len(o) - 1))]
        assert len(valid) == 1
        ref = greedy(valid[0], preds, {"x": gts}, thr)
        assert got == [ref[i] for i in range(len(preds))]

    def test_input_order_irrelevant_for_distinct_scores(self):
        perm = [3, 0, 5, 1, 4, 2]
        shuffled = [PREDS[i] for i in perm]
        a = match_detections([p for p in PREDS if p.image_id == "a"], GT["a"], 0.5)
        b = match_detections([p for p in shuffled if p.image_id == "a"], GT["a"], 0.5)
        assert sorted(a) == sorted(b)


class TestAveragePrecision:
    @pytest.mark.parametrize("thr,interp", list(WORKED))
    def test_worked_fixture(self, thr, interp):
        ap = average_precision(PREDS, GT, thr, interp)
        assert Fraction(ap).limit_denominator(10_000) == WORKED[(thr, interp)]
        assert abs(ap - float(WORKED[(thr, interp)])) < 1e-15
        assert reference_ap(PREDS, GT, thr, interp)[0] == WORKED[(thr, interp)]

    @pytest.mark.parametrize("thr", [0.5, 0.75])
    def test_worked_recall(self, thr):
        assert recall_at(PREDS, GT, thr) == float(WORKED_RECALL[thr])

    def test_perfect(self):
        preds = [DetectionRecord("a", (0, 0, 1, 1), 0.9)]
        gts = {"a": [BBox(0, 0, 1, 1)]}
        for interp in ("elevenpoint", "allpoint"):
            assert average_precision(preds, gts, 0.5, interp) == 1.0
        assert recall_at(preds, gts) == 1.0

    def test_no_predictions(self):
        gts = {"a": [BBox(0, 0, 1, 1)]}
        assert average_precision([], gts) == 0.0
        assert recall_at([], gts) == 0.0

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            average_precision([DetectionRecord("a", (0, 0, 1, 1), 0.3)], {"a": []})
        with pytest.raises(NoGroundTruthError):
            recall_at([], {})

    def test_bad_interp(self):
        with pytest.raises(ValueError):
            average_precision(PREDS, GT, 0.5, "cubic")

    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_against_exact_reference(self, data):
        boxes = [(0, 0, 4, 4), (1, 1, 5, 5), (6, 0, 9, 3), (0, 6, 3, 9), (2, 0, 6, 4)]
        gts = {"i": [BBox(*b) for b in data.draw(st.lists(st.sampled_from(boxes), min_size=1, max_size=3))]}
        preds = [DetectionRecord(img, b, s) for img, b, s in data.draw(st.lists(
            st.tuples(st.sampled_from(["i", "j"]), st.sampled_from(boxes), st.sampled_from([0.1, 0.4, 0.4, 0.8])),
            max_size=5))]
        for thr in (0.5, 0.75):
            for interp in ("elevenpoint", "allpoint"):
                ref, ref_recall = reference_ap(preds, gts, thr, interp)
                assert abs(average_precision(preds, gts, thr, interp) - float(ref)) < 1e-12
                assert recall_at(preds, gts, thr) == float(ref_recall)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8))
    def test_stricter_threshold_never_helps(self, scores):
        gts = {"i": [BBox(0, 0, 10, 10), BBox(20, 0, 30, 10)]}
        shapes = [(0, 0, 10, 10), (1, 0, 11, 10), (3, 3, 13, 13), (20, 0, 30, 9)]
        preds = [DetectionRecord("i", shapes[k % 4], s) for k, s in enumerate(scores)]
        assert recall_at(preds, gts, 0.75) <= recall_at(preds, gts, 0.5)


class TestReportAndIO:
    def test_evaluate(self):
        rep = evaluate(PREDS, GT)
        assert rep.ap_05 == average_precision(PREDS, GT, 0.5, "elevenpoint")
        assert rep.ap_075 == average_precision(PREDS, GT, 0.75, "allpoint")
        assert rep.recall_05 == 1.0 and rep.recall_075 == 0.5
        assert rep.counts["0.5"]["a"] == {"tp": 2, "fp": 1, "fn": 0}
        assert rep.to_csv().startswith("metric,value\nap_05,0.863636")
        json.dumps(rep.to_dict())

    def test_load(self, tmp_path):
        (tmp_path / "p.json").write_text(json.dumps(
            [{"image_id": p.image_id, "bbox": list(p.box), "score": p.score} for p in PREDS]))
        assert load_predictions(tmp_path / "p.json") == PREDS
        for name, boxes in GT.items():
            pts = [((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2) for b in boxes]
            Annotation(tuple(boxes), tuple(pts), np.zeros((64, 64))).save(tmp_path / "annotations" / name)
        assert load_ground_truth(tmp_path) == GT

    def test_malformed(self, tmp_path):
        (tmp_path / "p.json").write_text('[{"image_id": "a"}]')
        with pytest.raises(ValueError):
            load_predictions(tmp_path / "p.json")
        with pytest.raises(ValueError):
            DetectionRecord("a", (3, 0, 1, 1), 0.5)
