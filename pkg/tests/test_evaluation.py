import csv
import io
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import exhaustive_ap, greedy_flags
from roomtopo.errors import DimensionError, SchemaError
from roomtopo.evaluation import (
    ap_from_flags,
    average_precision,
    labeling_metrics,
    match_detections,
    pipeline_map,
    pipeline_report,
    segmentation_report,
)
from roomtopo.occupancy import GridSpec
from roomtopo.segmentation import InstanceMask, SegmentationResult


def block(shape, i0, i1, j0=0, j1=None):
    m = np.zeros(shape, bool)
    m[i0:i1, j0:j1] = True
    return m


def room(iid, mask, conf=1.0, cat="room"):
    return InstanceMask(iid, cat, mask, conf)


def three_pred_fixture():
    shape = (10, 2)
    g1, g2 = block(shape, 0, 3), block(shape, 5, 8)
    preds = [room(0, g1, 0.9), room(1, block(shape, 9, 10), 0.8), room(2, g2, 0.7)]
    return preds, [room(10, g1), room(11, g2)]


@st.composite
def detection_fixture(draw):
    """Up to 5 predictions and 4 ground truths as random masks on a tiny grid."""
    shape = (4, 3)
    n_pred = draw(st.integers(0, 5))
    n_gt = draw(st.integers(0, 4))
    masks = (st.lists(st.booleans(), min_size=12, max_size=12)
             .filter(any).map(lambda b: np.array(b).reshape(shape)))
    confs = st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9])
    preds = [(k, draw(confs), draw(masks)) for k in range(n_pred)]
    gts = [(100 + k, draw(masks)) for k in range(n_gt)]
    return preds, gts, draw(st.sampled_from([0.3, 0.5, 0.75]))


class TestAveragePrecision:
    def test_single_hit(self):
        g = block((10, 1), 0, 6)
        p = block((10, 1), 0, 10)
        assert average_precision([room(0, p)], [room(1, g)]) == 1.0  # IoU 0.6

    def test_single_miss(self):
        g = block((10, 1), 0, 4)
        p = block((10, 1), 0, 10)
        assert average_precision([room(0, p)], [room(1, g)]) == 0.0  # IoU 0.4

    def test_three_prediction_fixture(self):
        preds, gts = three_pred_fixture()
        assert [r.matched for r in match_detections(preds, gts)] == [True, False, True]
        assert average_precision(preds, gts) == pytest.approx(5 / 6, abs=1e-12)

    def test_empty_cases(self):
        m = block((3, 3), 0, 1)
        assert average_precision([], []) == 1.0
        assert average_precision([room(0, m)], []) == 0.0
        assert average_precision([], [room(0, m)]) == 0.0

    def test_category_filter(self):
        preds, gts = three_pred_fixture()
        extra = room(7, block((10, 2), 9, 10), 0.95, "transition")
        assert average_precision(preds + [extra], gts, "room") == pytest.approx(5 / 6)
        assert average_precision(preds + [extra], gts, "transition") == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            average_precision([room(0, np.ones((2, 2)))], [room(1, np.ones((3, 2)))])

    def test_each_gt_matched_once(self):
        g = block((4, 1), 0, 4)
        recs = match_detections([room(0, g, 0.9), room(1, g, 0.8)], [room(5, g)])
        assert [r.matched for r in recs] == [True, False]
        assert recs[1].best_iou == 0.0 and recs[0].gt_id == 5

    def test_confidence_ties_break_on_instance_id(self):
        g = block((4, 1), 0, 4)
        recs = match_detections([room(3, g, 0.5), room(1, g, 0.5)], [room(9, g)])
        assert [(r.instance_id, r.matched) for r in recs] == [(1, True), (3, False)]

    @given(detection_fixture())
    def test_agrees_with_exhaustive_oracle(self, fx):
        preds, gts, thr = fx
        flags = greedy_flags(preds, gts, thr)
        recs = match_detections([room(i, m, c) for i, c, m in preds], [room(i, m) for i, m in gts], thr)
        assert [r.matched for r in recs] == flags
        ap = ap_from_flags(flags, len(gts))[0]
        assert ap == pytest.approx(float(exhaustive_ap(flags, len(gts))), abs=1e-12)
        assert 0.0 <= ap <= 1.0

    @given(detection_fixture())
    def test_zero_iou_low_confidence_prediction_never_helps(self, fx):
        preds, gts, thr = fx
        union = np.zeros((4, 3), bool)
        for _, m in gts:
            union |= m
        if union.all():
            return
        junk = ~union
        base = average_precision([room(i, m, c) for i, c, m in preds], [room(i, m) for i, m in gts],
                                 iou_threshold=thr)
        more = average_precision([room(i, m, c) for i, c, m in preds] + [room(99, junk, 0.01)],
                                 [room(i, m) for i, m in gts], iou_threshold=thr)
        assert more <= base

    @given(detection_fixture(), st.integers(1, 50), st.integers(0, 1000))
    def test_relabeling_ids_changes_nothing(self, fx, scale, offset):
        preds, gts, thr = fx
        base = average_precision([room(i, m, c) for i, c, m in preds], [room(i, m) for i, m in gts],
                                 iou_threshold=thr)
        # an increasing map keeps tie-breaking order intact
        shifted = average_precision([room(i * scale + offset, m, c) for i, c, m in preds],
                                    [room(i * scale + offset, m) for i, m in gts], iou_threshold=thr)
        assert shifted == base


class TestLabelingMetrics:
    def test_perfect(self):
        gts = ["a", "b", "a", "c"]
        preds = [(g, {p: float(p == g) for p in "abc"}) for g in gts]
        rep = labeling_metrics(preds, gts, "abc")
        assert rep.aggregate == {"precision": 1.0, "recall": 1.0, "weighted_f1": 1.0, "mAP": 1.0}

    def test_one_category_predicted(self):
        gts = ["a", "a", "b", "b"]
        preds = [("a", {"a": 0.5, "b": 0.5})] * 4
        rep = labeling_metrics(preds, gts, ["a", "b"])
        assert rep.rows["a"]["f1"] == pytest.approx(2 / 3)
        assert rep.rows["b"]["f1"] == 0.0
        assert rep.aggregate["weighted_f1"] == pytest.approx(1 / 3, abs=1e-12)

    def test_weighted_f1_is_support_weighted_mean(self, rng):
        phrases = list("abcd")
        gts = list(rng.choice(phrases, 40))
        preds = [(str(rng.choice(phrases)), {p: float(rng.random()) for p in phrases}) for _ in gts]
        rep = labeling_metrics(preds, gts, phrases)
        wf = sum(r["support"] / 40 * r["f1"] for r in rep.rows.values())
        assert rep.aggregate["weighted_f1"] == pytest.approx(wf, abs=1e-12)
        assert all(0 <= v <= 1 for v in rep.aggregate.values())

    def test_map_skips_categories_without_support(self):
        rep = labeling_metrics([("a", {"a": 1.0, "b": 0.0})], ["a"], ["a", "b"])
        assert "ap" not in rep.rows["b"] and rep.aggregate["mAP"] == 1.0

    def test_errors(self):
        with pytest.raises(SchemaError):
            labeling_metrics([], [], ["a"])
        with pytest.raises(SchemaError):
            labeling_metrics([("a", {})], ["a", "a"], ["a"])
        with pytest.raises(SchemaError, match="zzz"):
            labeling_metrics([("zzz", {})], ["a"], ["a"])


def two_type_scene():
    spec = GridSpec((0.0, 0.0), 1.0, 8, 2, 0.0, 1.0)
    rooms = tuple(room(k, block(spec.shape, 2 * k, 2 * k + 2)) for k in range(4))
    return SegmentationResult(spec, rooms)


class TestPipelineMap:
    labels = {0: "kitchen", 1: "kitchen", 2: "bedroom", 3: "bedroom"}

    def test_perfect(self):
        seg = two_type_scene()
        assert pipeline_map(seg, self.labels, seg, self.labels) == 1.0

    def test_all_labels_wrong(self):
        seg = two_type_scene()
        wrong = {k: "bedroom" if v == "kitchen" else "kitchen" for k, v in self.labels.items()}
        assert pipeline_map(seg, wrong, seg, self.labels) == 0.0

    def test_half_right(self):
        seg = two_type_scene()
        half = {0: "kitchen", 1: "bathroom", 2: "bedroom", 3: "bathroom"}
        rep = pipeline_report(seg, half, seg, self.labels)
        assert rep.rows["kitchen"]["ap"] == rep.rows["bedroom"]["ap"] == 0.5
        assert "bathroom" not in rep.rows
        assert rep.aggregate["mAP"] == 0.5

    def test_swapped_half_depends_on_ranking(self):
        seg = two_type_scene()
        half = {0: "kitchen", 1: "bedroom", 2: "bedroom", 3: "kitchen"}
        # equal confidence: kitchen ranks (TP, FP) -> 0.5, bedroom ranks (FP, TP) -> 0.25
        assert pipeline_map(seg, half, seg, self.labels) == pytest.approx(0.375)

    def test_unlabeled_predictions_never_match(self):
        seg = two_type_scene()
        assert pipeline_map(seg, {}, seg, self.labels) == 0.0

    def test_scores_override_confidence(self):
        seg = two_type_scene()
        half = {0: "kitchen", 1: "bedroom", 2: "bedroom", 3: "kitchen"}
        correct_first = {0: 0.9, 1: 0.2, 2: 0.9, 3: 0.2}
        assert pipeline_map(seg, half, seg, self.labels, pred_scores=correct_first) == pytest.approx(0.5)
        wrong_first = {0: 0.2, 1: 0.9, 2: 0.2, 3: 0.9}
        assert pipeline_map(seg, half, seg, self.labels, pred_scores=wrong_first) == pytest.approx(0.25)

    def test_grid_mismatch(self):
        seg = two_type_scene()
        other = SegmentationResult(GridSpec((0.0, 0.0), 1.0, 2, 2, 0.0, 1.0), ())
        with pytest.raises(DimensionError):
            pipeline_map(seg, self.labels, other, {})


class TestReports:
    def report(self):
        preds, gts = three_pred_fixture()
        spec = GridSpec((0.0, 0.0), 1.0, 10, 2, 0.0, 1.0)
        return segmentation_report(SegmentationResult(spec, tuple(preds)), SegmentationResult(spec, tuple(gts)))

    def test_rows_and_curves(self):
        rep = self.report()
        assert rep.rows["room"] == {"ap": pytest.approx(5 / 6), "support": 2}
        assert rep.rows["transition"]["ap"] == 1.0
        recall, precision = rep.curves["room"]
        assert recall == [0.5, 0.5, 1.0] and precision == pytest.approx([1.0, 0.5, 2 / 3])

    def test_json(self):
        doc = json.loads(self.report().to_json())
        assert doc["rows"]["room"]["support"] == 2

    def test_csv(self):
        rows = list(csv.reader(io.StringIO(self.report().to_csv())))
        assert rows[0] == ["category", "ap", "support"]
        assert rows[2][0] == "room" and float(rows[2][1]) == pytest.approx(5 / 6)

    def test_table(self):
        text = self.report().format_table()
        line = next(l for l in text.splitlines() if l.startswith("room"))
        assert line.split() == ["room", "83.33", "2"]

    def test_pure(self):
        assert self.report().to_json() == self.report().to_json()


def test_exhaustive_oracle_on_fixture():
    assert exhaustive_ap([True, False, True], 2) == Fraction(5, 6)
