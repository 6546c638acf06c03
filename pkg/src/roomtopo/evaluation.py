"""Detection AP at an IoU threshold, room-label classification metrics, label-aware pipeline mAP."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, SchemaError
from .segmentation import ROOM, InstanceMask, SegmentationResult, mask_iou

UNLABELED = "unlabeled"


@dataclass(frozen=True)
class DetectionRecord:
    instance_id: int
    confidence: float
    matched: bool
    best_iou: float
    gt_id: int | None = None


def ap_from_flags(tp: Sequence[bool], n_gt: int) -> tuple[float, np.ndarray, np.ndarray]:
    """All-point interpolated AP for a ranked list of TP/FP flags.

    Returns (AP, precision curve, recall curve). Precision is made monotone
    non-increasing from the right before integrating over recall.
    """
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        return (1.0 if len(tp) == 0 else 0.0), np.zeros(0), np.zeros(0)
    if len(tp) == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope)), precision, recall


def match_detections(preds: Sequence[InstanceMask], gts: Sequence[InstanceMask],
                     iou_threshold: float = 0.5) -> list[DetectionRecord]:
    """Greedy matching: by descending confidence (ties: lower id), each prediction takes the
    unmatched ground truth of highest IoU (ties: lower id) and is a TP when that IoU clears the
    threshold."""
    preds = sorted(preds, key=lambda m: (-m.confidence, m.instance_id))
    gts = sorted(gts, key=lambda m: m.instance_id)
    if len({m.mask.shape for m in [*preds, *gts]}) > 1:
        raise DimensionError("prediction and ground-truth masks differ in shape")
    free = [True] * len(gts)
    out = []
    for p in preds:
        best, best_k = 0.0, None
        for k, g in enumerate(gts):
            if not free[k]:
                continue
            iou = mask_iou(p.mask, g.mask)
            if best_k is None or iou > best:
                best, best_k = iou, k
        hit = best_k is not None and best >= iou_threshold
        if hit:
            free[best_k] = False
        out.append(DetectionRecord(p.instance_id, p.confidence, hit, best,
                                   gts[best_k].instance_id if hit else None))
    return out


def average_precision(preds: Sequence[InstanceMask], gts: Sequence[InstanceMask],
                      category: str | None = None, iou_threshold: float = 0.5) -> float:
    """AP of one category; 1.0 when there is nothing to find and nothing predicted."""
    if category is not None:
        preds = [m for m in preds if m.category == category]
        gts = [m for m in gts if m.category == category]
    records = match_detections(preds, gts, iou_threshold)
    return ap_from_flags([r.matched for r in records], len(gts))[0]


# ---------------------------------------------------------------- reports

@dataclass
class MetricReport:
    """Per-category rows plus aggregate values; every value lies in [0, 1]."""

    title: str
    rows: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    curves: dict[str, tuple[list[float], list[float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"title": self.title, "rows": self.rows, "aggregate": self.aggregate}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        cols = sorted({k for r in self.rows.values() for k in r})
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["category"] + cols)
        for cat, r in self.rows.items():
            w.writerow([cat] + [r.get(c, "") for c in cols])
        for k, v in self.aggregate.items():
            w.writerow([f"[{k}]"] + [v] + [""] * (len(cols) - 1))
        return buf.getvalue()

    def format_table(self) -> str:
        cols = sorted({k for r in self.rows.values() for k in r}, key=_col_order)
        width = max([len("Category")] + [len(c) for c in self.rows]) + 2
        lines = [self.title, "-" * (width + 11 * len(cols))]
        lines.append("Category".ljust(width) + "".join(c.rjust(11) for c in cols))
        for cat, r in self.rows.items():
            cells = "".join(_fmt(r.get(c)).rjust(11) for c in cols)
            lines.append(cat.ljust(width) + cells)
        lines.append("-" * (width + 11 * len(cols)))
        for k, v in self.aggregate.items():
            lines.append(k.ljust(width) + _fmt(v).rjust(11))
        return "\n".join(lines)


def _col_order(c: str):
    order = ["ap", "precision", "recall", "f1", "support"]
    return (order.index(c) if c in order else len(order), c)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{100 * v:.2f}"


def segmentation_report(pred: SegmentationResult, gt: SegmentationResult,
                        iou_threshold: float = 0.5) -> MetricReport:
    """AP per category (rooms and transitions)."""
    _same_grid(pred, gt)
    report = MetricReport(f"Instance segmentation AP @ {iou_threshold:g} IoU")
    for cat in ("transition", "room"):
        p = [m for m in pred.instances if m.category == cat]
        g = [m for m in gt.instances if m.category == cat]
        recs = match_detections(p, g, iou_threshold)
        ap, prec, rec = ap_from_flags([r.matched for r in recs], len(g))
        report.rows[cat] = {"ap": ap, "support": len(g)}
        report.curves[cat] = (rec.tolist(), prec.tolist())
    return report


def _same_grid(a: SegmentationResult, b: SegmentationResult) -> None:
    if a.spec.shape != b.spec.shape:
        raise DimensionError(f"grids differ: {a.spec.shape} vs {b.spec.shape}")


def labeling_metrics(preds: Sequence[tuple[str, Mapping[str, float]]], gts: Sequence[str],
                     phrases: Sequence[str]) -> MetricReport:
    """Precision/recall/F1 per room type, support-weighted F1, and one-vs-rest mAP from scores."""
    if len(preds) != len(gts):
        raise SchemaError(f"{len(preds)} predictions for {len(gts)} ground-truth labels")
    if not preds:
        raise SchemaError("no predictions to evaluate")
    phrases = list(phrases)
    known = set(phrases)
    for lab in [p[0] for p in preds] + list(gts):
        if lab not in known:
            raise SchemaError(f"unknown label {lab!r}")
    pred_lab = np.array([p[0] for p in preds], dtype=object)
    gt_lab = np.array(gts, dtype=object)
    n = len(gts)
    report = MetricReport("Room labeling")
    wp = wr = wf = 0.0
    aps = []
    for c in phrases:
        tp = int(np.sum((pred_lab == c) & (gt_lab == c)))
        npred = int(np.sum(pred_lab == c))
        support = int(np.sum(gt_lab == c))
        precision = tp / npred if npred else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores = np.array([float(p[1].get(c, -np.inf)) for p in preds])
        order = sorted(range(n), key=lambda k: (-scores[k], k))
        ap = ap_from_flags([gt_lab[k] == c for k in order], support)[0] if support else None
        if support:
            aps.append(ap)
        report.rows[c] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
        if ap is not None:
            report.rows[c]["ap"] = ap
        wp += support / n * precision
        wr += support / n * recall
        wf += support / n * f1
    report.aggregate = {
        "precision": wp,
        "recall": wr,
        "weighted_f1": wf,
        "mAP": float(np.mean(aps)) if aps else 0.0,
    }
    return report


def pipeline_map(pred: SegmentationResult, pred_labels: Mapping[int, str],
                 gt: SegmentationResult, gt_labels: Mapping[int, str],
                 iou_threshold: float = 0.5,
                 pred_scores: Mapping[int, float] | None = None) -> float:
    """Label-aware room AP averaged over the room types present in the ground truth.

    A predicted room counts only against ground-truth rooms of the same label, so a
    detection is a TP iff IoU >= threshold and the labels agree. Confidence for
    ranking is ``pred_scores[id]`` when given, else the mask confidence.
    """
    return pipeline_report(pred, pred_labels, gt, gt_labels, iou_threshold, pred_scores).aggregate["mAP"]


def pipeline_report(pred, pred_labels, gt, gt_labels, iou_threshold=0.5, pred_scores=None) -> MetricReport:
    _same_grid(pred, gt)
    report = MetricReport(f"Complete pipeline mAP @ {iou_threshold:g} IoU")
    gt_rooms = gt.rooms
    types = sorted({gt_labels[m.instance_id] for m in gt_rooms})
    aps = []
    for c in types:
        g = [m for m in gt_rooms if gt_labels[m.instance_id] == c]
        p = []
        for m in pred.rooms:
            if pred_labels.get(m.instance_id, UNLABELED) != c:
                continue
            if pred_scores is not None:
                m = InstanceMask(m.instance_id, ROOM, m.mask, float(np.clip(pred_scores[m.instance_id], 0, 1)))
            p.append(m)
        ap = ap_from_flags([r.matched for r in match_detections(p, g, iou_threshold)], len(g))[0]
        report.rows[c] = {"ap": ap, "support": len(g)}
        aps.append(ap)
    report.aggregate = {"mAP": float(np.mean(aps)) if aps else 1.0}
    return report
