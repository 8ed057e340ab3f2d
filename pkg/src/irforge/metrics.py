"""Single-class detection evaluation: IoU matching, average precision, recall."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .types import BBox, read_boxes

INTERPOLATIONS = ("elevenpoint", "allpoint")


class NoGroundTruthError(ValueError):
    """AP and recall are undefined without ground-truth targets."""


def _coords(b) -> Tuple[float, float, float, float]:
    if isinstance(b, BBox):
        return b.as_tuple()
    x0, y0, x1, y1 = (float(v) for v in b)
    return x0, y0, x1, y1


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    box: Tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        box = _coords(self.box)
        if not all(math.isfinite(v) for v in box) or box[0] >= box[2] or box[1] >= box[3]:
            raise ValueError(f"invalid box {box}")
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "score", float(self.score))


def iou(a, b) -> float:
    """Intersection over union of two half-open boxes."""
    ax0, ay0, ax1, ay1 = _coords(a)
    bx0, by0, bx1, by1 = _coords(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def _score_order(scores: Sequence[float]) -> List[int]:
    # Stable sort keeps input order among equal scores.
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def match_detections(preds: Sequence[DetectionRecord], gts: Sequence, iou_thr: float) -> List[bool]:
    """Greedy score-ordered matching for one image.

    Returns a TP flag per prediction, aligned with the input order.
    """
    labels = [False] * len(preds)
    taken = [False] * len(gts)
    for i in _score_order([p.score for p in preds]):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i].box, g)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= iou_thr:
            taken[best] = True
            labels[i] = True
    return labels


def _group(preds: Iterable[DetectionRecord]) -> "OrderedDict[str, List[int]]":
    groups: "OrderedDict[str, List[int]]" = OrderedDict()
    for i, p in enumerate(preds):
        groups.setdefault(p.image_id, []).append(i)
    return groups


def _labels(preds: Sequence[DetectionRecord], gts: Mapping[str, Sequence], iou_thr: float) -> List[bool]:
    labels = [False] * len(preds)
    for image_id, idx in _group(preds).items():
        sub = [preds[i] for i in idx]
        for i, tp in zip(idx, match_detections(sub, gts.get(image_id, ()), iou_thr)):
            labels[i] = tp
    return labels


def _n_gt(gts: Mapping[str, Sequence]) -> int:
    n = sum(len(v) for v in gts.values())
    if n == 0:
        raise NoGroundTruthError("no ground-truth boxes")
    return n


def pr_curve(preds: Sequence[DetectionRecord], gts: Mapping[str, Sequence], iou_thr: float):
    """Precision and recall after each prediction, in descending score order."""
    preds = list(preds)
    n_gt = _n_gt(gts)
    labels = _labels(preds, gts, iou_thr)
    order = _score_order([p.score for p in preds])
    tp = np.cumsum([labels[i] for i in order], dtype=np.float64)
    fp = np.cumsum([not labels[i] for i in order], dtype=np.float64)
    if not preds:
        return np.zeros(0), np.zeros(0)
    return tp / (tp + fp), tp / n_gt


def ap_from_curve(precision, recall, interpolation: str = "allpoint") -> float:
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    if interpolation == "elevenpoint":
        points = []
        for i in range(11):
            t = i / 10
            hit = precision[recall >= t]
            points.append(float(hit.max()) if hit.size else 0.0)
        # fsum keeps rational fixtures exact to the last bit.
        return math.fsum(points) / 11
    if interpolation == "allpoint":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.flatnonzero(mrec[1:] != mrec[:-1])
        return math.fsum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1])
    raise ValueError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")


def average_precision(preds: Sequence[DetectionRecord], gts: Mapping[str, Sequence],
                      iou_thr: float = 0.5, interpolation: str = "allpoint") -> float:
    """AP over all images; single class, so this is also the mAP.

    Raises :class:`NoGroundTruthError` when ``gts`` holds no boxes.
    """
    if interpolation not in INTERPOLATIONS:
        raise ValueError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")
    precision, recall = pr_curve(preds, gts, iou_thr)
    return ap_from_curve(precision, recall, interpolation)


def recall_at(preds: Sequence[DetectionRecord], gts: Mapping[str, Sequence], iou_thr: float = 0.5) -> float:
    """Matched ground truths over all ground truths, with no score cut-off."""
    preds = list(preds)
    n_gt = _n_gt(gts)
    return sum(_labels(preds, gts, iou_thr)) / n_gt


@dataclass
class EvalReport:
    ap_05: float
    ap_075: float
    recall_05: float
    recall_075: float
    ap: Dict[str, Dict[str, float]] = field(default_factory=dict)
    counts: Dict[str, Dict[str, Dict[str, int]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        rows = ["metric,value"]
        for name in ("ap_05", "ap_075", "recall_05", "recall_075"):
            rows.append(f"{name},{getattr(self, name):.6f}")
        for thr, per in self.ap.items():
            for interp, v in per.items():
                rows.append(f"ap@{thr}/{interp},{v:.6f}")
        return "\n".join(rows) + "\n"


def _counts(preds, gts, iou_thr) -> Dict[str, Dict[str, int]]:
    labels = _labels(preds, gts, iou_thr)
    out = {image_id: {"tp": 0, "fp": 0, "fn": len(boxes)} for image_id, boxes in gts.items()}
    for p, tp in zip(preds, labels):
        c = out.setdefault(p.image_id, {"tp": 0, "fp": 0, "fn": 0})
        if tp:
            c["tp"] += 1
            c["fn"] -= 1
        else:
            c["fp"] += 1
    return dict(sorted(out.items()))


def evaluate(preds: Sequence[DetectionRecord], gts: Mapping[str, Sequence]) -> EvalReport:
    """Headline metrics at IoU 0.5 and 0.75, with both interpolations at both thresholds.

    The headline ``ap_05`` uses 11-point interpolation and ``ap_075`` uses
    all-point interpolation.
    """
    preds = list(preds)
    table = {
        str(thr): {interp: average_precision(preds, gts, thr, interp) for interp in INTERPOLATIONS}
        for thr in (0.5, 0.75)
    }
    return EvalReport(
        ap_05=table["0.5"]["elevenpoint"],
        ap_075=table["0.75"]["allpoint"],
        recall_05=recall_at(preds, gts, 0.5),
        recall_075=recall_at(preds, gts, 0.75),
        ap=table,
        counts={str(thr): _counts(preds, gts, thr) for thr in (0.5, 0.75)},
    )


def load_predictions(path) -> List[DetectionRecord]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of detections")
    try:
        return [DetectionRecord(d["image_id"], tuple(d["bbox"]), d["score"]) for d in data]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed detection record ({exc})") from exc


def load_ground_truth(root) -> Dict[str, List[BBox]]:
    """Boxes per image id from ``<root>/annotations/<id>/boxes.txt``."""
    ann_root = Path(root) / "annotations"
    if not ann_root.is_dir():
        raise FileNotFoundError(f"{ann_root}: no annotations directory")
    return {d.name: read_boxes(d / "boxes.txt") for d in sorted(ann_root.iterdir()) if d.is_dir()}
