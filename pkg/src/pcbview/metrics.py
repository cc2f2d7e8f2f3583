"""Detection scoring: greedy matching, PR curves, AP and mAP over IoU thresholds.

Conventions:

* Detections are ranked by confidence, highest first; equal confidences keep
  their input order.
* AP is the area under the all-points interpolated precision envelope.
* mAP averages over classes that have at least one ground truth or at least
  one detection. Classes absent from both are skipped.
* Scalar precision/recall are pooled over all classes at the confidence
  threshold maximizing F1 with IoU 0.5 matching.
* Every ratio with a zero denominator is reported as 0.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_METHOD = "all-points interpolation"


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: BBox


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    box: BBox
    confidence: float

    def __post_init__(self):
        if not (math.isfinite(self.confidence) and 0 <= self.confidence <= 1):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def _ranked(indices: Sequence[int], dets: Sequence[Detection]) -> list[int]:
    return sorted(indices, key=lambda i: -dets[i].confidence)


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float
) -> list[tuple[int, Optional[int]]]:
    """Assign detections to ground truths, per image and class.

    In confidence order, each detection takes the still-unmatched ground
    truth it overlaps most, provided the IoU reaches ``iou_threshold``.
    Returns ``(detection index, gt index or None)`` in detection-index order.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must be in (0, 1]")
    gt_groups = defaultdict(list)
    for gi, g in enumerate(gts):
        gt_groups[(g.image_id, g.class_id)].append(gi)
    det_groups = defaultdict(list)
    for di, d in enumerate(dets):
        det_groups[(d.image_id, d.class_id)].append(di)

    result: dict[int, Optional[int]] = {}
    for key, dis in det_groups.items():
        candidates = gt_groups.get(key, [])
        taken = set()
        for di in _ranked(dis, dets):
            best, best_iou = None, -1.0
            for gi in candidates:
                if gi in taken:
                    continue
                v = iou(dets[di].box, gts[gi].box)
                if v > best_iou:
                    best, best_iou = gi, v
            if best is not None and best_iou >= iou_threshold:
                taken.add(best)
                result[di] = best
            else:
                result[di] = None
    return [(i, result[i]) for i in range(len(dets))]


def pr_curve(tp_flags: Sequence[bool], num_gt: int) -> list[tuple[float, float]]:
    """Cumulative ``(recall, precision)`` points for detections already in
    confidence order."""
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    points = []
    tp = fp = 0
    for flag in tp_flags:
        if flag:
            tp += 1
        else:
            fp += 1
        recall = tp / num_gt if num_gt else 0.0
        points.append((recall, tp / (tp + fp)))
    return points


def average_precision(curve: Sequence[tuple[float, float]]) -> float:
    if not curve:
        return 0.0
    pts = sorted(curve, key=lambda p: p[0])
    recall = np.array([p[0] for p in pts])
    precision = np.array([p[1] for p in pts])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


@dataclass
class MetricsReport:
    class_names: list[str]
    thresholds: tuple[float, ...]
    ap: np.ndarray  # (num_classes, num_thresholds)
    evaluated: np.ndarray  # bool per class: counted in the mAP mean
    num_gt: np.ndarray
    num_det: np.ndarray
    precision: float
    recall: float
    map50: float
    map50_95: float
    tp: int
    fp: int
    fn: int
    conf_threshold: Optional[float]
    pr_curves: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    ap_method: str = AP_METHOD

    def map_at(self, threshold: float) -> float:
        j = self.thresholds.index(round(threshold, 2))
        return _mean_ap(self.ap[:, j], self.evaluated)

    def class_map50_95(self) -> np.ndarray:
        return self.ap.mean(axis=1)


def _mean_ap(col: np.ndarray, mask: np.ndarray) -> float:
    return float(col[mask].mean()) if mask.any() else 0.0


def _operating_point(scored: list[tuple[float, bool]], total_gt: int):
    if not scored:
        return 0.0, 0.0, 0, 0, total_gt, None
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    best = None
    tp = fp = 0
    for pos, i in enumerate(order):
        conf, hit = scored[i]
        tp += hit
        fp += not hit
        last_of_group = pos + 1 == len(order) or scored[order[pos + 1]][0] != conf
        if not last_of_group:
            continue
        f1 = 2 * tp / (2 * tp + fp + (total_gt - tp))
        if best is None or f1 > best[0]:
            best = (f1, tp, fp, conf)
    _, tp, fp, conf = best
    fn = total_gt - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / total_gt if total_gt else 0.0
    return precision, recall, tp, fp, fn, conf


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    classes,
) -> MetricsReport:
    """Score detections against ground truth.

    ``classes`` is either a list of class names or a class count.
    """
    names = [str(i) for i in range(classes)] if isinstance(classes, int) else list(classes)
    nc = len(names)
    for d in dets:
        if not 0 <= d.class_id < nc:
            raise ValueError(f"detection class {d.class_id} outside [0, {nc})")
    for g in gts:
        if not 0 <= g.class_id < nc:
            raise ValueError(f"ground-truth class {g.class_id} outside [0, {nc})")
    thresholds = IOU_THRESHOLDS

    num_gt = np.zeros(nc, dtype=int)
    num_det = np.zeros(nc, dtype=int)
    for g in gts:
        num_gt[g.class_id] += 1
    for d in dets:
        num_det[d.class_id] += 1
    ranked = _ranked(range(len(dets)), dets)

    ap = np.zeros((nc, len(thresholds)))
    curves: dict[int, list[tuple[float, float]]] = {}
    scored50: list[tuple[float, bool]] = []
    for j, t in enumerate(thresholds):
        matched = dict(match_detections(dets, gts, t))
        flags_by_class = defaultdict(list)
        for i in ranked:
            flags_by_class[dets[i].class_id].append(matched[i] is not None)
        for c in range(nc):
            curve = pr_curve(flags_by_class.get(c, []), int(num_gt[c]))
            ap[c, j] = average_precision(curve) if num_gt[c] else 0.0
            if j == 0:
                curves[c] = curve
        if j == 0:
            scored50 = [(dets[i].confidence, matched[i] is not None) for i in range(len(dets))]

    evaluated = (num_gt > 0) | (num_det > 0)
    precision, recall, tp, fp, fn, conf = _operating_point(scored50, int(num_gt.sum()))
    return MetricsReport(
        class_names=names,
        thresholds=thresholds,
        ap=ap,
        evaluated=evaluated,
        num_gt=num_gt,
        num_det=num_det,
        precision=precision,
        recall=recall,
        map50=_mean_ap(ap[:, 0], evaluated),
        map50_95=float(ap[evaluated].mean()) if evaluated.any() else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        conf_threshold=conf,
        pr_curves=curves,
    )
