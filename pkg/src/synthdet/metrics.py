"""Detection evaluation from first principles.

IoU, confidence-ordered greedy matching, 101-point interpolated average
precision, mAP at 0.50 and averaged over the 0.50:0.05:0.95 threshold grid,
plus multi-run aggregation and difference tables.

Matching protocol: detections are processed in descending confidence order
(stable, so equal confidences keep their input order); each detection pairs
with the not-yet-matched same-class ground-truth box in its image that has
the highest IoU, provided that IoU reaches the threshold. Ties on IoU go to
the earliest ground-truth box.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import BoundingBox, DetectionDataset
from .util import mean_std

# Average over r in {0.00, 0.01, ..., 1.00}; each grid point is exactly i/100.
RECALL_GRID = np.arange(101) / 100.0

COCO_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Detection:
    """A predicted box with a confidence score."""

    image_id: int
    box: BoundingBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    """A ground-truth box, confidence-free by definition."""

    image_id: int
    box: BoundingBox
    class_id: int


@dataclass(frozen=True)
class MatchResult:
    """Per-detection TP/FP flags in descending-confidence order."""

    tp_flags: tuple[bool, ...]
    confidences: tuple[float, ...]
    unmatched_gt: int


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MapReport:
    """Per-class AP at each threshold plus the two headline means.

    ``map50`` is None when 0.50 was not among the evaluated thresholds.
    Classes with neither ground truth nor detections are excluded from the
    means and listed in ``skipped_class_ids``.
    """

    per_class_ap: Mapping[tuple[int, float], float]
    map50: float | None
    map5095: float
    counts: Mapping[int, ClassCounts]
    evaluated_class_ids: tuple[int, ...]
    skipped_class_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_class_ap", dict(self.per_class_ap))
        object.__setattr__(self, "counts", dict(self.counts))

    def to_json(self) -> dict:
        return {
            "map50": self.map50,
            "map5095": self.map5095,
            "per_class_ap": {
                f"{cid}@{thr:.2f}": ap
                for (cid, thr), ap in sorted(self.per_class_ap.items())
            },
            "counts": {
                str(cid): {"tp": c.tp, "fp": c.fp, "fn": c.fn}
                for cid, c in sorted(self.counts.items())
            },
            "evaluated_class_ids": list(self.evaluated_class_ids),
            "skipped_class_ids": list(self.skipped_class_ids),
        }


@dataclass(frozen=True)
class MetricStats:
    map50_mean: float
    map50_std: float
    map5095_mean: float
    map5095_std: float


@dataclass(frozen=True)
class AggregateReport:
    """Mean and sample std of the two mAP metrics per configuration."""

    per_config: Mapping[str, MetricStats]
    run_count: int

    def __post_init__(self):
        object.__setattr__(self, "per_config", dict(self.per_config))


def read_detections(path: str | Path) -> list[Detection]:
    """Parse detector predictions from JSON lines.

    Each line is ``{image_id, box, class_id, confidence}`` with the box in
    corner form [x_min, y_min, x_max, y_max].
    """
    detections = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            detections.append(Detection(
                image_id=int(payload["image_id"]),
                box=BoundingBox(*(float(v) for v in payload["box"])),
                class_id=int(payload["class_id"]),
                confidence=float(payload["confidence"])))
    return detections


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def match_detections(gts: Sequence[GroundTruth], dets: Sequence[Detection],
                     iou_thr: float) -> MatchResult:
    """Greedy confidence-ordered matching of detections to ground truth."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    gt_by_image: dict[tuple[int, int], list[tuple[int, GroundTruth]]] = {}
    for gi, gt in enumerate(gts):
        gt_by_image.setdefault((gt.image_id, gt.class_id), []).append((gi, gt))

    matched_gt: set[int] = set()
    flags: list[bool] = []
    confs: list[float] = []
    for di in order:
        det = dets[di]
        confs.append(det.confidence)
        best_iou = 0.0
        best_gi = None
        for gi, gt in gt_by_image.get((det.image_id, det.class_id), ()):
            if gi in matched_gt:
                continue
            overlap = iou(det.box, gt.box)
            if overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi is not None and best_iou >= iou_thr:
            matched_gt.add(best_gi)
            flags.append(True)
        else:
            flags.append(False)
    return MatchResult(tuple(flags), tuple(confs), len(gts) - len(matched_gt))


def average_precision(tp_flags: Sequence[bool], gt_count: int) -> float | None:
    """101-point interpolated AP from confidence-ordered TP/FP flags.

    Returns None (metric undefined) when there is neither ground truth nor
    any detection. With ground truth but no detections, or detections but no
    ground truth, AP is 0.0.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be non-negative")
    if gt_count == 0:
        return None if not tp_flags else 0.0
    if not tp_flags:
        return 0.0

    flags = np.asarray(tp_flags, dtype=np.int64)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1 - flags)
    recall = tp_cum / gt_count
    precision = tp_cum / (tp_cum + fp_cum)

    # Interpolated precision at r is the max precision among points with
    # recall >= r: a running max taken from the right.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    recalls = recall.tolist()
    interpolated = np.zeros(len(RECALL_GRID))
    for i, r in enumerate(RECALL_GRID):
        k = bisect_left(recalls, r)
        if k < len(recalls):
            interpolated[i] = envelope[k]
    return float(np.sum(interpolated) / len(RECALL_GRID))


def evaluate(gt_dataset: DetectionDataset, detections: Sequence[Detection],
             thresholds: Sequence[float] = COCO_THRESHOLDS) -> MapReport:
    """Score detections against a dataset's annotations.

    Every detection must reference an image id and class id known to the
    dataset; anything else raises KeyError naming the offending reference.
    """
    if not thresholds:
        raise ValueError("at least one IoU threshold is required")
    known_images = {rec.image_id for rec in gt_dataset.records}
    for det in detections:
        if det.image_id not in known_images:
            raise KeyError(f"detection references unknown image id {det.image_id}")
        if not gt_dataset.taxonomy.has_id(det.class_id):
            raise KeyError(f"detection references unknown class id {det.class_id}")

    gts = [
        GroundTruth(rec.image_id, ann.box, ann.class_id)
        for rec in gt_dataset.records
        for ann in rec.annotations
    ]
    gt_per_class: dict[int, list[GroundTruth]] = {}
    for gt in gts:
        gt_per_class.setdefault(gt.class_id, []).append(gt)
    det_per_class: dict[int, list[Detection]] = {}
    for det in detections:
        det_per_class.setdefault(det.class_id, []).append(det)

    evaluated = sorted(set(gt_per_class) | set(det_per_class))
    skipped = tuple(cid for cid in gt_dataset.taxonomy.class_ids()
                    if cid not in evaluated)

    per_class_ap: dict[tuple[int, float], float] = {}
    counts: dict[int, ClassCounts] = {}
    ap_values: list[float] = []
    ap50_values: list[float] = []
    has_50 = any(thr == 0.50 for thr in thresholds)

    for cid in evaluated:
        cls_gts = gt_per_class.get(cid, [])
        cls_dets = det_per_class.get(cid, [])
        for thr in thresholds:
            result = match_detections(cls_gts, cls_dets, thr)
            ap = average_precision(result.tp_flags, len(cls_gts))
            ap = 0.0 if ap is None else ap  # unreachable for evaluated classes
            per_class_ap[(cid, thr)] = ap
            ap_values.append(ap)
            if thr == 0.50:
                ap50_values.append(ap)
                tp = sum(result.tp_flags)
                counts[cid] = ClassCounts(tp=tp, fp=len(result.tp_flags) - tp,
                                          fn=result.unmatched_gt)

    if not evaluated:
        return MapReport(per_class_ap={}, map50=0.0 if has_50 else None,
                         map5095=0.0, counts={}, evaluated_class_ids=(),
                         skipped_class_ids=skipped)

    map50 = sum(ap50_values) / len(ap50_values) if has_50 else None
    map5095 = sum(ap_values) / len(ap_values)
    return MapReport(per_class_ap=per_class_ap, map50=map50, map5095=map5095,
                     counts=counts, evaluated_class_ids=tuple(evaluated),
                     skipped_class_ids=skipped)


def aggregate_runs(reports: Sequence[MapReport], config: str = "default") -> AggregateReport:
    """Mean and sample std of map50/map5095 over repeated runs of one config."""
    if not reports:
        raise ValueError("aggregate_runs requires at least one report")
    map50s = [r.map50 for r in reports]
    if any(v is None for v in map50s):
        raise ValueError("every report must include an AP at threshold 0.50")
    m50, s50 = mean_std(map50s)
    m5095, s5095 = mean_std([r.map5095 for r in reports])
    stats = MetricStats(map50_mean=m50, map50_std=s50,
                        map5095_mean=m5095, map5095_std=s5095)
    return AggregateReport(per_config={config: stats}, run_count=len(reports))


def delta_table(baseline: AggregateReport, variant: AggregateReport) -> list[tuple[str, float]]:
    """Per-config difference in mean map50, variant minus baseline, 1 decimal."""
    base_cfgs = set(baseline.per_config)
    var_cfgs = set(variant.per_config)
    if base_cfgs != var_cfgs:
        raise ValueError(
            f"config mismatch: baseline has {sorted(base_cfgs - var_cfgs)} extra, "
            f"variant has {sorted(var_cfgs - base_cfgs)} extra")
    rows = []
    for cfg in baseline.per_config:  # preserve the baseline's row order
        delta = variant.per_config[cfg].map50_mean - baseline.per_config[cfg].map50_mean
        rows.append((cfg, round(delta, 1)))
    return rows
