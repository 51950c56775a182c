"""Randomized small evaluation instances shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from synthdet.datamodel import (Annotation, BoundingBox, DetectionDataset,
                                ImageRecord, Source, Split)
from synthdet.metrics import COCO_THRESHOLDS, Detection
from synthdet.taxonomy import default_taxonomy

_TAXONOMY = default_taxonomy()


def _random_box(rng, width, height):
    x0 = float(rng.uniform(0, width - 8))
    y0 = float(rng.uniform(0, height - 8))
    w = float(rng.uniform(4, width - x0))
    h = float(rng.uniform(4, height - y0))
    return (x0, y0, x0 + w, y0 + h)


def _jitter(rng, box, scale):
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    dx = float(rng.normal(0, scale * w))
    dy = float(rng.normal(0, scale * h))
    dw = float(rng.normal(1, scale))
    dh = float(rng.normal(1, scale))
    nx0 = max(0.0, x0 + dx)
    ny0 = max(0.0, y0 + dy)
    nx1 = nx0 + max(1.0, w * abs(dw))
    ny1 = ny0 + max(1.0, h * abs(dh))
    return (nx0, ny0, nx1, ny1)


def random_instance(rng: np.random.Generator):
    """A random evaluation problem within the small-instance envelope.

    Up to 5 classes, up to 50 images, up to 10 boxes per image. Returns
    (dataset, detections, raw_gts, raw_dets, thresholds) where the raw lists
    use plain tuples for the oracle.
    """
    n_classes = int(rng.integers(1, 6))
    class_ids = sorted(rng.choice(_TAXONOMY.class_ids(), size=n_classes,
                                  replace=False).tolist())
    n_images = int(rng.integers(1, 51))

    records = []
    raw_gts = []
    raw_dets = []
    max_total = 500  # keeps the suite fast; still exercises crowded images
    total_boxes = 0
    for image_id in range(1, n_images + 1):
        width = int(rng.integers(64, 257))
        height = int(rng.integers(64, 257))
        n_gt = int(min(rng.integers(0, 5), 10))
        annotations = []
        gt_boxes = []
        for _ in range(n_gt):
            if total_boxes >= max_total:
                break
            cid = int(rng.choice(class_ids))
            box = _random_box(rng, width, height)
            annotations.append(Annotation(box=BoundingBox(*box), class_id=cid,
                                          provenance=Source.REAL))
            raw_gts.append((image_id, cid, box))
            gt_boxes.append((cid, box))
            total_boxes += 1
        records.append(ImageRecord(
            image_id=image_id, uri=f"im/{image_id}.png", width=width,
            height=height, annotations=tuple(annotations), split=Split.TEST,
            source=Source.REAL))

        # Detections: jittered truths (some duplicated), plus noise boxes,
        # sometimes with confidences rounded hard enough to collide.
        n_det = 0
        for cid, box in gt_boxes:
            if rng.random() < 0.8 and n_det < 10:
                conf = round(float(rng.uniform(0.05, 1.0)), 2)
                dcid = cid if rng.random() < 0.9 else int(rng.choice(class_ids))
                jb = _jitter(rng, box, scale=float(rng.uniform(0.0, 0.25)))
                raw_dets.append((image_id, dcid, jb, conf))
                n_det += 1
                if rng.random() < 0.15 and n_det < 10:
                    raw_dets.append((image_id, dcid, jb,
                                     round(float(rng.uniform(0.05, 1.0)), 2)))
                    n_det += 1
        for _ in range(int(rng.integers(0, 3))):
            if n_det >= 10:
                break
            cid = int(rng.choice(class_ids))
            raw_dets.append((image_id, cid, _random_box(rng, width, height),
                             round(float(rng.uniform(0.05, 1.0)), 2)))
            n_det += 1

    n_thr = int(rng.integers(1, 11))
    thresholds = sorted(rng.choice(COCO_THRESHOLDS, size=n_thr,
                                   replace=False).tolist())

    dataset = DetectionDataset(taxonomy=_TAXONOMY, records=tuple(records))
    detections = [Detection(image_id=i, box=BoundingBox(*b), class_id=c,
                            confidence=conf)
                  for (i, c, b, conf) in raw_dets]
    return dataset, detections, raw_gts, raw_dets, thresholds
