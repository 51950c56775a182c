"""Independent brute-force reference implementations used only by tests.

Everything here is written with plain loops over plain tuples so that the
production code paths (numpy cumsums, envelope interpolation, grouped
matching) are checked against a second, structurally different computation.
"""

from __future__ import annotations


def box_iou(a, b):
    """a, b: (x_min, y_min, x_max, y_max) tuples."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def match_flags(gts, dets, thr):
    """Greedy matching over raw tuples.

    gts:  list of (image_id, box)
    dets: list of (image_id, box, confidence), any order
    Returns TP flags in descending-confidence order (stable) and the number
    of ground-truth boxes left unmatched.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    taken = [False] * len(gts)
    flags = []
    for di in order:
        image_id, box, _conf = dets[di]
        best = -1
        best_iou = 0.0
        for gi in range(len(gts)):
            if taken[gi] or gts[gi][0] != image_id:
                continue
            o = box_iou(box, gts[gi][1])
            if o > best_iou:
                best_iou = o
                best = gi
        if best >= 0 and best_iou >= thr:
            taken[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, taken.count(True)


def ap_101(flags, gt_count):
    """101-point interpolated AP by direct grid scanning."""
    if gt_count == 0:
        return None if not flags else 0.0
    if not flags:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(flags):
        if flag:
            tp += 1
        precisions.append(tp / (k + 1))
        recalls.append(tp / gt_count)
    total = 0.0
    for i in range(101):
        r = i / 100
        best = 0.0
        for k in range(len(flags)):
            if recalls[k] >= r and precisions[k] > best:
                best = precisions[k]
        total += best
    return total / 101


def evaluate_oracle(gts, dets, thresholds):
    """Reference evaluator over raw tuples.

    gts:  list of (image_id, class_id, box)
    dets: list of (image_id, class_id, box, confidence)
    Returns (per_class_ap dict keyed (class_id, thr), map50, map5095) with
    map50 None when 0.50 is not in thresholds. Classes with neither ground
    truth nor detections are skipped.
    """
    class_ids = sorted({g[1] for g in gts} | {d[1] for d in dets})
    per_class_ap = {}
    all_aps = []
    aps_50 = []
    for cid in class_ids:
        cls_gts = [(g[0], g[2]) for g in gts if g[1] == cid]
        cls_dets = [(d[0], d[2], d[3]) for d in dets if d[1] == cid]
        for thr in thresholds:
            flags, _ = match_flags(cls_gts, cls_dets, thr)
            ap = ap_101(flags, len(cls_gts))
            if ap is None:
                ap = 0.0
            per_class_ap[(cid, thr)] = ap
            all_aps.append(ap)
            if thr == 0.50:
                aps_50.append(ap)
    if not class_ids:
        has_50 = any(t == 0.50 for t in thresholds)
        return {}, (0.0 if has_50 else None), 0.0
    map50 = sum(aps_50) / len(aps_50) if aps_50 else None
    map5095 = sum(all_aps) / len(all_aps)
    return per_class_ap, map50, map5095


def mixed_shares(sizes, factors):
    """Effective per-source shares by literally materializing the repetition."""
    expanded = []
    for idx, (n, f) in enumerate(zip(sizes, factors)):
        expanded.extend([idx] * (n * f))
    total = len(expanded)
    return [expanded.count(i) / total for i in range(len(sizes))]
