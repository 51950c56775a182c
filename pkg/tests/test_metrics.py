from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import evaluate_oracle
from instance_gen import random_instance
from synthdet.datamodel import (Annotation, BoundingBox, DetectionDataset,
                                ImageRecord, Source, Split)
from synthdet.metrics import (COCO_THRESHOLDS, AggregateReport, Detection,
                              GroundTruth, MetricStats, aggregate_runs,
                              average_precision, delta_table, evaluate, iou,
                              match_detections)
from synthdet.taxonomy import default_taxonomy

TAXONOMY = default_taxonomy()


def box(x0, y0, x1, y1):
    return BoundingBox(x0, y0, x1, y1)


# ---------------------------------------------------------------- iou

def test_iou_identical():
    b = box(0, 0, 10, 10)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0


def test_iou_one_third():
    # intersection 50, union 150
    assert iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)


boxes_st = st.builds(
    lambda x, y, w, h: BoundingBox(x, y, x + w, y + h),
    st.floats(0, 100), st.floats(0, 100),
    st.floats(1, 100), st.floats(1, 100),
)


@given(boxes_st, boxes_st)
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)


@given(boxes_st)
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------- match_detections

def test_match_single_tp():
    gts = [GroundTruth(1, box(0, 0, 10, 10), 0)]
    dets = [Detection(1, box(0, 0, 10, 9), 0, 0.9)]
    result = match_detections(gts, dets, 0.5)
    assert result.tp_flags == (True,)
    assert result.unmatched_gt == 0


def test_match_second_detection_is_fp():
    gts = [GroundTruth(1, box(0, 0, 10, 10), 0)]
    dets = [Detection(1, box(0, 0, 10, 9), 0, 0.9),
            Detection(1, box(0, 0, 10, 9), 0, 0.8)]
    result = match_detections(gts, dets, 0.5)
    assert result.tp_flags == (True, False)


def test_match_prefers_highest_iou_gt():
    gts = [GroundTruth(1, box(0, 0, 10, 10), 0),      # IoU ~0.6 with det
           GroundTruth(1, box(0, 0, 10, 14), 0)]      # IoU ~0.7 with det
    det_box = box(0, 0, 10, 12)
    assert iou(det_box, gts[0].box) < iou(det_box, gts[1].box)
    result = match_detections(gts, [Detection(1, det_box, 0, 0.9)], 0.5)
    assert result.tp_flags == (True,)
    assert result.unmatched_gt == 1


def test_match_respects_image_and_class():
    gts = [GroundTruth(1, box(0, 0, 10, 10), 0)]
    wrong_image = Detection(2, box(0, 0, 10, 10), 0, 0.9)
    wrong_class = Detection(1, box(0, 0, 10, 10), 1, 0.8)
    result = match_detections(gts, [wrong_image, wrong_class], 0.5)
    assert result.tp_flags == (False, False)
    assert result.unmatched_gt == 1


# ------------------------------------------------------ average_precision

def test_ap_single_tp():
    assert average_precision([True], 1) == pytest.approx(1.0, abs=1e-12)


def test_ap_single_fp():
    assert average_precision([False], 1) == 0.0


def test_ap_hand_case_two_gts():
    # flags ordered by confidence 0.9, 0.8, 0.7
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert average_precision([True, False, True], 2) == pytest.approx(expected, abs=1e-9)


def test_ap_no_gt_no_dets_is_undefined():
    assert average_precision([], 0) is None


def test_ap_no_gt_with_dets_is_zero():
    assert average_precision([False, False], 0) == 0.0


def test_ap_no_dets_with_gt_is_zero():
    assert average_precision([], 3) == 0.0


# ---------------------------------------------------------------- evaluate

def _single_class_dataset(n_images=4):
    records = []
    for image_id in range(1, n_images + 1):
        ann = Annotation(box=box(10, 10, 60, 60), class_id=0, provenance=Source.REAL)
        records.append(ImageRecord(image_id=image_id, uri=f"{image_id}.png",
                                   width=100, height=100, annotations=(ann,),
                                   split=Split.TEST, source=Source.REAL))
    return DetectionDataset(taxonomy=TAXONOMY, records=tuple(records))


def test_evaluate_perfect_predictor():
    ds = _single_class_dataset()
    dets = [Detection(rec.image_id, rec.annotations[0].box, 0, 1.0)
            for rec in ds.records]
    report = evaluate(ds, dets)
    assert report.map50 == pytest.approx(1.0, abs=1e-12)
    assert report.map5095 == pytest.approx(1.0, abs=1e-12)
    assert report.counts[0].tp == 4
    assert report.counts[0].fp == 0
    assert report.counts[0].fn == 0


def test_evaluate_empty_detections():
    ds = _single_class_dataset()
    report = evaluate(ds, [])
    assert report.map50 == 0.0
    assert report.map5095 == 0.0
    assert report.counts[0].fn == 4


def test_evaluate_unknown_image_id():
    ds = _single_class_dataset()
    with pytest.raises(KeyError, match="unknown image id"):
        evaluate(ds, [Detection(999, box(0, 0, 5, 5), 0, 0.5)])


def test_evaluate_unknown_class_id():
    ds = _single_class_dataset()
    with pytest.raises(KeyError, match="unknown class id"):
        evaluate(ds, [Detection(1, box(0, 0, 5, 5), 99, 0.5)])


def test_evaluate_skips_vacuous_classes():
    ds = _single_class_dataset()
    report = evaluate(ds, [])
    assert report.evaluated_class_ids == (0,)
    assert set(report.skipped_class_ids) == set(range(1, 15))


def test_evaluate_matches_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(150):
        ds, dets, raw_gts, raw_dets, thresholds = random_instance(rng)
        report = evaluate(ds, dets, thresholds)
        oracle_ap, oracle_map50, oracle_map5095 = evaluate_oracle(
            raw_gts, raw_dets, thresholds)
        assert set(report.per_class_ap) == set(oracle_ap)
        for key, ap in report.per_class_ap.items():
            assert ap == pytest.approx(oracle_ap[key], abs=1e-9), key
        if oracle_map50 is None:
            assert report.map50 is None
        else:
            assert report.map50 == pytest.approx(oracle_map50, abs=1e-9)
        assert report.map5095 == pytest.approx(oracle_map5095, abs=1e-9)


def test_map50_at_least_map5095_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(40):
        ds, dets, _, _, _ = random_instance(rng)
        report = evaluate(ds, dets, COCO_THRESHOLDS)
        assert report.map50 >= report.map5095 - 1e-12


def test_ap_monotone_in_threshold_on_random_instances():
    rng = np.random.default_rng(13)
    for _ in range(25):
        ds, dets, _, _, _ = random_instance(rng)
        report = evaluate(ds, dets, COCO_THRESHOLDS)
        for cid in report.evaluated_class_ids:
            aps = [report.per_class_ap[(cid, t)] for t in COCO_THRESHOLDS]
            for lo, hi in zip(aps, aps[1:]):
                assert hi <= lo + 1e-12


def test_confidence_scaling_leaves_ap_unchanged():
    rng = np.random.default_rng(17)
    for _ in range(20):
        ds, dets, _, _, thresholds = random_instance(rng)
        report = evaluate(ds, dets, thresholds)
        scale = float(rng.uniform(0.1, 1.0))
        scaled = [Detection(d.image_id, d.box, d.class_id, d.confidence * scale)
                  for d in dets]
        report2 = evaluate(ds, scaled, thresholds)
        for key, ap in report.per_class_ap.items():
            assert report2.per_class_ap[key] == pytest.approx(ap, abs=1e-12)


def test_duplicate_tp_detection_never_helps():
    rng = np.random.default_rng(19)
    checked = 0
    while checked < 10:
        ds, dets, _, _, thresholds = random_instance(rng)
        if not dets:
            continue
        report = evaluate(ds, dets, thresholds)
        dup = dets[int(rng.integers(0, len(dets)))]
        report2 = evaluate(ds, dets + [dup], thresholds)
        for key, ap in report2.per_class_ap.items():
            assert ap <= report.per_class_ap[key] + 1e-12
        checked += 1


# ------------------------------------------------- aggregation and deltas

def test_aggregate_three_runs():
    reports = [_report_with(map50=v / 100, map5095=v / 100) for v in (62, 63, 64)]
    agg = aggregate_runs(reports, config="demo")
    stats = agg.per_config["demo"]
    assert stats.map50_mean == pytest.approx(0.63, abs=1e-12)
    assert stats.map50_std == pytest.approx(0.01, abs=1e-12)
    assert agg.run_count == 3


def test_aggregate_single_run_std_zero():
    agg = aggregate_runs([_report_with(map50=0.5, map5095=0.4)])
    stats = agg.per_config["default"]
    assert stats.map50_mean == 0.5
    assert stats.map50_std == 0.0


def test_aggregate_identical_runs_std_zero():
    reports = [_report_with(map50=0.7, map5095=0.6)] * 3
    stats = aggregate_runs(reports).per_config["default"]
    assert stats.map50_std == 0.0
    assert stats.map5095_std == 0.0


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        aggregate_runs([])


def _report_with(map50, map5095):
    from synthdet.metrics import MapReport
    return MapReport(per_class_ap={}, map50=map50, map5095=map5095, counts={},
                     evaluated_class_ids=())


def _agg(**configs):
    per = {name: MetricStats(map50_mean=m, map50_std=0.0,
                             map5095_mean=m, map5095_std=0.0)
           for name, m in configs.items()}
    return AggregateReport(per_config=per, run_count=3)


def test_delta_positive():
    rows = delta_table(_agg(only=48.8), _agg(only=52.9))
    assert rows == [("only", 4.1)]


def test_delta_negative():
    rows = delta_table(_agg(only=57.7), _agg(only=55.8))
    assert rows == [("only", -1.9)]


def test_delta_zero():
    assert delta_table(_agg(a=50.0), _agg(a=50.0)) == [("a", 0.0)]


def test_delta_config_mismatch():
    with pytest.raises(ValueError, match="config mismatch"):
        delta_table(_agg(a=1.0), _agg(b=1.0))


# ----------------------------------------------------------- input checks

def test_detection_confidence_bounds():
    with pytest.raises(ValueError):
        Detection(1, box(0, 0, 5, 5), 0, 1.5)


@given(st.lists(st.booleans(), max_size=30), st.integers(0, 40))
@settings(max_examples=60)
def test_ap_is_bounded(flags, gt_count):
    ap = average_precision(flags, gt_count)
    if ap is not None:
        assert 0.0 <= ap <= 1.0
