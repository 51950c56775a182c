"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines interleaved with pytest's own output.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from instance_gen import random_instance
from oracles import evaluate_oracle, mixed_shares
from prompt_fixtures import make_geometry_prompts
from run_fixtures import EXPECTED_DELTAS, TABLE_GROUPS, make_reference_runs
from synthdet.assembly import MixSpec, compute_repetition_factors, mix
from synthdet.cli import main
from synthdet.datamodel import DetectionDataset, Source, Split
from synthdet.dataset_io import load_dataset
from synthdet.edges import EdgeParams, MaskSource, extract_edges
from synthdet.generation import Regime, build_lora_spec
from synthdet.guidance import load_guidance_set
from synthdet.metrics import COCO_THRESHOLDS, average_precision, evaluate
from synthdet.prompting import default_lexicon, strip_geometry
from synthdet.reporting import write_runs
from synthdet.taxonomy import default_taxonomy
from synthdet.trainer import DetectorJobSpec
from synthdet.util import mean_std

TAXONOMY = default_taxonomy()
GOLDEN = Path(__file__).parent / "golden"


def _announce(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# Criterion 1: evaluate() matches the brute-force oracle on 1,000 randomized
# instances to within 1e-9, in under 60 seconds.

def test_map_oracle_equivalence_1000_instances():
    rng = np.random.default_rng(12345)
    started = time.monotonic()
    for _ in range(1000):
        dataset, detections, raw_gts, raw_dets, thresholds = random_instance(rng)
        report = evaluate(dataset, detections, thresholds)
        oracle_ap, oracle_map50, oracle_map5095 = evaluate_oracle(
            raw_gts, raw_dets, thresholds)
        assert set(report.per_class_ap) == set(oracle_ap)
        for key, ap in report.per_class_ap.items():
            assert abs(ap - oracle_ap[key]) < 1e-9, key
        if oracle_map50 is None:
            assert report.map50 is None
        else:
            assert abs(report.map50 - oracle_map50) < 1e-9
        assert abs(report.map5095 - oracle_map5095) < 1e-9
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"oracle-equivalence suite took {elapsed:.1f}s"
    _announce(f"mAP oracle equivalence (1000 instances in {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# Criterion 2: the 2-GT/3-detection fixture's AP at 0.50.

def test_ap_hand_case():
    expected = (51 + 50 * (2 / 3)) / 101
    ap = average_precision([True, False, True], 2)
    assert ap == pytest.approx(expected, abs=1e-9)
    assert ap == pytest.approx(0.83498, abs=5e-6)
    _announce("AP hand-case (51 + 50*(2/3))/101")


# ---------------------------------------------------------------------------
# Criterion 3: map50 >= map5095 on every evaluated fixture.

def test_metric_ordering(mock_run):
    rng = np.random.default_rng(777)
    checked = 0
    for _ in range(100):
        dataset, detections, _, _, _ = random_instance(rng)
        report = evaluate(dataset, detections, COCO_THRESHOLDS)
        assert report.map50 >= report.map5095 - 1e-12
        checked += 1
    # Also over every stored mock-run evaluation report.
    for report_path in sorted(mock_run["root"].glob("runs/*/map_report.json")):
        payload = json.loads(report_path.read_text())
        assert payload["map50"] >= payload["map5095"] - 1e-12
        checked += 1
    _announce(f"metric ordering map50 >= map50:95 ({checked} fixtures)")


# ---------------------------------------------------------------------------
# Criterion 4: report reproduction of the reference delta column and
# mean/std layout from stored per-run metrics.

def test_delta_and_table_reproduction(tmp_path):
    runs_path = tmp_path / "runs.json"
    write_runs(make_reference_runs(), runs_path)
    root = tmp_path / "out"
    assert main(["report", "--output-root", str(root),
                 "--runs-file", str(runs_path)]) == 0

    delta_text = (root / "reports" / "table_delta.txt").read_text()
    expected_order = ["+4.1", "+5.1", "+3.6", "-1.9", "+2.3", "+0.9"]
    positions = [delta_text.find(tok) for tok in expected_order]
    assert all(p >= 0 for p in positions), delta_text
    assert positions == sorted(positions), "delta rows out of order"

    from synthdet.reporting import aggregate_metrics, guided_vs_plain_deltas

    stats = aggregate_metrics(make_reference_runs())
    for regime, expected in EXPECTED_DELTAS.items():
        assert guided_vs_plain_deltas(stats, regime) == expected

    main_text = (root / "reports" / "table_main.txt").read_text()
    for (config, regime, variant), (m50, s50, m5095, s5095) in TABLE_GROUPS.items():
        if variant == "flux_cn":
            continue  # guided arm appears in the delta table
        assert f"{m50:.1f} [{s50:.1f}]" in main_text, (config, regime)
        assert f"{m5095:.1f} [{s5095:.1f}]" in main_text, (config, regime)
    _announce("delta column and mean/std table reproduction")


# ---------------------------------------------------------------------------
# Criterion 5: mixing shares for the reference size combinations, plus the
# round-half-up share bound on randomized size vectors.

def _mix_of(sizes, shares, seed=0):
    from conftest import make_record

    sources = []
    for i, (n, share) in enumerate(zip(sizes, shares)):
        records = tuple(make_record(100000 * i + j, class_id=0,
                                    source=Source.FLUX, split=Split.TRAIN,
                                    confidence=0.9)
                        for j in range(n))
        sources.append((DetectionDataset(taxonomy=TAXONOMY, records=records),
                        share))
    return mix(MixSpec(sources=tuple(sources), seed=seed))


def test_mixing_shares():
    two = _mix_of([360, 2250], [0.5, 0.5])
    assert two.factors == (6, 1)
    assert abs(two.effective_shares[0] - 0.4898) <= 1e-4
    assert abs(two.effective_shares[1] - 0.5102) <= 1e-4

    shares3 = [1 / 3, 1 / 3, 1 - 2 / 3]
    three = _mix_of([120, 2250, 2250], shares3)
    assert three.factors == (19, 1, 1)
    assert abs(three.effective_shares[0] - 0.336) <= 1e-3
    assert abs(three.effective_shares[1] - 0.332) <= 1e-3
    assert abs(three.effective_shares[2] - 0.332) <= 1e-3

    rng = np.random.default_rng(4242)
    for _ in range(200):
        k = int(rng.integers(2, 7))
        sizes = [int(rng.integers(1, 500)) for _ in range(k)]
        factors = compute_repetition_factors(sizes)
        brute = mixed_shares(sizes, factors)
        total = sum(f * n for f, n in zip(factors, sizes))
        bound = max(sizes) / (2 * total)
        for share in brute:
            assert abs(share - 1 / k) <= bound + 1e-12, (sizes, factors)
    _announce("mixing shares (reference combinations + share bound)")


# ---------------------------------------------------------------------------
# Criterion 6: edge extraction behavior.

def test_edge_extraction():
    params = EdgeParams(foreground_mask_source=MaskSource.NONE)

    constant = np.full((64, 64, 3), 128, dtype=np.uint8)
    assert extract_edges(constant, params).edge_count() == 0

    img = np.zeros((64, 64, 3), dtype=np.uint8)
    img[22:42, 22:42] = 255
    edge_map = extract_edges(img, params)
    border = set()
    for i in range(22, 42):
        border.update({(22, i), (41, i), (i, 22), (i, 41)})
    set_pixels = {(r, c) for r, c in zip(*np.nonzero(edge_map.pixels))}
    assert set_pixels
    for r, c in set_pixels:
        assert any(max(abs(r - br), abs(c - bc)) <= 1 for br, bc in border), \
            f"stray edge pixel {(r, c)}"
    covered = sum(1 for br, bc in border
                  if any(max(abs(r - br), abs(c - bc)) <= 1
                         for r, c in set_pixels))
    coverage = covered / len(border)
    assert coverage >= 0.90

    rng = np.random.default_rng(99)
    for _ in range(100):
        noise = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        counts = [
            extract_edges(noise, EdgeParams(
                low_threshold=40.0, high_threshold=high,
                foreground_mask_source=MaskSource.NONE)).edge_count()
            for high in (60.0, 110.0, 160.0, 210.0)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
    _announce(f"edge extraction (border coverage {coverage:.2f}, "
              f"monotone on 100 images)")


# ---------------------------------------------------------------------------
# Criterion 7: geometry stripping leaves no lexicon matches and is idempotent.

def test_geometry_stripping():
    lexicon = default_lexicon()
    rng = np.random.default_rng(31)
    prompts = make_geometry_prompts(50, rng)
    assert len(prompts) == 50
    for prompt in prompts:
        assert lexicon.matches(prompt)  # fixture really is seeded with geometry
        stripped = strip_geometry(prompt, lexicon)
        assert not lexicon.matches(stripped), (prompt, stripped)
        assert strip_geometry(stripped, lexicon) == stripped
    _announce("geometry stripping (50-prompt fixture, idempotent)")


# ---------------------------------------------------------------------------
# Criterion 8: full-scale mock end-to-end run.

@pytest.fixture(scope="module")
def mock_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("mock_e2e")
    started = time.monotonic()
    code = main(["run", "--mock", "--regime", "r24", "--workers", "4",
                 "--output-root", str(root)])
    elapsed = time.monotonic() - started
    assert code == 0
    return {"root": root, "elapsed": elapsed}


def test_mock_end_to_end(mock_run):
    root = mock_run["root"]
    assert mock_run["elapsed"] < 300.0, \
        f"mock run took {mock_run['elapsed']:.0f}s"

    for variant in ("flux", "flux_cn"):
        manifest = root / "datasets" / "r24" / f"{variant}.json"
        dataset = load_dataset(manifest)  # load re-validates every invariant
        assert len(dataset.records) == 15 * 150
        assert all(len(rec.annotations) == 1 for rec in dataset.records)
        counts = dataset.class_counts()
        assert all(counts[cid] == 150 for cid in TAXONOMY.class_ids())

    # Guided boxes are bit-identical to their guidance sources.
    cn = load_dataset(root / "datasets" / "r24" / "flux_cn.json")
    pairs_by_class: dict[int, list] = {}
    for pair in load_guidance_set(root / "edges"):
        pairs_by_class.setdefault(pair.class_id, []).append(pair)
    for rec in cn.records:
        pair_id = int(rec.extras["guidance_pair_id"])
        cid = rec.annotations[0].class_id
        source_box = pairs_by_class[cid][pair_id].source_annotation.box
        assert rec.annotations[0].box == source_box
    _announce(f"mock end-to-end run ({mock_run['elapsed']:.0f}s, "
              f"2x2250 validated records, boxes bit-identical)")


# ---------------------------------------------------------------------------
# Criterion 9: job-spec fidelity against golden JSON.

def test_job_spec_fidelity():
    from conftest import make_record
    from synthdet.prompting import CaptionPair

    records = []
    pairs = []
    for i in range(24):
        rec = make_record(i + 1, class_id=0)
        records.append(rec.__class__(**{**rec.__dict__, "uri": f"img_{i:03d}.png"}))
        pairs.append(CaptionPair(image_id=i + 1, caption=f"caption {i}",
                                 class_id=0))
    lora = build_lora_spec(0, pairs, Regime.R24, records)
    lora_golden = json.loads((GOLDEN / "lora_spec_r24.json").read_text())
    assert lora.to_json() == lora_golden
    assert (lora.rank, lora.alpha, lora.steps, lora.batch_size) == (32, 32, 2000, 1)
    assert (lora.learning_rate, lora.weight_decay) == (4e-4, 1e-4)

    detector = DetectorJobSpec(train_manifest="<train>", val_manifest="<val>",
                               seed=0, run_id="demo-run-0")
    detector_golden = json.loads((GOLDEN / "detector_spec.json").read_text())
    assert detector.to_json() == detector_golden
    assert (detector.input_resolution, detector.epochs,
            detector.batch_size) == (960, 80, 12)
    assert (detector.head_lr, detector.backbone_lr) == (1e-5, 3e-5)
    _announce("job-spec fidelity vs golden JSON")


# ---------------------------------------------------------------------------
# Criterion 10: aggregation arithmetic.

def test_aggregation_exactness():
    assert mean_std([62, 63, 64]) == (63.0, 1.0)
    assert mean_std([71.5]) == (71.5, 0.0)
    _announce("aggregation mean/std exactness")
