from __future__ import annotations

import csv
import io

import pytest

from run_fixtures import EXPECTED_DELTAS, TABLE_GROUPS, make_reference_runs
from synthdet.reporting import (RunMetrics, aggregate_metrics, append_run,
                                guided_vs_plain_deltas, read_runs,
                                render_barchart_csv, render_delta_table,
                                render_main_table, write_report_files,
                                write_runs)
from synthdet.util import mean_std


def test_mean_std_exact_cases():
    assert mean_std([62, 63, 64]) == (63.0, 1.0)
    assert mean_std([0.5]) == (0.5, 0.0)
    assert mean_std([3.3, 3.3, 3.3]) == (3.3, 0.0)


def test_aggregation_recovers_table_cells():
    stats = aggregate_metrics(make_reference_runs())
    for key, (m50, s50, m5095, s5095) in TABLE_GROUPS.items():
        config, regime, variant = key
        entry = stats[(config, variant, regime)]
        assert f"{entry.map50_mean:.1f}" == f"{m50:.1f}"
        assert f"{entry.map50_std:.1f}" == f"{s50:.1f}"
        assert f"{entry.map5095_mean:.1f}" == f"{m5095:.1f}"
        assert f"{entry.map5095_std:.1f}" == f"{s5095:.1f}"


def test_reference_deltas_reproduced_exactly():
    stats = aggregate_metrics(make_reference_runs())
    for regime, expected in EXPECTED_DELTAS.items():
        assert guided_vs_plain_deltas(stats, regime) == expected


def test_main_table_layout():
    table = render_main_table(aggregate_metrics(make_reference_runs()))
    lines = table.splitlines()
    assert "configuration" in lines[0]
    body = "\n".join(lines[2:])
    assert "3d-model-sim" in body
    assert "real only" in body
    assert "62.9 [3.0]" in body
    assert "83.1 [0.5]" in body
    assert "48.8 [2.0]" in body
    assert "77.1 [0.8]" in body
    # FLUX row label comes from the variant.
    assert any(line.startswith("FLUX ") or line.startswith("FLUX\t")
               or line.split("  ")[0].strip() == "FLUX" for line in body.splitlines())


def test_delta_table_layout():
    table = render_delta_table(aggregate_metrics(make_reference_runs()))
    assert "FLUX-CN" in table
    assert "+4.1" in table
    assert "+5.1" in table
    assert "+3.6" in table
    assert "-1.9" in table
    assert "+2.3" in table
    assert "+0.9" in table
    assert "fine-tuned on 8 real samples" in table
    assert "fine-tuned on 24 real samples" in table


def test_barchart_csv_contents():
    text = render_barchart_csv(aggregate_metrics(make_reference_runs()))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert {"config", "regime", "variant", "map50_mean", "map50_std"} <= \
        set(rows[0].keys())
    flux_only = [r for r in rows if r["config"] == "synthetic_only"
                 and r["variant"] == "flux" and r["regime"] == "r8"]
    assert flux_only[0]["map50_mean"] == "48.8"
    assert flux_only[0]["map50_std"] == "2.0"


def test_runs_file_round_trip(tmp_path):
    runs = make_reference_runs()
    path = tmp_path / "runs.json"
    write_runs(runs, path)
    assert read_runs(path) == runs


def test_append_run_replaces_same_key(tmp_path):
    path = tmp_path / "runs.json"
    run = RunMetrics(config="real_only", variant="none", seed=0, map50=60.0,
                     map5095=55.0, regime="r8")
    append_run(run, path)
    updated = RunMetrics(config="real_only", variant="none", seed=0, map50=61.0,
                         map5095=56.0, regime="r8")
    append_run(updated, path)
    stored = read_runs(path)
    assert len(stored) == 1
    assert stored[0].map50 == 61.0


def test_write_report_files(tmp_path):
    paths = write_report_files(make_reference_runs(), tmp_path)
    for path in paths.values():
        assert path.exists()
    assert "delta" in paths["delta_table"].read_text() or \
        "+4.1" in paths["delta_table"].read_text()
