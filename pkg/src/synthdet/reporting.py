"""Result tables and chart data from recorded per-run metrics.

Run metrics are stored in percent (the convention of the published tables)
as one entry per (config, regime, variant, seed). Reporting aggregates them
to mean [std] cells, renders the main comparison table, the guided-vs-plain
difference table, and a CSV of (config, mean, std) rows for bar charts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .metrics import AggregateReport, MetricStats, delta_table
from .util import mean_std, read_json, write_json

RUNS_SCHEMA_VERSION = 1

# Canonical config ids and their display labels; {synth} becomes the variant.
CONFIG_LABELS = {
    "sim_only": "3d-model-sim",
    "real_only": "real only",
    "synthetic_only": "{synth}",
    "real_plus_sim": "real + 3d-model-sim",
    "real_plus_synth": "real + {synth}",
    "real_plus_synth_plus_sim": "real + {synth} + 3d-model-sim",
}
MAIN_TABLE_ORDER = ("sim_only", "real_only", "synthetic_only", "real_plus_sim",
                    "real_plus_synth", "real_plus_synth_plus_sim")
DELTA_TABLE_ORDER = ("synthetic_only", "real_plus_synth",
                     "real_plus_synth_plus_sim")
VARIANT_LABELS = {"flux": "FLUX", "flux_cn": "FLUX-CN", "none": ""}


@dataclass(frozen=True)
class RunMetrics:
    """One training run's headline numbers, in percent."""

    config: str
    variant: str  # "flux", "flux_cn" or "none"
    seed: int
    map50: float
    map5095: float
    regime: str | None = None  # "r8", "r24" or None when not regime-bound

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "variant": self.variant,
            "seed": self.seed,
            "map50": self.map50,
            "map5095": self.map5095,
            "regime": self.regime,
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "RunMetrics":
        return cls(config=payload["config"], variant=payload["variant"],
                   seed=int(payload["seed"]), map50=float(payload["map50"]),
                   map5095=float(payload["map5095"]),
                   regime=payload.get("regime"))


def read_runs(path: str | Path) -> list[RunMetrics]:
    payload = read_json(path)
    if payload.get("schema_version") != RUNS_SCHEMA_VERSION:
        raise ValueError(f"unsupported runs schema {payload.get('schema_version')!r}")
    return [RunMetrics.from_json(entry) for entry in payload.get("runs", [])]


def write_runs(runs: Sequence[RunMetrics], path: str | Path) -> None:
    write_json(path, {
        "schema_version": RUNS_SCHEMA_VERSION,
        "runs": [run.to_json() for run in runs],
    })


def append_run(run: RunMetrics, path: str | Path) -> None:
    path = Path(path)
    runs = read_runs(path) if path.exists() else []
    key = (run.config, run.variant, run.regime, run.seed)
    runs = [r for r in runs
            if (r.config, r.variant, r.regime, r.seed) != key]
    runs.append(run)
    write_runs(runs, path)


GroupKey = tuple[str, str, str | None]  # (config, variant, regime)


def aggregate_metrics(runs: Sequence[RunMetrics]) -> dict[GroupKey, MetricStats]:
    """Mean and sample std per (config, variant, regime) group."""
    grouped: dict[GroupKey, list[RunMetrics]] = {}
    for run in runs:
        grouped.setdefault((run.config, run.variant, run.regime), []).append(run)
    stats = {}
    for key, members in grouped.items():
        m50, s50 = mean_std([r.map50 for r in members])
        m5095, s5095 = mean_std([r.map5095 for r in members])
        stats[key] = MetricStats(map50_mean=m50, map50_std=s50,
                                 map5095_mean=m5095, map5095_std=s5095)
    return stats


def _cell(stats: MetricStats | None, metric: str) -> str:
    if stats is None:
        return "-"
    mean = getattr(stats, f"{metric}_mean")
    std = getattr(stats, f"{metric}_std")
    return f"{mean:.1f} [{std:.1f}]"


def _lookup(stats: Mapping[GroupKey, MetricStats], config: str, variant: str,
            regime: str | None) -> MetricStats | None:
    found = stats.get((config, variant, regime))
    if found is None and regime is not None:
        found = stats.get((config, variant, None))  # regime-free rows span
    return found


def _row_label(config: str, variant: str) -> str:
    label = CONFIG_LABELS.get(config, config)
    synth = VARIANT_LABELS.get(variant, variant) or "synthetic"
    return label.format(synth=synth)


def render_main_table(stats: Mapping[GroupKey, MetricStats],
                      variant: str = "flux") -> str:
    """Mean [std] grid over configs x regimes for both mAP metrics."""
    header = (f"{'configuration':<34}"
              f"{'mAP50 (8)':>12}{'mAP50 (24)':>12}"
              f"{'mAP50:95 (8)':>14}{'mAP50:95 (24)':>14}")
    lines = [header, "-" * len(header)]
    for config in MAIN_TABLE_ORDER:
        row_variant = variant if "synth" in config else "none"
        cells = [
            _cell(_lookup(stats, config, row_variant, "r8"), "map50"),
            _cell(_lookup(stats, config, row_variant, "r24"), "map50"),
            _cell(_lookup(stats, config, row_variant, "r8"), "map5095"),
            _cell(_lookup(stats, config, row_variant, "r24"), "map5095"),
        ]
        if all(c == "-" for c in cells):
            continue
        label = _row_label(config, row_variant)
        lines.append(f"{label:<34}{cells[0]:>12}{cells[1]:>12}"
                     f"{cells[2]:>14}{cells[3]:>14}")
    return "\n".join(lines) + "\n"


def _arm_report(stats: Mapping[GroupKey, MetricStats], variant: str,
                regime: str) -> AggregateReport | None:
    per_config = {}
    for config in DELTA_TABLE_ORDER:
        found = _lookup(stats, config, variant, regime)
        if found is not None:
            per_config[config] = found
    if not per_config:
        return None
    return AggregateReport(per_config=per_config, run_count=len(per_config))


def guided_vs_plain_deltas(stats: Mapping[GroupKey, MetricStats],
                           regime: str) -> list[tuple[str, float]]:
    """Per-config mAP50 delta from replacing plain with guided synthesis."""
    baseline = _arm_report(stats, "flux", regime)
    variant = _arm_report(stats, "flux_cn", regime)
    if baseline is None or variant is None:
        return []
    return delta_table(baseline, variant)


def render_delta_table(stats: Mapping[GroupKey, MetricStats]) -> str:
    """FLUX vs FLUX-CN mAP50 comparison with a difference column."""
    header = (f"{'training datasets':<38}{'FLUX':>12}{'FLUX-CN':>12}"
              f"{'delta':>8}")
    lines = [header, "-" * len(header)]
    for regime in ("r8", "r24"):
        deltas = dict(guided_vs_plain_deltas(stats, regime))
        if not deltas:
            continue
        n_real = regime.removeprefix("r")
        lines.append(f"fine-tuned on {n_real} real samples")
        for config in DELTA_TABLE_ORDER:
            if config not in deltas:
                continue
            flux_cell = _cell(_lookup(stats, config, "flux", regime), "map50")
            cn_cell = _cell(_lookup(stats, config, "flux_cn", regime), "map50")
            label = {
                "synthetic_only": "synthetic only",
                "real_plus_synth": f"+ {n_real} real",
                "real_plus_synth_plus_sim": f"+ {n_real} real + 3d-model-sim",
            }[config]
            lines.append(f"  {label:<36}{flux_cell:>12}{cn_cell:>12}"
                         f"{deltas[config]:>+8.1f}")
    return "\n".join(lines) + "\n"


def render_barchart_csv(stats: Mapping[GroupKey, MetricStats]) -> str:
    """(config, regime, variant, mAP50 mean, std) rows for bar charts."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["config", "regime", "variant", "map50_mean", "map50_std"])
    for (config, variant, regime) in sorted(
            stats, key=lambda k: (MAIN_TABLE_ORDER.index(k[0])
                                  if k[0] in MAIN_TABLE_ORDER else 99,
                                  k[2] or "", k[1])):
        entry = stats[(config, variant, regime)]
        writer.writerow([config, regime or "", variant,
                         f"{entry.map50_mean:.1f}", f"{entry.map50_std:.1f}"])
    return buffer.getvalue()


def write_report_files(runs: Sequence[RunMetrics],
                       out_dir: str | Path) -> dict[str, Path]:
    """Render every report artifact; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = aggregate_metrics(runs)

    paths = {
        "main_table": out_dir / "table_main.txt",
        "delta_table": out_dir / "table_delta.txt",
        "barchart_csv": out_dir / "barchart.csv",
        "aggregates_json": out_dir / "aggregates.json",
    }
    paths["main_table"].write_text(render_main_table(stats), encoding="utf-8")
    paths["delta_table"].write_text(render_delta_table(stats), encoding="utf-8")
    paths["barchart_csv"].write_text(render_barchart_csv(stats), encoding="utf-8")
    write_json(paths["aggregates_json"], {
        "groups": [
            {"config": config, "variant": variant, "regime": regime,
             "map50_mean": s.map50_mean, "map50_std": s.map50_std,
             "map5095_mean": s.map5095_mean, "map5095_std": s.map5095_std}
            for (config, variant, regime), s in sorted(
                stats.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or ""))
        ],
    })
    return paths
