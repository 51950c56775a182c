"""Detector fine-tuning job specs and checkpoint selection.

Training itself happens in an external detector backend; this module emits
the fully-resolved job description (manifests plus hyperparameters), parses
the per-epoch validation history the backend writes, and picks the best
checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset_io import load_dataset
from .util import stable_hash


@dataclass(frozen=True)
class DetectorJobSpec:
    train_manifest: str
    val_manifest: str
    seed: int
    run_id: str
    input_resolution: int = 960
    epochs: int = 80
    batch_size: int = 12
    head_lr: float = 1.0e-5
    backbone_lr: float = 3.0e-5
    backend_defaults: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "backend_defaults", dict(self.backend_defaults))
        if self.input_resolution <= 0:
            raise ValueError("input_resolution must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.head_lr <= 0 or self.backbone_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not self.run_id:
            raise ValueError("run_id must be non-empty")

    def to_json(self) -> dict:
        return {
            "train_manifest": self.train_manifest,
            "val_manifest": self.val_manifest,
            "seed": self.seed,
            "run_id": self.run_id,
            "input_resolution": self.input_resolution,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "head_lr": self.head_lr,
            "backbone_lr": self.backbone_lr,
            "backend_defaults": dict(sorted(self.backend_defaults.items())),
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "DetectorJobSpec":
        return cls(
            train_manifest=payload["train_manifest"],
            val_manifest=payload["val_manifest"],
            seed=int(payload["seed"]),
            run_id=payload["run_id"],
            input_resolution=int(payload["input_resolution"]),
            epochs=int(payload["epochs"]),
            batch_size=int(payload["batch_size"]),
            head_lr=float(payload["head_lr"]),
            backbone_lr=float(payload["backbone_lr"]),
            backend_defaults={str(k): str(v)
                              for k, v in payload.get("backend_defaults", {}).items()},
        )

    def spec_hash(self) -> str:
        return stable_hash(self.to_json())


def build_detector_spec(train_manifest: str | Path, val_manifest: str | Path,
                        seed: int, run_id: str, **overrides) -> DetectorJobSpec:
    """Resolve a job spec after checking that both manifests load cleanly."""
    load_dataset(train_manifest)
    load_dataset(val_manifest)
    return DetectorJobSpec(train_manifest=str(train_manifest),
                           val_manifest=str(val_manifest), seed=seed,
                           run_id=run_id, **overrides)


@dataclass(frozen=True)
class HistoryEntry:
    epoch: int
    val_map50: float
    checkpoint_uri: str

    def __post_init__(self):
        if not (0.0 <= self.val_map50 <= 1.0):
            raise ValueError(f"val_map50 {self.val_map50} outside [0, 1]")


@dataclass(frozen=True)
class ValHistory:
    entries: tuple[HistoryEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        epochs = [e.epoch for e in self.entries]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("history epochs must be strictly increasing")


def select_checkpoint(history: ValHistory) -> tuple[int, str]:
    """Entry with the highest validation mAP50; ties go to the earliest epoch."""
    if not history.entries:
        raise ValueError("cannot select a checkpoint from an empty history")
    best = max(history.entries, key=lambda e: e.val_map50)  # first max wins
    return best.epoch, best.checkpoint_uri


def read_history(path: str | Path) -> ValHistory:
    """Parse the backend's JSON-lines history file."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            entries.append(HistoryEntry(
                epoch=int(payload["epoch"]),
                val_map50=float(payload["val_map50"]),
                checkpoint_uri=str(payload["checkpoint_uri"])))
    return ValHistory(entries=tuple(entries))


def write_history(history: ValHistory, path: str | Path) -> None:
    lines = [json.dumps({"epoch": e.epoch, "val_map50": e.val_map50,
                         "checkpoint_uri": e.checkpoint_uri}, sort_keys=True)
             for e in history.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
