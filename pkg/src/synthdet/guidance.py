"""Packaging of edge maps with their source annotations for guided synthesis.

Each rendered simulation image contributes one pair: its foreground edge map,
its bounding box (copied verbatim so downstream annotation transfer is
bit-exact) and whatever pose metadata the render carried. Pairs are persisted
as one 8-bit PNG per edge map plus a JSON manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .backends import save_png_atomic
from .datamodel import (Annotation, BoundingBox, DetectionDataset, ImageRecord,
                        Source, ValidationIssue, ValidationReport)
from .edges import EdgeMap, EdgeParams, extract_edges
from .errors import DatasetValidationError
from .util import ordered_parallel_map, write_json, read_json

GUIDANCE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GuidancePair:
    edge_map: EdgeMap
    source_annotation: Annotation
    class_id: int
    pose_meta: Mapping[str, str] = field(default_factory=dict)
    edge_map_uri: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pose_meta", dict(self.pose_meta))
        box = self.source_annotation.box
        if not box.within(self.edge_map.width, self.edge_map.height):
            raise ValueError(
                f"annotation box {box.as_xywh()} exceeds edge map extent "
                f"{self.edge_map.width}x{self.edge_map.height}")

    @property
    def source_image_id(self) -> int:
        return self.edge_map.source_image_id


@dataclass(frozen=True)
class GuidanceError:
    image_id: int
    reason: str


@dataclass(frozen=True)
class GuidanceBuildResult:
    pairs: tuple[GuidancePair, ...]
    errors: tuple[GuidanceError, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "errors", tuple(self.errors))

    def per_class(self) -> dict[int, list[GuidancePair]]:
        grouped: dict[int, list[GuidancePair]] = {}
        for pair in self.pairs:
            grouped.setdefault(pair.class_id, []).append(pair)
        return grouped


def _load_render(record: ImageRecord, root: Path | None) -> np.ndarray:
    path = Path(record.uri)
    if not path.is_absolute() and root is not None:
        path = root / path
    with Image.open(path) as img:
        return np.array(img)


def build_guidance_pairs(sim_dataset: DetectionDataset,
                         params: EdgeParams = EdgeParams(), *,
                         root: str | Path | None = None,
                         workers: int = 1) -> GuidanceBuildResult:
    """One pair per simulation record, ordered by source image id.

    A record with anything other than exactly one annotation fails the whole
    call; an unreadable render only produces a per-record error entry.
    """
    issues = [
        ValidationIssue(rec.image_id, "annotations",
                        f"guidance source must carry exactly one annotation, "
                        f"has {len(rec.annotations)}")
        for rec in sim_dataset.records if len(rec.annotations) != 1
    ]
    if issues:
        raise DatasetValidationError(ValidationReport(tuple(issues)))

    root_path = None if root is None else Path(root)
    ordered = sorted(sim_dataset.records, key=lambda r: r.image_id)

    def build_one(record: ImageRecord):
        try:
            render = _load_render(record, root_path)
        except (OSError, ValueError) as exc:
            return GuidanceError(image_id=record.image_id,
                                 reason=f"unreadable render: {exc}")
        edge_map = extract_edges(render, params, source_image_id=record.image_id)
        return GuidancePair(
            edge_map=edge_map,
            source_annotation=record.annotations[0],
            class_id=record.annotations[0].class_id,
            pose_meta=dict(record.extras),
        )

    pairs: list[GuidancePair] = []
    errors: list[GuidanceError] = []
    for result in ordered_parallel_map(build_one, ordered, workers):
        if isinstance(result, GuidanceError):
            errors.append(result)
        else:
            pairs.append(result)
    return GuidanceBuildResult(tuple(pairs), tuple(errors))


def write_guidance_set(pairs: Sequence[GuidancePair],
                       out_dir: str | Path) -> tuple[GuidancePair, ...]:
    """Persist edge maps and manifest; returns pairs with edge_map_uri set."""
    out_dir = Path(out_dir)
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)

    persisted: list[GuidancePair] = []
    entries = []
    for index, pair in enumerate(pairs):
        png_path = maps_dir / f"{pair.source_image_id}_edges.png"
        save_png_atomic(Image.fromarray(pair.edge_map.pixels, mode="L"), png_path)
        persisted.append(replace(pair, edge_map_uri=str(png_path)))
        ann = pair.source_annotation
        entries.append({
            "index": index,
            "source_image_id": pair.source_image_id,
            "class_id": pair.class_id,
            "edge_map": str(png_path.relative_to(out_dir)),
            "box": [ann.box.x_min, ann.box.y_min, ann.box.x_max, ann.box.y_max],
            "provenance": ann.provenance.value,
            "pose_meta": dict(sorted(pair.pose_meta.items())),
        })
    write_json(out_dir / "guidance_manifest.json", {
        "schema_version": GUIDANCE_SCHEMA_VERSION,
        "pairs": entries,
    })
    return tuple(persisted)


def load_guidance_set(out_dir: str | Path) -> tuple[GuidancePair, ...]:
    """Load a persisted guidance set back, including edge-map pixels."""
    out_dir = Path(out_dir)
    payload = read_json(out_dir / "guidance_manifest.json")
    if payload.get("schema_version") != GUIDANCE_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported guidance schema {payload.get('schema_version')!r}")
    pairs = []
    for entry in payload["pairs"]:
        png_path = out_dir / entry["edge_map"]
        with Image.open(png_path) as img:
            pixels = np.array(img.convert("L"))
        edge_map = EdgeMap(width=pixels.shape[1], height=pixels.shape[0],
                           pixels=pixels,
                           source_image_id=int(entry["source_image_id"]))
        box = BoundingBox(*entry["box"])
        annotation = Annotation(box=box, class_id=int(entry["class_id"]),
                                provenance=Source(entry["provenance"]))
        pairs.append(GuidancePair(
            edge_map=edge_map, source_annotation=annotation,
            class_id=int(entry["class_id"]),
            pose_meta={str(k): str(v) for k, v in entry["pose_meta"].items()},
            edge_map_uri=str(png_path)))
    return tuple(pairs)
