"""COCO-style JSON serialization for detection datasets.

File layout (``schema_version`` 1)::

    {
      "schema_version": 1,
      "meta": {"<key>": "<value>", ...},
      "categories": [{"id": 0, "name": "Boxer",
                      "supercategory": "armoured personnel carrier"}, ...],
      "images": [{"id": 1, "file_name": "images/0001.png", "width": 640,
                  "height": 480, "split": "train", "source": "real",
                  "extras": {"yaw": "12.5"}}, ...],
      "annotations": [{"id": 1, "image_id": 1, "category_id": 0,
                       "bbox": [x, y, w, h], "provenance": "real",
                       "score": 0.93}, ...]
    }

Boxes are stored as ``[x_min, y_min, width, height]`` on disk and converted
to corner form in memory. ``score`` is omitted for ground truth. ``extras``
is omitted when empty. File paths are interpreted relative to the manifest's
directory (the dataset root).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .datamodel import (Annotation, BoundingBox, DetectionDataset, ImageRecord,
                        Source, Split, validate_dataset)
from .errors import DatasetValidationError, SchemaError, TaxonomyError
from .taxonomy import Taxonomy, VehicleClass
from .util import atomic_write_text

SCHEMA_VERSION = 1


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"{where}.{key}", "missing required field")
    return obj[key]


def _parse_categories(raw: Any) -> Taxonomy:
    if not isinstance(raw, list):
        raise SchemaError("categories", "must be an array")
    classes = []
    for i, entry in enumerate(raw):
        where = f"categories[{i}]"
        try:
            classes.append(VehicleClass(
                id=int(_require(entry, "id", where)),
                name=str(_require(entry, "name", where)),
                superclass=str(_require(entry, "supercategory", where)),
            ))
        except (TypeError, ValueError) as exc:
            raise SchemaError(where, str(exc)) from exc
    return Taxonomy(tuple(classes))


def _parse_image(entry: dict, i: int) -> tuple[int, dict]:
    where = f"images[{i}]"
    try:
        image_id = int(_require(entry, "id", where))
        parsed = {
            "uri": str(_require(entry, "file_name", where)),
            "width": int(_require(entry, "width", where)),
            "height": int(_require(entry, "height", where)),
            "split": Split(_require(entry, "split", where)),
            "source": Source(_require(entry, "source", where)),
            "extras": {str(k): str(v) for k, v in entry.get("extras", {}).items()},
        }
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(where, str(exc)) from exc
    return image_id, parsed


def _parse_annotation(entry: dict, i: int, taxonomy: Taxonomy) -> tuple[int, Annotation]:
    where = f"annotations[{i}]"
    try:
        image_id = int(_require(entry, "image_id", where))
        class_id = int(_require(entry, "category_id", where))
    except (TypeError, ValueError) as exc:
        raise SchemaError(where, str(exc)) from exc
    if not taxonomy.has_id(class_id):
        raise TaxonomyError(f"{where}.category_id: unknown class id {class_id}")
    bbox = _require(entry, "bbox", where)
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise SchemaError(f"{where}.bbox", "must be [x, y, width, height]")
    try:
        box = BoundingBox.from_xywh(*(float(v) for v in bbox))
        score = entry.get("score")
        ann = Annotation(
            box=box,
            class_id=class_id,
            provenance=Source(_require(entry, "provenance", where)),
            confidence=None if score is None else float(score),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}.bbox", str(exc)) from exc
    return image_id, ann


def load_dataset(path: str | Path) -> DetectionDataset:
    """Load and validate a manifest; raises on any schema or invariant violation."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError("<document>", f"not valid JSON: {exc}") from exc

    if not isinstance(payload, dict):
        raise SchemaError("<document>", "top level must be an object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    taxonomy = _parse_categories(_require(payload, "categories", "<document>"))

    images_raw = _require(payload, "images", "<document>")
    if not isinstance(images_raw, list):
        raise SchemaError("images", "must be an array")
    images: dict[int, dict] = {}
    order: list[int] = []
    for i, entry in enumerate(images_raw):
        image_id, parsed = _parse_image(entry, i)
        if image_id not in images:
            order.append(image_id)
        images[image_id] = parsed

    anns_raw = _require(payload, "annotations", "<document>")
    if not isinstance(anns_raw, list):
        raise SchemaError("annotations", "must be an array")
    per_image: dict[int, list[Annotation]] = {iid: [] for iid in images}
    for i, entry in enumerate(anns_raw):
        image_id, ann = _parse_annotation(entry, i, taxonomy)
        if image_id not in per_image:
            raise SchemaError(f"annotations[{i}].image_id",
                              f"references unknown image {image_id}")
        per_image[image_id].append(ann)

    records = tuple(
        ImageRecord(
            image_id=iid,
            uri=images[iid]["uri"],
            width=images[iid]["width"],
            height=images[iid]["height"],
            annotations=tuple(per_image[iid]),
            split=images[iid]["split"],
            source=images[iid]["source"],
            extras=images[iid]["extras"],
        )
        for iid in order
    )
    meta = {str(k): str(v) for k, v in payload.get("meta", {}).items()}
    dataset = DetectionDataset(taxonomy=taxonomy, records=records, meta=meta)

    report = validate_dataset(dataset)
    if not report.ok:
        raise DatasetValidationError(report)
    return dataset


def dataset_to_payload(dataset: DetectionDataset) -> dict:
    """The JSON-ready dict form of a dataset (stable up to key ordering)."""
    categories = [
        {"id": c.id, "name": c.name, "supercategory": c.superclass}
        for c in dataset.taxonomy
    ]
    images = []
    annotations = []
    ann_id = 1
    for rec in dataset.records:
        entry: dict[str, Any] = {
            "id": rec.image_id,
            "file_name": rec.uri,
            "width": rec.width,
            "height": rec.height,
            "split": rec.split.value,
            "source": rec.source.value,
        }
        if rec.extras:
            entry["extras"] = dict(sorted(rec.extras.items()))
        images.append(entry)
        for ann in rec.annotations:
            a: dict[str, Any] = {
                "id": ann_id,
                "image_id": rec.image_id,
                "category_id": ann.class_id,
                "bbox": list(ann.box.as_xywh()),
                "provenance": ann.provenance.value,
            }
            if ann.confidence is not None:
                a["score"] = ann.confidence
            annotations.append(a)
            ann_id += 1
    return {
        "schema_version": SCHEMA_VERSION,
        "meta": dict(sorted(dataset.meta.items())),
        "categories": categories,
        "images": images,
        "annotations": annotations,
    }


def save_dataset(dataset: DetectionDataset, path: str | Path) -> None:
    """Validate then write atomically; an invalid dataset writes nothing."""
    report = validate_dataset(dataset)
    if not report.ok:
        raise DatasetValidationError(report)
    text = json.dumps(dataset_to_payload(dataset), sort_keys=True, indent=2) + "\n"
    atomic_write_text(path, text)
