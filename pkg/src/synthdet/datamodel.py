"""Image/annotation data model and dataset-level validation.

Datasets are immutable after construction and safe to share across threads;
every transformation produces new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .taxonomy import Taxonomy


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Source(str, Enum):
    """Where an image or annotation came from."""

    REAL = "real"
    FLUX = "flux"
    FLUX_CN = "flux_cn"
    SIM_3D = "sim_3d"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, corners exclusive of each other."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("box coordinates must be non-negative")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width, self.height)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(x, y, x + w, y + h)

    def within(self, width: float, height: float) -> bool:
        return self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class Annotation:
    """A single labeled box. Ground truth carries no confidence."""

    box: BoundingBox
    class_id: int
    provenance: Source
    confidence: float | None = None

    def __post_init__(self):
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    """One image plus its annotations and provenance.

    ``extras`` holds optional per-image string metadata (pose parameters of a
    render, mix back-references) that rides along in manifests.
    """

    image_id: int
    uri: str
    width: int
    height: int
    annotations: tuple[Annotation, ...]
    split: Split
    source: Source
    extras: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "extras", dict(self.extras))


@dataclass(frozen=True)
class DetectionDataset:
    """A taxonomy, a set of records and free-form string metadata."""

    taxonomy: Taxonomy
    records: tuple[ImageRecord, ...]
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.split is split]

    def class_counts(self) -> dict[int, int]:
        """Record count per class id, counting each record once per class present."""
        counts: dict[int, int] = {}
        for rec in self.records:
            for cid in {a.class_id for a in rec.annotations}:
                counts[cid] = counts.get(cid, 0) + 1
        return counts

    def with_meta(self, **updates: str) -> "DetectionDataset":
        merged = dict(self.meta)
        merged.update(updates)
        return replace(self, meta=merged)


@dataclass(frozen=True)
class ValidationIssue:
    record_id: int | None
    field: str
    message: str

    def __str__(self) -> str:
        where = "dataset" if self.record_id is None else f"record {self.record_id}"
        return f"{where}.{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...]

    def __post_init__(self):
        object.__setattr__(self, "issues", tuple(self.issues))

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(i) for i in self.issues)


_META_COUNT_KEYS = {
    "count_train": Split.TRAIN,
    "count_val": Split.VAL,
    "count_test": Split.TEST,
}


def validate_dataset(dataset: DetectionDataset) -> ValidationReport:
    """Check every dataset invariant; violations become report entries.

    Never raises: the report is the result, empty iff the dataset is valid.
    """
    issues: list[ValidationIssue] = []
    seen_ids: set[int] = set()

    for rec in dataset.records:
        if rec.image_id in seen_ids:
            issues.append(ValidationIssue(rec.image_id, "image_id",
                                          "duplicate image id"))
        seen_ids.add(rec.image_id)

        if rec.width <= 0 or rec.height <= 0:
            issues.append(ValidationIssue(rec.image_id, "size",
                                          f"non-positive extent {rec.width}x{rec.height}"))
        if rec.source is not Source.REAL and len(rec.annotations) != 1:
            issues.append(ValidationIssue(
                rec.image_id, "annotations",
                f"synthetic record must carry exactly one annotation, has {len(rec.annotations)}"))

        for i, ann in enumerate(rec.annotations):
            if not dataset.taxonomy.has_id(ann.class_id):
                issues.append(ValidationIssue(rec.image_id, f"annotations[{i}].class_id",
                                              f"unknown class id {ann.class_id}"))
            if not ann.box.within(rec.width, rec.height):
                issues.append(ValidationIssue(
                    rec.image_id, f"annotations[{i}].box",
                    f"box {ann.box.as_xywh()} exceeds image extent "
                    f"{rec.width}x{rec.height}"))
            if rec.source is Source.REAL and ann.confidence is not None:
                issues.append(ValidationIssue(
                    rec.image_id, f"annotations[{i}].confidence",
                    "ground-truth annotation must not carry a confidence"))

    split_counts = {split: 0 for split in Split}
    for rec in dataset.records:
        split_counts[rec.split] += 1
    for key, split in _META_COUNT_KEYS.items():
        if key in dataset.meta:
            try:
                declared = int(dataset.meta[key])
            except ValueError:
                issues.append(ValidationIssue(None, f"meta.{key}",
                                              f"not an integer: {dataset.meta[key]!r}"))
                continue
            if declared != split_counts[split]:
                issues.append(ValidationIssue(
                    None, f"meta.{key}",
                    f"declares {declared} records, found {split_counts[split]}"))

    return ValidationReport(tuple(issues))


def records_by_class(records: Iterable[ImageRecord]) -> dict[int, list[ImageRecord]]:
    """Group records by the class of their first annotation."""
    grouped: dict[int, list[ImageRecord]] = {}
    for rec in records:
        if not rec.annotations:
            continue
        grouped.setdefault(rec.annotations[0].class_id, []).append(rec)
    return grouped
