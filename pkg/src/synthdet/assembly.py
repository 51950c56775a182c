"""Dataset assembly, per-class subset selection, and balanced mixing.

Mixing approximates target shares by integer repetition of whole sources in
the manifest (never by duplicating image files): every source's records
appear exactly factor-many times, factors are anchored so the relatively
largest source keeps factor 1, and the final order is a seeded shuffle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import (DetectionDataset, ImageRecord, Source, Split,
                        records_by_class, validate_dataset)
from .errors import CoverageError, DatasetValidationError, InsufficiencyError
from .generation import GeneratedBatch
from .labeling import LabelingOutcome, LabelMethod
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

_METHOD_SOURCE = {
    LabelMethod.OPEN_VOCAB_TOP1: Source.FLUX,
    LabelMethod.GUIDANCE_TRANSFER: Source.FLUX_CN,
}


def select_subset(dataset: DetectionDataset, per_class: int,
                  seed: int) -> DetectionDataset:
    """Pick ``per_class`` records per class by seeded deterministic shuffle.

    The shuffle is keyed by (seed, class_id) so adding or removing one class
    never changes another class's selection. Output records are sorted by
    image id.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    grouped = records_by_class(dataset.records)
    selected: list[ImageRecord] = []
    for cls in dataset.taxonomy:
        candidates = sorted(grouped.get(cls.id, []), key=lambda r: r.image_id)
        if len(candidates) < per_class:
            raise InsufficiencyError(
                f"class {cls.name!r} has {len(candidates)} records, "
                f"{per_class} required")
        rng = np.random.default_rng([seed, cls.id])
        order = rng.permutation(len(candidates))
        selected.extend(candidates[i] for i in order[:per_class])
    selected.sort(key=lambda r: r.image_id)

    meta = dict(dataset.meta)
    split_counts: dict[str, int] = {}
    for rec in selected:
        split_counts[rec.split.value] = split_counts.get(rec.split.value, 0) + 1
    for key in ("count_train", "count_val", "count_test"):
        if key in meta:
            meta[key] = str(split_counts.get(key.removeprefix("count_"), 0))
    meta["subset_per_class"] = str(per_class)
    meta["subset_seed"] = str(seed)
    return DetectionDataset(taxonomy=dataset.taxonomy, records=tuple(selected),
                            meta=meta)


@dataclass(frozen=True)
class LabeledBatch:
    batch: GeneratedBatch
    outcomes: tuple[LabelingOutcome, ...]

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if len(self.outcomes) != len(self.batch.records):
            raise ValueError(
                f"{len(self.outcomes)} outcomes for {len(self.batch.records)} records")


@dataclass(frozen=True)
class RejectionEntry:
    class_id: int
    image_uri: str
    reason: str


@dataclass(frozen=True)
class AssemblyResult:
    dataset: DetectionDataset
    rejections: tuple[RejectionEntry, ...]


def _record_size(outcome: LabelingOutcome, root: Path | None) -> tuple[int, int]:
    if outcome.record.width is not None and outcome.record.height is not None:
        return outcome.record.width, outcome.record.height
    from PIL import Image

    path = Path(outcome.record.image_uri)
    if not path.is_absolute() and root is not None:
        path = root / path
    with Image.open(path) as img:
        return img.size


def assemble(labeled_batches: Sequence[LabeledBatch], taxonomy: Taxonomy, *,
             split: Split = Split.TRAIN, start_image_id: int = 1,
             meta: dict[str, str] | None = None,
             root: str | Path | None = None) -> AssemblyResult:
    """Turn labeled batches into a validated dataset, one record per accept.

    All taxonomy classes must be covered by the batches. Rejected outcomes
    are excluded from the dataset and reported.
    """
    covered = {lb.batch.class_id for lb in labeled_batches}
    missing = [cls.name for cls in taxonomy if cls.id not in covered]
    if missing:
        raise CoverageError(f"no labeled batch for classes: {', '.join(missing)}")

    root_path = None if root is None else Path(root)
    records: list[ImageRecord] = []
    rejections: list[RejectionEntry] = []
    image_id = start_image_id
    for labeled in sorted(labeled_batches, key=lambda lb: lb.batch.class_id):
        for outcome in labeled.outcomes:
            if not outcome.accepted:
                rejections.append(RejectionEntry(
                    class_id=outcome.record.class_id,
                    image_uri=outcome.record.image_uri,
                    reason=outcome.rejection_reason))
                continue
            width, height = _record_size(outcome, root_path)
            extras = {"seed": str(outcome.record.seed)}
            if outcome.record.guidance_pair_id is not None:
                extras["guidance_pair_id"] = str(outcome.record.guidance_pair_id)
            records.append(ImageRecord(
                image_id=image_id,
                uri=outcome.record.image_uri,
                width=width,
                height=height,
                annotations=(outcome.annotation,),
                split=split,
                source=_METHOD_SOURCE[outcome.method],
                extras=extras,
            ))
            image_id += 1

    full_meta = dict(meta or {})
    full_meta[f"count_{split.value}"] = str(len(records))
    dataset = DetectionDataset(taxonomy=taxonomy, records=tuple(records),
                               meta=full_meta)
    report = validate_dataset(dataset)
    if not report.ok:
        raise DatasetValidationError(report)
    return AssemblyResult(dataset=dataset, rejections=tuple(rejections))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_repetition_factors(sizes: Sequence[int]) -> list[int]:
    """Integer repetition per source so contributions come out about equal.

    Anchored to the largest source (factor 1); smaller sources repeat
    round-half-up(max_size / size) times.
    """
    if not sizes or any(n < 1 for n in sizes):
        raise ValueError("all source sizes must be at least 1")
    largest = max(sizes)
    return [max(1, _round_half_up(largest / n)) for n in sizes]


@dataclass(frozen=True)
class MixSpec:
    sources: tuple[tuple[DetectionDataset, float], ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError("mix requires at least one source")
        total = sum(share for _, share in self.sources)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"target shares must sum to 1, got {total}")
        if any(share <= 0 for _, share in self.sources):
            raise ValueError("target shares must be positive")
        taxonomies = {ds.taxonomy for ds, _ in self.sources}
        if len(taxonomies) != 1:
            raise ValueError("all mix sources must share one taxonomy")


@dataclass(frozen=True)
class MixedDataset:
    records: tuple[tuple[int, ImageRecord], ...]  # (source index, record)
    factors: tuple[int, ...]
    effective_shares: tuple[float, ...]
    taxonomy: Taxonomy
    seed: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "effective_shares", tuple(self.effective_shares))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def __len__(self) -> int:
        return len(self.records)

    def as_dataset(self, meta: dict[str, str] | None = None) -> DetectionDataset:
        """Re-keyed manifest with back-references to the original records."""
        out: list[ImageRecord] = []
        for new_id, (source_index, rec) in enumerate(self.records, start=1):
            extras = dict(rec.extras)
            extras["repetition_of"] = str(rec.image_id)
            extras["mix_source"] = str(source_index)
            out.append(replace(rec, image_id=new_id, extras=extras))
        full_meta = {
            "mix_seed": str(self.seed),
            "mix_factors": ",".join(str(f) for f in self.factors),
            "mix_effective_shares": ",".join(f"{s:.6f}"
                                             for s in self.effective_shares),
        }
        split_counts: dict[str, int] = {}
        for rec in out:
            split_counts[rec.split.value] = split_counts.get(rec.split.value, 0) + 1
        for split_name, count in split_counts.items():
            full_meta[f"count_{split_name}"] = str(count)
        full_meta.update(meta or {})
        return DetectionDataset(taxonomy=self.taxonomy, records=tuple(out),
                                meta=full_meta)


def mix(spec: MixSpec, share_tolerance: float = 0.02) -> MixedDataset:
    """Repeat each source per its factor and shuffle deterministically.

    Factors generalize the equal-share rule: the source with the largest
    size-to-target ratio anchors at factor 1 and the rest scale by
    round-half-up. Effective shares drifting beyond ``share_tolerance`` from
    their targets are recorded as warnings, not errors.
    """
    sizes = [len(ds.records) for ds, _ in spec.sources]
    if any(n < 1 for n in sizes):
        raise ValueError("every mix source must contain at least one record")
    targets = [share for _, share in spec.sources]

    if len({round(t, 12) for t in targets}) == 1:
        factors = compute_repetition_factors(sizes)
    else:
        anchor = max(range(len(sizes)), key=lambda i: sizes[i] / targets[i])
        scale = sizes[anchor] / targets[anchor]
        factors = [max(1, _round_half_up(targets[i] * scale / sizes[i]))
                   for i in range(len(sizes))]

    expanded: list[tuple[int, ImageRecord]] = []
    for index, (dataset, _) in enumerate(spec.sources):
        for _ in range(factors[index]):
            expanded.extend((index, rec) for rec in dataset.records)

    total = len(expanded)
    effective = [factors[i] * sizes[i] / total for i in range(len(sizes))]
    warnings = []
    for i, (eff, target) in enumerate(zip(effective, targets)):
        if abs(eff - target) > share_tolerance:
            message = (f"source {i}: effective share {eff:.4f} misses target "
                       f"{target:.4f} beyond {share_tolerance}")
            warnings.append(message)
            logger.warning(message)

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(total)
    shuffled = tuple(expanded[i] for i in order)
    return MixedDataset(records=shuffled, factors=tuple(factors),
                        effective_shares=tuple(effective),
                        taxonomy=spec.sources[0][0].taxonomy, seed=spec.seed,
                        warnings=tuple(warnings))
