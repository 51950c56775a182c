"""Annotation of generated images.

Two methods, matching how the image was made: plain batches get the top-1
box from an open-vocabulary detector (class label always taken from the
generating adapter, never from the detector), guided batches reuse the
bounding box of the guidance pair that conditioned them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .backends import DetectionQueryRequest, OpenVocabBackend
from .datamodel import Annotation, BoundingBox, Source
from .errors import LineageError
from .generation import GeneratedBatch, GeneratedRecord
from .guidance import GuidancePair
from .util import ordered_parallel_map


@dataclass(frozen=True)
class OpenVocabQuery:
    phrase: str = "military vehicle"
    min_confidence: float = 0.0

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("query phrase must be non-empty")
        if not (0.0 <= self.min_confidence <= 1.0):
            raise ValueError("min_confidence must lie in [0, 1]")


class LabelMethod(str, Enum):
    OPEN_VOCAB_TOP1 = "open_vocab_top1"
    GUIDANCE_TRANSFER = "guidance_transfer"


@dataclass(frozen=True)
class LabelingOutcome:
    record: GeneratedRecord
    method: LabelMethod
    annotation: Annotation | None = None
    rejection_reason: str | None = None

    def __post_init__(self):
        if (self.annotation is None) == (self.rejection_reason is None):
            raise ValueError(
                "outcome carries exactly one of annotation or rejection_reason")

    @property
    def image_uri(self) -> str:
        return self.record.image_uri

    @property
    def accepted(self) -> bool:
        return self.annotation is not None


def assign_class_label(annotation: Annotation, lora_class: int) -> Annotation:
    """Relabel with the generating adapter's class; geometry untouched."""
    return replace(annotation, class_id=lora_class)


def annotate_open_vocab(record: GeneratedRecord, backend: OpenVocabBackend,
                        query: OpenVocabQuery = OpenVocabQuery()) -> LabelingOutcome:
    """Keep the highest-confidence qualifying box; label from the generator.

    Confidence ties keep the earliest detection in backend order. Zero
    qualifying detections reject the record with reason "no_detection".
    Transport failures propagate as BackendError.
    """
    response = backend.detect(DetectionQueryRequest(
        image_uri=record.image_uri, phrase=query.phrase))
    qualifying = [d for d in response.detections
                  if d.confidence >= query.min_confidence]
    if not qualifying:
        return LabelingOutcome(record=record, method=LabelMethod.OPEN_VOCAB_TOP1,
                               rejection_reason="no_detection")
    top = max(qualifying, key=lambda d: d.confidence)  # first max wins ties
    detected = Annotation(box=BoundingBox(*top.box), class_id=record.class_id,
                          provenance=Source.FLUX, confidence=top.confidence)
    return LabelingOutcome(
        record=record, method=LabelMethod.OPEN_VOCAB_TOP1,
        annotation=assign_class_label(detected, record.class_id))


def transfer_annotation(record: GeneratedRecord,
                        pairs: Sequence[GuidancePair]) -> LabelingOutcome:
    """Copy the conditioning pair's box verbatim onto the generated image."""
    pair_id = record.guidance_pair_id
    if pair_id is None:
        raise LineageError(
            f"record {record.image_uri} carries no guidance pair id")
    if not (0 <= pair_id < len(pairs)):
        raise LineageError(
            f"guidance pair id {pair_id} not resolvable among {len(pairs)} pairs")
    source = pairs[pair_id].source_annotation
    annotation = Annotation(box=source.box, class_id=record.class_id,
                            provenance=Source.FLUX_CN,
                            confidence=source.confidence)
    return LabelingOutcome(record=record, method=LabelMethod.GUIDANCE_TRANSFER,
                           annotation=annotation)


def label_batch_open_vocab(batch: GeneratedBatch, backend: OpenVocabBackend,
                           query: OpenVocabQuery = OpenVocabQuery(), *,
                           workers: int = 1) -> tuple[LabelingOutcome, ...]:
    outcomes = ordered_parallel_map(
        lambda rec: annotate_open_vocab(rec, backend, query),
        batch.records, workers)
    return tuple(outcomes)


def label_batch_transfer(batch: GeneratedBatch,
                         pairs: Sequence[GuidancePair]) -> tuple[LabelingOutcome, ...]:
    return tuple(transfer_annotation(rec, pairs) for rec in batch.records)


@dataclass(frozen=True)
class LabelingSummary:
    accepted: int
    rejected: int

    @property
    def rejection_rate(self) -> float:
        total = self.accepted + self.rejected
        return 0.0 if total == 0 else self.rejected / total


def summarize_outcomes(outcomes: Sequence[LabelingOutcome]) -> dict[int, LabelingSummary]:
    """Per-class accept/reject accounting for a labeling pass."""
    tallies: dict[int, list[int]] = {}
    for outcome in outcomes:
        bucket = tallies.setdefault(outcome.record.class_id, [0, 0])
        bucket[0 if outcome.accepted else 1] += 1
    return {cid: LabelingSummary(accepted=a, rejected=r)
            for cid, (a, r) in sorted(tallies.items())}


def outcome_to_json(outcome: LabelingOutcome) -> dict:
    payload = {
        "record": outcome.record.to_json(),
        "method": outcome.method.value,
        "rejection_reason": outcome.rejection_reason,
        "annotation": None,
    }
    if outcome.annotation is not None:
        ann = outcome.annotation
        payload["annotation"] = {
            "box": [ann.box.x_min, ann.box.y_min, ann.box.x_max, ann.box.y_max],
            "class_id": ann.class_id,
            "provenance": ann.provenance.value,
            "score": ann.confidence,
        }
    return payload


def outcome_from_json(payload: dict) -> LabelingOutcome:
    from .generation import GeneratedRecord

    annotation = None
    if payload.get("annotation") is not None:
        raw = payload["annotation"]
        annotation = Annotation(
            box=BoundingBox(*(float(v) for v in raw["box"])),
            class_id=int(raw["class_id"]),
            provenance=Source(raw["provenance"]),
            confidence=raw.get("score"))
    return LabelingOutcome(
        record=GeneratedRecord.from_json(payload["record"]),
        method=LabelMethod(payload["method"]),
        annotation=annotation,
        rejection_reason=payload.get("rejection_reason"))
