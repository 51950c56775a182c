"""LoRA fine-tuning job specs, the class-adapter registry, and synthesis.

The toolkit never runs the diffusion model itself: it emits fully-resolved
job specifications, tracks which adapter artifact serves each (class, regime)
slot, and drives the text-to-image backend record by record with
deterministic prompt cycling, guidance cycling and per-record seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .backends import SynthesisBackend, SynthesisRequest
from .datamodel import ImageRecord
from .errors import (BackendError, RegimeMismatchError, RegistryError,
                     ShortfallError, TaxonomyError)
from .guidance import GuidancePair
from .prompting import CaptionPair, PromptSet
from .util import ordered_parallel_map, stable_hash

# Per-record seeds leave room for 10,000 records per job before colliding
# with the next base seed.
SEED_STRIDE = 10_000


class Regime(str, Enum):
    """How many real images per class feed fine-tuning: 8 or 24."""

    R8 = "r8"
    R24 = "r24"

    @property
    def pairs_required(self) -> int:
        return 8 if self is Regime.R8 else 24


@dataclass(frozen=True)
class LoraJobSpec:
    class_id: int
    regime: Regime
    training_pairs: tuple[tuple[str, str], ...]  # (image uri, caption)
    rank: int = 32
    alpha: int = 32
    steps: int = 2000
    batch_size: int = 1
    grad_accum: int = 1
    optimizer_name: str = "adamw-8bit"
    learning_rate: float = 4.0e-4
    weight_decay: float = 1.0e-4
    train_text_encoder: bool = True
    gradient_checkpointing: bool = True
    full_rank_adaptation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "training_pairs",
                           tuple((str(u), str(c)) for u, c in self.training_pairs))
        if self.rank <= 0 or self.steps <= 0:
            raise ValueError("rank and steps must be positive")
        if len(self.training_pairs) != self.regime.pairs_required:
            raise RegimeMismatchError(
                f"regime {self.regime.value} requires "
                f"{self.regime.pairs_required} training pairs, "
                f"got {len(self.training_pairs)}")

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "regime": self.regime.value,
            "training_pairs": [list(pair) for pair in self.training_pairs],
            "rank": self.rank,
            "alpha": self.alpha,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "grad_accum": self.grad_accum,
            "optimizer_name": self.optimizer_name,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "train_text_encoder": self.train_text_encoder,
            "gradient_checkpointing": self.gradient_checkpointing,
            "full_rank_adaptation": self.full_rank_adaptation,
        }

    def training_hash(self) -> str:
        return stable_hash(self.to_json())


def build_lora_spec(class_id: int, caption_pairs: Sequence[CaptionPair],
                    regime: Regime, records: Sequence[ImageRecord],
                    **overrides) -> LoraJobSpec:
    """Assemble a fine-tuning spec from one class's caption pairs.

    ``records`` supplies the image uri for each caption's image id. Field
    overrides pass straight through to the spec.
    """
    wrong = [p for p in caption_pairs if p.class_id != class_id]
    if wrong:
        raise TaxonomyError(
            f"caption pairs for classes {sorted({p.class_id for p in wrong})} "
            f"mixed into class {class_id} spec")
    if len(caption_pairs) != regime.pairs_required:
        raise RegimeMismatchError(
            f"regime {regime.value} requires {regime.pairs_required} pairs, "
            f"got {len(caption_pairs)}")
    uri_by_id = {rec.image_id: rec.uri for rec in records}
    training_pairs = []
    for pair in caption_pairs:
        if pair.image_id not in uri_by_id:
            raise TaxonomyError(
                f"caption references image id {pair.image_id} absent from records")
        training_pairs.append((uri_by_id[pair.image_id], pair.caption))
    return LoraJobSpec(class_id=class_id, regime=regime,
                       training_pairs=tuple(training_pairs), **overrides)


@dataclass(frozen=True)
class RegistryEntry:
    artifact_uri: str
    regime: Regime
    training_hash: str

    def __post_init__(self):
        if not self.artifact_uri:
            raise ValueError("artifact_uri must be non-empty")


@dataclass(frozen=True)
class LoraRegistry:
    """Immutable (class_id, regime) -> adapter artifact map."""

    entries: Mapping[tuple[int, Regime], RegistryEntry] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, class_id: int, regime: Regime) -> RegistryEntry:
        try:
            return self.entries[(class_id, regime)]
        except KeyError:
            raise RegistryError(
                f"no adapter registered for class {class_id} "
                f"regime {regime.value}") from None

    def has(self, class_id: int, regime: Regime) -> bool:
        return (class_id, regime) in self.entries

    def to_json(self) -> dict:
        return {
            "entries": [
                {"class_id": cid, "regime": regime.value,
                 "artifact_uri": entry.artifact_uri,
                 "training_hash": entry.training_hash}
                for (cid, regime), entry in sorted(
                    self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
            ]
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "LoraRegistry":
        entries = {}
        for item in payload.get("entries", []):
            regime = Regime(item["regime"])
            entries[(int(item["class_id"]), regime)] = RegistryEntry(
                artifact_uri=item["artifact_uri"], regime=regime,
                training_hash=item.get("training_hash", ""))
        return cls(entries=entries)


def register_lora(registry: LoraRegistry, class_id: int, regime: Regime,
                  artifact_uri: str, training_hash: str = "") -> LoraRegistry:
    """Upsert one adapter; returns a new registry value."""
    if not artifact_uri:
        raise ValueError("artifact_uri must be non-empty")
    entries = dict(registry.entries)
    entries[(class_id, regime)] = RegistryEntry(
        artifact_uri=artifact_uri, regime=regime, training_hash=training_hash)
    return LoraRegistry(entries=entries)


@dataclass(frozen=True)
class SynthesisJobSpec:
    class_id: int
    regime: Regime
    adapter: RegistryEntry
    prompts: PromptSet
    count: int
    seed: int
    guidance: tuple[GuidancePair, ...] | None = None
    conditioning_strength: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not self.prompts.prompts:
            raise ValueError("prompt set must be non-empty")
        if self.guidance is not None:
            object.__setattr__(self, "guidance", tuple(self.guidance))
            if not self.guidance:
                raise ValueError("guidance list, when present, must be non-empty")

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "regime": self.regime.value,
            "adapter_uri": self.adapter.artifact_uri,
            "prompt_count": len(self.prompts.prompts),
            "count": self.count,
            "seed": self.seed,
            "guided": self.guidance is not None,
            "guidance_count": 0 if self.guidance is None else len(self.guidance),
            "conditioning_strength": self.conditioning_strength,
        }


def build_synthesis_spec(registry: LoraRegistry, class_id: int, regime: Regime,
                         prompts: PromptSet, count: int, seed: int,
                         guidance: Sequence[GuidancePair] | None = None,
                         conditioning_strength: float = 1.0) -> SynthesisJobSpec:
    """Spec constructor that enforces the registry gate up front."""
    adapter = registry.get(class_id, regime)
    return SynthesisJobSpec(
        class_id=class_id, regime=regime, adapter=adapter, prompts=prompts,
        count=count, seed=seed,
        guidance=None if guidance is None else tuple(guidance),
        conditioning_strength=conditioning_strength)


@dataclass(frozen=True)
class GeneratedRecord:
    image_uri: str
    prompt: str
    class_id: int
    seed: int
    guidance_pair_id: int | None = None
    width: int | None = None
    height: int | None = None

    def to_json(self) -> dict:
        return {
            "image_uri": self.image_uri,
            "prompt": self.prompt,
            "class_id": self.class_id,
            "seed": self.seed,
            "guidance_pair_id": self.guidance_pair_id,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "GeneratedRecord":
        return cls(image_uri=payload["image_uri"], prompt=payload["prompt"],
                   class_id=int(payload["class_id"]), seed=int(payload["seed"]),
                   guidance_pair_id=payload.get("guidance_pair_id"),
                   width=payload.get("width"), height=payload.get("height"))


@dataclass(frozen=True)
class GeneratedBatch:
    class_id: int
    regime: Regime
    records: tuple[GeneratedRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if any(rec.class_id != self.class_id for rec in self.records):
            raise ValueError("all records in a batch must share its class id")

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "regime": self.regime.value,
            "records": [rec.to_json() for rec in self.records],
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "GeneratedBatch":
        return cls(class_id=int(payload["class_id"]),
                   regime=Regime(payload["regime"]),
                   records=tuple(GeneratedRecord.from_json(r)
                                 for r in payload["records"]))


def synthesize(spec: SynthesisJobSpec, backend: SynthesisBackend, *,
               retry_limit: int = 2, workers: int = 1) -> GeneratedBatch:
    """Generate exactly ``spec.count`` records through the backend.

    Prompts and guidance pairs cycle in order; record ``i`` uses seed
    ``spec.seed * 10000 + i``. Individual failures retry up to
    ``retry_limit`` times and any survivor fails the job with a
    ShortfallError listing the failed indices.
    """
    if spec.adapter is None:
        raise RegistryError(f"no adapter available for class {spec.class_id}")
    prompts = spec.prompts.prompts
    guidance = spec.guidance

    if guidance is not None:
        missing = [p.source_image_id for p in guidance if p.edge_map_uri is None]
        if missing:
            raise ValueError(
                f"guidance pairs {missing[:3]} have no persisted edge map uri; "
                f"write the guidance set before synthesis")

    def generate_one(index: int):
        prompt = prompts[index % len(prompts)]
        pair_id = None if guidance is None else index % len(guidance)
        request = SynthesisRequest(
            prompt=prompt,
            adapter_uri=spec.adapter.artifact_uri,
            seed=spec.seed * SEED_STRIDE + index,
            edge_map_uri=None if pair_id is None else guidance[pair_id].edge_map_uri,
            conditioning_strength=(None if guidance is None
                                   else spec.conditioning_strength),
        )
        last_error = ""
        for _ in range(retry_limit + 1):
            try:
                response = backend.generate(request)
            except BackendError as exc:
                last_error = str(exc)
                continue
            return GeneratedRecord(
                image_uri=response.image_uri, prompt=prompt,
                class_id=spec.class_id, seed=request.seed,
                guidance_pair_id=pair_id, width=response.width,
                height=response.height)
        return index, last_error

    results = ordered_parallel_map(generate_one, list(range(spec.count)), workers)
    records = [r for r in results if isinstance(r, GeneratedRecord)]
    failures = [r for r in results if not isinstance(r, GeneratedRecord)]
    if failures:
        raise ShortfallError(
            f"synthesis for class {spec.class_id} failed on "
            f"{len(failures)} records",
            produced=len(records), requested=spec.count,
            partial=records, failed_indices=[idx for idx, _ in failures])
    return GeneratedBatch(class_id=spec.class_id, regime=spec.regime,
                          records=tuple(records))
