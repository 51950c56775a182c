"""Caption generation, prompt synthesis, and geometry stripping.

Captioning and prompt generation run through pluggable text backends; the
templates shipped under ``data/`` are the defaults and configuration may
re-assign which file plays which role. Geometry stripping removes whole
comma/period-delimited clauses that mention viewpoint, orientation or
distance, for use when that information is carried by edge conditioning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Mapping, Sequence

from .backends import TextBackend, TextRequest
from .datamodel import ImageRecord
from .errors import BackendError, BackendResponseError, ShortfallError, TemplateError, TaxonomyError
from .taxonomy import Taxonomy
from .util import ordered_parallel_map, stable_hash

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"
ALLOWED_PLACEHOLDERS = frozenset({"vehicle_name", "examples_list", "batch"})
_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_]+)\}")


class TemplateRole(str, Enum):
    CAPTION_SYSTEM = "caption_system"
    CAPTION_USER = "caption_user"
    PROMPTGEN_SYSTEM = "promptgen_system"
    PROMPTGEN_USER = "promptgen_user"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    role: TemplateRole

    def __post_init__(self):
        tokens = set(_PLACEHOLDER_RE.findall(self.body))
        unknown = tokens - ALLOWED_PLACEHOLDERS
        if unknown:
            raise TemplateError(
                f"template {self.name!r} uses unknown placeholder "
                f"{{{sorted(unknown)[0]}}}")

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.body))


_ROLE_FILES = {
    TemplateRole.CAPTION_SYSTEM: "caption_system.txt",
    TemplateRole.CAPTION_USER: "caption_user.txt",
    TemplateRole.PROMPTGEN_SYSTEM: "promptgen_system.txt",
    TemplateRole.PROMPTGEN_USER: "promptgen_user.txt",
}


def load_default_templates() -> dict[TemplateRole, PromptTemplate]:
    """The four template files shipped with the package, keyed by role."""
    templates = {}
    for role, filename in _ROLE_FILES.items():
        body = (resources.files("synthdet") / "data" / filename).read_text("utf-8")
        templates[role] = PromptTemplate(name=filename, body=body, role=role)
    return templates


def render_template(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Literal single-pass substitution; raises on any unbound placeholder."""
    needed = template.placeholders()
    missing = needed - set(bindings)
    if missing:
        raise TemplateError(
            f"unresolved placeholder {{{sorted(missing)[0]}}} in template "
            f"{template.name!r}")
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.body)


# ------------------------------------------------------------- captioning


@dataclass(frozen=True)
class CaptionPair:
    image_id: int
    caption: str
    class_id: int

    def __post_init__(self):
        if not self.caption.strip():
            raise ValueError("caption must be non-empty")


@dataclass(frozen=True)
class CaptionRejection:
    image_id: int
    reason: str
    attempts: int


@dataclass(frozen=True)
class CaptionBatch:
    pairs: tuple[CaptionPair, ...]
    rejections: tuple[CaptionRejection, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "rejections", tuple(self.rejections))


def caption_images(records: Sequence[ImageRecord], captioner: TextBackend,
                   taxonomy: Taxonomy, *,
                   templates: Mapping[TemplateRole, PromptTemplate] | None = None,
                   retries: int = 1, workers: int = 1) -> CaptionBatch:
    """Caption every record through the backend, one pair per record.

    Records must all belong to one class. Failures become rejection entries
    (with the attempt count) rather than exceptions, so
    ``len(pairs) + len(rejections) == len(records)`` always holds. Output is
    ordered by image id.
    """
    if not records:
        return CaptionBatch((), ())
    class_ids = {ann.class_id for rec in records for ann in rec.annotations}
    if len(class_ids) != 1:
        raise TaxonomyError(
            f"caption batch must be single-class, found class ids {sorted(class_ids)}")
    class_id = class_ids.pop()
    vehicle_name = taxonomy.name_of(class_id)

    templates = templates or load_default_templates()
    bindings = {"vehicle_name": vehicle_name}
    system = render_template(templates[TemplateRole.CAPTION_SYSTEM], bindings)
    user = render_template(templates[TemplateRole.CAPTION_USER], bindings)
    rendered = f"{system}\n\n{user}"

    ordered = sorted(records, key=lambda r: r.image_id)

    def caption_one(record: ImageRecord):
        request = TextRequest(template_role=TemplateRole.CAPTION_USER.value,
                              rendered_prompt=rendered, image_uri=record.uri)
        last_error = ""
        for attempt in range(1, retries + 2):
            try:
                response = captioner.complete(request)
            except BackendError as exc:
                last_error = str(exc)
                continue
            if response.text is None:
                return record, None, "malformed_response", attempt
            text = response.text.strip()
            if not text:
                return record, None, "empty_caption", attempt
            return record, text, None, attempt
        return record, None, f"backend_error: {last_error}", retries + 1

    pairs: list[CaptionPair] = []
    rejections: list[CaptionRejection] = []
    for record, text, reason, attempts in ordered_parallel_map(
            caption_one, ordered, workers):
        if text is not None:
            pairs.append(CaptionPair(image_id=record.image_id, caption=text,
                                     class_id=class_id))
        else:
            rejections.append(CaptionRejection(image_id=record.image_id,
                                               reason=reason, attempts=attempts))
    return CaptionBatch(tuple(pairs), tuple(rejections))


# -------------------------------------------------------- prompt synthesis


@dataclass(frozen=True)
class PromptSet:
    class_id: int
    prompts: tuple[str, ...]
    generation_meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "generation_meta", dict(self.generation_meta))
        if any(not p.strip() for p in self.prompts):
            raise ValueError("prompts must be non-empty strings")


def generate_prompts(class_id: int, caption_examples: Sequence[CaptionPair],
                     batch: int, llm: TextBackend, *, vehicle_name: str,
                     templates: Mapping[TemplateRole, PromptTemplate] | None = None,
                     ) -> PromptSet:
    """Ask the language backend for ``batch`` fresh prompts for one class.

    A short response raises ShortfallError with the partial set attached;
    a long response is truncated to the requested batch.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    if not caption_examples:
        raise ValueError("at least one caption example is required")

    templates = templates or load_default_templates()
    examples_text = "\n".join(pair.caption for pair in caption_examples)
    system = render_template(templates[TemplateRole.PROMPTGEN_SYSTEM],
                             {"vehicle_name": vehicle_name})
    user = render_template(templates[TemplateRole.PROMPTGEN_USER],
                           {"examples_list": examples_text, "batch": str(batch)})
    rendered = f"{system}\n\n{user}"

    response = llm.complete(TextRequest(
        template_role=TemplateRole.PROMPTGEN_USER.value, rendered_prompt=rendered))
    if response.texts is None:
        raise BackendResponseError("prompt generator must return a texts[] list")
    texts = [t.strip() for t in response.texts]
    if any(not t for t in texts):
        raise BackendResponseError("prompt generator returned an empty prompt")

    meta = {
        "model_id": response.model_id,
        "template_hash": stable_hash([
            templates[TemplateRole.PROMPTGEN_SYSTEM].body,
            templates[TemplateRole.PROMPTGEN_USER].body,
        ]),
    }
    if len(texts) < batch:
        raise ShortfallError(
            "prompt generator returned a short batch", produced=len(texts),
            requested=batch,
            partial=PromptSet(class_id, tuple(texts), meta) if texts else None)
    return PromptSet(class_id=class_id, prompts=tuple(texts[:batch]),
                     generation_meta=meta)


# ------------------------------------------------------ geometry stripping

_BARE_DIRECTIONS = frozenset({"front", "rear", "side"})
_BARE_QUALIFIERS = ("view", "profile", "perspective")


def _phrase_pattern(phrase: str) -> re.Pattern:
    words = phrase.split()
    if len(words) == 1 and words[0] in _BARE_DIRECTIONS:
        # A bare direction only counts as geometry when it names a viewpoint,
        # so "front view" matches while "front armor plate" survives.
        alternatives = "|".join(_BARE_QUALIFIERS)
        return re.compile(rf"\b{re.escape(words[0])}\s+(?:{alternatives})\b",
                          re.IGNORECASE)
    body = r"\s+".join(re.escape(w) for w in words)
    return re.compile(rf"\b{body}\b", re.IGNORECASE)


@dataclass(frozen=True)
class GeometryLexicon:
    """Normalized (lowercase, single-spaced) viewpoint/distance phrases."""

    phrases: tuple[str, ...]
    _patterns: tuple[re.Pattern, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        normalized = []
        seen = set()
        for phrase in self.phrases:
            norm = " ".join(phrase.lower().split())
            if not norm:
                raise ValueError("lexicon phrases must be non-empty")
            if norm in seen:
                raise ValueError(f"duplicate lexicon phrase {norm!r}")
            seen.add(norm)
            normalized.append(norm)
        object.__setattr__(self, "phrases", tuple(normalized))
        object.__setattr__(self, "_patterns",
                           tuple(_phrase_pattern(p) for p in normalized))

    def matches(self, text: str) -> bool:
        return any(p.search(text) for p in self._patterns)


def default_lexicon() -> GeometryLexicon:
    """Lexicon seeded from the shipped template vocabulary."""
    raw = (resources.files("synthdet") / "data" / "geometry_lexicon.txt").read_text("utf-8")
    return lexicon_from_text(raw)


def lexicon_from_text(raw: str) -> GeometryLexicon:
    """Parse a newline-delimited lexicon file; '#' lines are comments."""
    phrases = [line.strip() for line in raw.splitlines()
               if line.strip() and not line.lstrip().startswith("#")]
    return GeometryLexicon(phrases=tuple(phrases))


_CLAUSE_SPLIT_RE = re.compile(r"([,.])")


def _strip_once(prompt: str, lexicon: GeometryLexicon) -> str:
    parts = _CLAUSE_SPLIT_RE.split(prompt)
    clauses = parts[0::2]
    delims = parts[1::2]
    matched = [lexicon.matches(clause) for clause in clauses]

    # A period belongs to the clause before it; a comma joins two clauses and
    # survives only when both survive.
    out: list[str] = []
    for i, clause in enumerate(clauses):
        if not matched[i]:
            out.append(clause)
        if i < len(delims):
            delim = delims[i]
            if delim == "." and not matched[i]:
                out.append(delim)
            elif delim == "," and not matched[i] and not matched[i + 1]:
                out.append(delim)
    collapsed = re.sub(r" {2,}", " ", "".join(out))
    return collapsed.strip()


def strip_geometry(prompt: str, lexicon: GeometryLexicon) -> str:
    """Drop every clause containing a lexicon phrase; idempotent by fixpoint.

    Removal is clause-level so the survivors stay grammatical. A prompt whose
    every clause matches strips to the empty string, which is logged as a
    warning; the caller decides what to do with it.
    """
    current = prompt
    for _ in range(16):  # fixpoint: rejoining clauses can expose new matches
        stripped = _strip_once(current, lexicon)
        if stripped == current:
            break
        current = stripped
    if not current and prompt.strip():
        logger.warning("geometry stripping removed every clause of prompt %r",
                       prompt[:80])
    return current
