"""Backend contracts and the deterministic in-repo mock implementations.

All external models (captioning VLM, prompt LLM, text-to-image synthesizer,
open-vocabulary detector, detector trainer) sit behind small JSON
request/response contracts so deployments can swap transports freely:

* text (captioner / prompt generator):
  ``{template_role, rendered_prompt, image_uri?}`` ->
  ``{text | texts[], model_id}``
* synthesis: ``{prompt, adapter_uri, seed, edge_map_uri?,
  conditioning_strength?}`` -> ``{image_uri}``
* open-vocab detection: ``{image_uri, phrase}`` ->
  ``{detections: [{box, confidence, label}]}`` in descending confidence
* detector training: job-spec JSON in; per-epoch history JSON lines
  ``{epoch, val_map50, checkpoint_uri}`` and test-split predictions JSON
  lines ``{image_id, box, class_id, confidence}`` out.

Boxes on the wire are corner form ``[x_min, y_min, x_max, y_max]``.

The mocks are pure functions of their requests: the synthesizer paints a
flat background with one filled rectangle (at the guidance box when an edge
map is supplied, centered otherwise) so downstream boxes are analytically
known, and the mock annotator recovers exactly that rectangle.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image

from .errors import BackendError, BackendResponseError
from .util import atomic_write_bytes


def save_png_atomic(image: Image.Image, path: str | Path) -> None:
    """Encode to memory, then write with temp-file + rename."""
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    atomic_write_bytes(path, buffer.getvalue())

# --------------------------------------------------------------- wire types


@dataclass(frozen=True)
class TextRequest:
    template_role: str
    rendered_prompt: str
    image_uri: str | None = None

    def to_json(self) -> dict:
        payload = {"template_role": self.template_role,
                   "rendered_prompt": self.rendered_prompt}
        if self.image_uri is not None:
            payload["image_uri"] = self.image_uri
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "TextRequest":
        return cls(template_role=payload["template_role"],
                   rendered_prompt=payload["rendered_prompt"],
                   image_uri=payload.get("image_uri"))


@dataclass(frozen=True)
class TextResponse:
    model_id: str
    text: str | None = None
    texts: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.text is None) == (self.texts is None):
            raise BackendResponseError(
                "text response must carry exactly one of 'text' or 'texts'")
        if self.texts is not None:
            object.__setattr__(self, "texts", tuple(self.texts))

    def to_json(self) -> dict:
        payload: dict = {"model_id": self.model_id}
        if self.text is not None:
            payload["text"] = self.text
        else:
            payload["texts"] = list(self.texts)
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "TextResponse":
        return cls(model_id=payload.get("model_id", "unknown"),
                   text=payload.get("text"),
                   texts=tuple(payload["texts"]) if "texts" in payload else None)


@dataclass(frozen=True)
class SynthesisRequest:
    prompt: str
    adapter_uri: str
    seed: int
    edge_map_uri: str | None = None
    conditioning_strength: float | None = None

    def to_json(self) -> dict:
        payload: dict = {"prompt": self.prompt, "adapter_uri": self.adapter_uri,
                         "seed": self.seed}
        if self.edge_map_uri is not None:
            payload["edge_map_uri"] = self.edge_map_uri
        if self.conditioning_strength is not None:
            payload["conditioning_strength"] = self.conditioning_strength
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "SynthesisRequest":
        return cls(prompt=payload["prompt"], adapter_uri=payload["adapter_uri"],
                   seed=int(payload["seed"]),
                   edge_map_uri=payload.get("edge_map_uri"),
                   conditioning_strength=payload.get("conditioning_strength"))


@dataclass(frozen=True)
class SynthesisResponse:
    image_uri: str
    width: int | None = None
    height: int | None = None

    def to_json(self) -> dict:
        payload: dict = {"image_uri": self.image_uri}
        if self.width is not None:
            payload["width"] = self.width
            payload["height"] = self.height
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "SynthesisResponse":
        return cls(image_uri=payload["image_uri"], width=payload.get("width"),
                   height=payload.get("height"))


@dataclass(frozen=True)
class WireDetection:
    box: tuple[float, float, float, float]
    confidence: float
    label: str

    def to_json(self) -> dict:
        return {"box": list(self.box), "confidence": self.confidence,
                "label": self.label}

    @classmethod
    def from_json(cls, payload: dict) -> "WireDetection":
        return cls(box=tuple(float(v) for v in payload["box"]),
                   confidence=float(payload["confidence"]),
                   label=str(payload.get("label", "")))


@dataclass(frozen=True)
class DetectionQueryRequest:
    image_uri: str
    phrase: str

    def to_json(self) -> dict:
        return {"image_uri": self.image_uri, "phrase": self.phrase}

    @classmethod
    def from_json(cls, payload: dict) -> "DetectionQueryRequest":
        return cls(image_uri=payload["image_uri"], phrase=payload["phrase"])


@dataclass(frozen=True)
class DetectionQueryResponse:
    detections: tuple[WireDetection, ...]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_json(self) -> dict:
        return {"detections": [d.to_json() for d in self.detections]}

    @classmethod
    def from_json(cls, payload: dict) -> "DetectionQueryResponse":
        return cls(detections=tuple(WireDetection.from_json(d)
                                    for d in payload["detections"]))


# ---------------------------------------------------------------- protocols


class TextBackend(Protocol):
    def complete(self, request: TextRequest) -> TextResponse: ...


class SynthesisBackend(Protocol):
    def generate(self, request: SynthesisRequest) -> SynthesisResponse: ...


class OpenVocabBackend(Protocol):
    def detect(self, request: DetectionQueryRequest) -> DetectionQueryResponse: ...


class DetectorBackend(Protocol):
    def run(self, spec_payload: dict, out_dir: Path) -> "DetectorRunResult": ...


@dataclass(frozen=True)
class DetectorRunResult:
    history_path: Path
    predictions_path: Path


# ------------------------------------------------------------------- mocks


def _digest(*parts: str) -> int:
    joined = "\x1f".join(parts)
    return int(hashlib.sha256(joined.encode("utf-8")).hexdigest()[:8], 16)


_VIEWPOINTS = (
    "front three-quarter view", "rear profile", "side profile",
    "elevated view", "aerial perspective", "ground-level view",
    "front view", "rear three-quarter view",
)
_DISTANCES = ("extreme close-up", "medium tactical distance",
              "distant reconnaissance view")
_TERRAIN = ("a muddy field", "cracked desert ground", "a forest road",
            "an urban street", "packed gravel", "snow-covered ground")
_WEATHER = ("low cloud flattens the light across the scene",
            "dust hangs in the air behind the hull",
            "hard sunlight throws long shadows over the ground",
            "drizzle beads on the armor plating")
_CONDITIONS = ("mud-caked", "freshly painted", "battle-worn", "weathered")


class MockCaptioner:
    """Deterministic stand-in for the captioning VLM."""

    model_id = "mock-captioner-1"

    def complete(self, request: TextRequest) -> TextResponse:
        if request.image_uri is None:
            raise BackendError("captioner requires an image_uri")
        match = re.search(r"Detail the (.+?) including", request.rendered_prompt)
        vehicle = match.group(1).strip() if match else "military vehicle"
        d = _digest(request.image_uri)
        view = _VIEWPOINTS[d % len(_VIEWPOINTS)]
        dist = _DISTANCES[(d // 7) % len(_DISTANCES)]
        cond = _CONDITIONS[(d // 3) % len(_CONDITIONS)]
        terrain = _TERRAIN[(d // 11) % len(_TERRAIN)]
        weather = _WEATHER[(d // 13) % len(_WEATHER)]
        text = (f"A {cond} {vehicle} sits at {dist}, captured in a {view} "
                f"with sharp focus. The vehicle rests on {terrain} while "
                f"{weather}.")
        return TextResponse(model_id=self.model_id, text=text)


class MockPromptGenerator:
    """Deterministic stand-in for the prompt-writing LLM.

    The batch size is read from the rendered request the same way a real
    model would, via the trailing "Generate N diverse captions now" line;
    ``fixed_batch`` overrides that for templates without one.
    """

    model_id = "mock-promptgen-1"

    def __init__(self, fixed_batch: int | None = None):
        self.fixed_batch = fixed_batch

    def complete(self, request: TextRequest) -> TextResponse:
        match = re.search(r"Generate\s+(\d+)\s+diverse captions now",
                          request.rendered_prompt)
        if match:
            batch = int(match.group(1))
        elif self.fixed_batch is not None:
            batch = self.fixed_batch
        else:
            raise BackendError("cannot infer batch size from prompt")
        d = _digest(request.rendered_prompt)
        texts = []
        for i in range(batch):
            k = d + i
            view = _VIEWPOINTS[k % len(_VIEWPOINTS)]
            terrain = _TERRAIN[k % len(_TERRAIN)]
            cond = _CONDITIONS[k % len(_CONDITIONS)]
            weather = _WEATHER[k % len(_WEATHER)]
            texts.append(
                f"The {cond} vehicle advances across {terrain}, shown in a "
                f"{view}, engine idling under load. Around it {weather}.")
        return TextResponse(model_id=self.model_id, texts=tuple(texts))


class EchoPromptGenerator:
    """Returns the first example caption found in the request, batch times."""

    model_id = "mock-echo-1"

    def __init__(self, batch: int = 1):
        self.batch = batch

    def complete(self, request: TextRequest) -> TextResponse:
        lines = request.rendered_prompt.splitlines()
        try:
            pos = lines.index("EXAMPLE TRAINING CAPTIONS:")
            first = lines[pos + 1]
        except (ValueError, IndexError):
            first = "example caption"
        return TextResponse(model_id=self.model_id,
                            texts=tuple([first] * self.batch))


class MockSynthesizer:
    """Paints a flat background with one filled rectangle per image.

    Guided requests place the rectangle at the bounding box of the edge
    map's set pixels on a canvas of the edge map's size; unguided requests
    use a fixed centered rectangle. Pixel-exact and deterministic, so
    pipeline tests know every downstream box analytically.
    """

    background = (70, 80, 70)
    foreground = (180, 60, 50)

    def __init__(self, out_dir: str | Path, canvas: int = 128):
        self.out_dir = Path(out_dir)
        self.canvas = canvas

    def generate(self, request: SynthesisRequest) -> SynthesisResponse:
        if request.edge_map_uri is not None:
            with Image.open(request.edge_map_uri) as edge_img:
                edge = np.array(edge_img.convert("L"))
            height, width = edge.shape
            ys, xs = np.nonzero(edge)
            if len(xs):
                box = (int(xs.min()), int(ys.min()),
                       int(xs.max()) + 1, int(ys.max()) + 1)
            else:
                box = (width // 4, height // 4, 3 * width // 4, 3 * height // 4)
        else:
            width = height = self.canvas
            box = (width // 4, height // 4, 3 * width // 4, 3 * height // 4)

        img = np.zeros((height, width, 3), dtype=np.uint8)
        img[:] = self.background
        img[box[1]:box[3], box[0]:box[2]] = self.foreground

        path = self.out_dir / f"img_{request.seed}.png"
        save_png_atomic(Image.fromarray(img), path)
        return SynthesisResponse(image_uri=str(path), width=width, height=height)


class FlakySynthesizer:
    """Test helper: fails on the given request indices, else delegates."""

    def __init__(self, inner: SynthesisBackend, fail_seeds: set[int],
                 fail_forever: bool = True):
        self.inner = inner
        self.fail_seeds = set(fail_seeds)
        self.fail_forever = fail_forever

    def generate(self, request: SynthesisRequest) -> SynthesisResponse:
        if request.seed in self.fail_seeds:
            if not self.fail_forever:
                self.fail_seeds.discard(request.seed)
            raise BackendError(f"synthetic failure for seed {request.seed}")
        return self.inner.generate(request)


class MockOpenVocabDetector:
    """Finds the single non-background rectangle the mock synthesizer painted."""

    model_id = "mock-annotator-1"

    def detect(self, request: DetectionQueryRequest) -> DetectionQueryResponse:
        with Image.open(request.image_uri) as img:
            arr = np.array(img.convert("RGB"))
        corners = [arr[0, 0], arr[0, -1], arr[-1, 0], arr[-1, -1]]
        keys, counts = np.unique(np.stack(corners), axis=0, return_counts=True)
        background = keys[np.argmax(counts)]
        mask = np.any(arr != background, axis=-1)
        ys, xs = np.nonzero(mask)
        if len(xs) == 0:
            return DetectionQueryResponse(detections=())
        box = (float(xs.min()), float(ys.min()),
               float(xs.max()) + 1.0, float(ys.max()) + 1.0)
        area_fraction = ((box[2] - box[0]) * (box[3] - box[1])
                         / (arr.shape[0] * arr.shape[1]))
        confidence = round(0.6 + 0.39 * min(1.0, area_fraction), 4)
        return DetectionQueryResponse(detections=(
            WireDetection(box=box, confidence=confidence, label=request.phrase),))


class MockDetector:
    """Writes a plausible training history and perfect test predictions.

    The test manifest is read from ``backend_defaults.test_manifest`` in the
    job spec. Validation mAP follows a saturating curve with a small
    seed-dependent wobble; predictions equal test ground truth at confidence
    1.0 so the evaluation path is exactly checkable.
    """

    def run(self, spec_payload: dict, out_dir: Path) -> DetectorRunResult:
        from .dataset_io import load_dataset  # local import avoids a cycle

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        epochs = int(spec_payload["epochs"])
        seed = int(spec_payload["seed"])

        history_path = out_dir / "history.jsonl"
        lines = []
        for epoch in range(1, epochs + 1):
            wobble = 0.01 * math.sin(0.7 * epoch + seed)
            val = 0.35 + 0.6 * (1.0 - math.exp(-epoch / 12.0)) + wobble
            val = min(1.0, max(0.0, round(val, 6)))
            lines.append(json.dumps({
                "epoch": epoch,
                "val_map50": val,
                "checkpoint_uri": f"{out_dir}/ckpt_{epoch:03d}.bin",
            }, sort_keys=True))
        history_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

        test_manifest = spec_payload.get("backend_defaults", {}).get("test_manifest")
        if not test_manifest:
            raise BackendError("backend_defaults.test_manifest is required")
        test_set = load_dataset(test_manifest)
        predictions_path = out_dir / "predictions.jsonl"
        with open(predictions_path, "w", encoding="utf-8") as fh:
            for rec in test_set.records:
                for ann in rec.annotations:
                    fh.write(json.dumps({
                        "image_id": rec.image_id,
                        "box": [ann.box.x_min, ann.box.y_min,
                                ann.box.x_max, ann.box.y_max],
                        "class_id": ann.class_id,
                        "confidence": 1.0,
                    }, sort_keys=True) + "\n")
        return DetectorRunResult(history_path=history_path,
                                 predictions_path=predictions_path)


# ---------------------------------------------------------- http transport


class HttpTextBackend:
    """POSTs the text contract to an HTTP endpoint."""

    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def complete(self, request: TextRequest) -> TextResponse:
        import requests

        try:
            resp = requests.post(self.endpoint, json=request.to_json(),
                                 timeout=self.timeout)
            resp.raise_for_status()
            return TextResponse.from_json(resp.json())
        except BackendResponseError:
            raise
        except Exception as exc:
            raise BackendError(f"text backend {self.endpoint}: {exc}") from exc


class HttpSynthesisBackend:
    def __init__(self, endpoint: str, timeout: float = 600.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, request: SynthesisRequest) -> SynthesisResponse:
        import requests

        try:
            resp = requests.post(self.endpoint, json=request.to_json(),
                                 timeout=self.timeout)
            resp.raise_for_status()
            return SynthesisResponse.from_json(resp.json())
        except Exception as exc:
            raise BackendError(f"synthesis backend {self.endpoint}: {exc}") from exc


class HttpOpenVocabBackend:
    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def detect(self, request: DetectionQueryRequest) -> DetectionQueryResponse:
        import requests

        try:
            resp = requests.post(self.endpoint, json=request.to_json(),
                                 timeout=self.timeout)
            resp.raise_for_status()
            return DetectionQueryResponse.from_json(resp.json())
        except Exception as exc:
            raise BackendError(f"open-vocab backend {self.endpoint}: {exc}") from exc
