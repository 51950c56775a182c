"""Self-contained input fixtures for mock-mode runs.

Mock pipelines need a real-image manifest (records only; the mock captioner
never opens the files) and a simulation dataset whose renders genuinely
exist, since edge extraction reads pixels. Renders are flat transparent
canvases with one opaque rectangle standing in for the vehicle, so the
ground-truth box is exact by construction.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .backends import save_png_atomic
from .datamodel import (Annotation, BoundingBox, DetectionDataset, ImageRecord,
                        Source, Split)
from .dataset_io import save_dataset
from .taxonomy import Taxonomy

# 21-50 per class summing to 449, matching the reference test-split totals.
_TEST_COUNTS = (30,) * 14 + (29,)

_VIEW_TAGS = ("front", "front_quarter", "side", "rear_quarter", "rear",
              "elevated", "ground")


def _random_rect(rng: np.random.Generator, canvas: int) -> tuple[int, int, int, int]:
    w = int(rng.integers(canvas // 4, canvas - 8))
    h = int(rng.integers(canvas // 4, canvas - 8))
    x0 = int(rng.integers(2, canvas - w - 2))
    y0 = int(rng.integers(2, canvas - h - 2))
    return x0, y0, x0 + w, y0 + h


def build_real_fixture(out_dir: str | Path, taxonomy: Taxonomy,
                       seed: int = 0) -> dict[str, Path]:
    """Write train/val/test manifests shaped like the reference real set.

    24 train and 10 val records per class, a 449-record test split, one box
    per record. Image files are not materialized; nothing in the pipeline
    reads real pixels.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 977])
    paths = {}
    image_id = 1
    for split, per_class in (
            (Split.TRAIN, [24] * len(taxonomy)),
            (Split.VAL, [10] * len(taxonomy)),
            (Split.TEST, list(_TEST_COUNTS))):
        records = []
        for cls in taxonomy:
            for _ in range(per_class[cls.id]):
                width, height = 640, 480
                x0 = float(rng.integers(0, width // 2))
                y0 = float(rng.integers(0, height // 2))
                box = BoundingBox(x0, y0,
                                  x0 + float(rng.integers(40, width // 2)),
                                  y0 + float(rng.integers(40, height // 2)))
                records.append(ImageRecord(
                    image_id=image_id,
                    uri=f"real/{split.value}/{image_id:06d}.jpg",
                    width=width, height=height,
                    annotations=(Annotation(box=box, class_id=cls.id,
                                            provenance=Source.REAL),),
                    split=split, source=Source.REAL))
                image_id += 1
        dataset = DetectionDataset(
            taxonomy=taxonomy, records=tuple(records),
            meta={f"count_{split.value}": str(len(records)),
                  "fixture": "mock-real", "fixture_seed": str(seed)})
        path = out_dir / f"real_{split.value}.json"
        save_dataset(dataset, path)
        paths[split.value] = path
    return paths


def build_sim_fixture(out_dir: str | Path, taxonomy: Taxonomy,
                      per_class: int = 150, seed: int = 0,
                      canvas: int = 96) -> Path:
    """Render the simulation stand-ins and write their manifest.

    Each render is an RGBA canvas, fully transparent except one opaque
    rectangle; the record's single annotation is that rectangle.
    """
    out_dir = Path(out_dir)
    renders_dir = out_dir / "renders"
    renders_dir.mkdir(parents=True, exist_ok=True)

    records = []
    image_id = 1
    for cls in taxonomy:
        rng = np.random.default_rng([seed, cls.id, 431])
        for index in range(per_class):
            x0, y0, x1, y1 = _random_rect(rng, canvas)
            img = np.zeros((canvas, canvas, 4), dtype=np.uint8)
            shade = 90 + int(rng.integers(0, 120))
            img[y0:y1, x0:x1] = (shade, shade // 2 + 40, 50, 255)
            filename = f"{image_id:06d}.png"
            save_png_atomic(Image.fromarray(img, mode="RGBA"),
                            renders_dir / filename)

            pose = {
                "viewpoint": _VIEW_TAGS[int(rng.integers(0, len(_VIEW_TAGS)))],
                "distance": f"{float(rng.uniform(10, 300)):.1f}",
                "yaw": f"{float(rng.uniform(0, 360)):.1f}",
                "pitch": f"{float(rng.uniform(-10, 30)):.1f}",
            }
            records.append(ImageRecord(
                image_id=image_id,
                uri=f"renders/{filename}",
                width=canvas, height=canvas,
                annotations=(Annotation(
                    box=BoundingBox(float(x0), float(y0), float(x1), float(y1)),
                    class_id=cls.id, provenance=Source.SIM_3D),),
                split=Split.TRAIN, source=Source.SIM_3D, extras=pose))
            image_id += 1

    dataset = DetectionDataset(
        taxonomy=taxonomy, records=tuple(records),
        meta={"count_train": str(len(records)), "fixture": "mock-sim",
              "fixture_seed": str(seed)})
    path = out_dir / "sim.json"
    save_dataset(dataset, path)
    return path
