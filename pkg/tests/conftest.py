from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdet.datamodel import (Annotation, BoundingBox, DetectionDataset,
                                ImageRecord, Source, Split)
from synthdet.taxonomy import default_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


def make_record(image_id, class_id, *, width=640, height=480,
                box=(10.0, 10.0, 100.0, 100.0), split=Split.TRAIN,
                source=Source.REAL, confidence=None, extras=None):
    ann = Annotation(
        box=BoundingBox(*box),
        class_id=class_id,
        provenance=source,
        confidence=confidence,
    )
    return ImageRecord(
        image_id=image_id,
        uri=f"images/{image_id:06d}.png",
        width=width,
        height=height,
        annotations=(ann,),
        split=split,
        source=source,
        extras=extras or {},
    )


def make_real_train(taxonomy, per_class=24):
    """A real-style training set with `per_class` single-box records per class."""
    records = []
    image_id = 1
    for cls in taxonomy:
        for _ in range(per_class):
            records.append(make_record(image_id, cls.id))
            image_id += 1
    return DetectionDataset(taxonomy=taxonomy, records=tuple(records),
                            meta={"count_train": str(len(records))})


@pytest.fixture
def real_train_24(taxonomy):
    return make_real_train(taxonomy, per_class=24)
