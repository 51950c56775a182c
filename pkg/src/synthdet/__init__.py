"""synthdet: synthetic detection-training data pipeline toolkit."""

__version__ = "0.1.0"

from .datamodel import (Annotation, BoundingBox, DetectionDataset, ImageRecord,
                        Source, Split, ValidationReport, validate_dataset)
from .dataset_io import load_dataset, save_dataset
from .taxonomy import Taxonomy, VehicleClass, default_taxonomy

__all__ = [
    "Annotation",
    "BoundingBox",
    "DetectionDataset",
    "ImageRecord",
    "Source",
    "Split",
    "Taxonomy",
    "ValidationReport",
    "VehicleClass",
    "default_taxonomy",
    "load_dataset",
    "save_dataset",
    "validate_dataset",
    "__version__",
]
