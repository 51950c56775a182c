"""The fixed 15-class vehicle taxonomy and its 5 superclasses."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import TaxonomyError

SUPERCLASSES = (
    "armoured personnel carrier",
    "scout car",
    "battle tank",
    "howitzer",
    "military truck",
)

# Superclass-major row order; ids are assigned by position and are stable.
_CLASS_ROWS: tuple[tuple[str, str], ...] = (
    ("Boxer", "armoured personnel carrier"),
    ("BTR-80", "armoured personnel carrier"),
    ("TPz Fuchs", "armoured personnel carrier"),
    ("Patria", "armoured personnel carrier"),
    ("Fennek", "scout car"),
    ("BRDM-2", "scout car"),
    ("Leopard", "battle tank"),
    ("M1 Abrams", "battle tank"),
    ("T90", "battle tank"),
    ("CV90", "battle tank"),
    ("M109", "howitzer"),
    ("2S19 Msta", "howitzer"),
    ("Panzerhaubitze 2000", "howitzer"),
    ("DAF YA 4440", "military truck"),
    ("Scania", "military truck"),
)

NUM_CLASSES = len(_CLASS_ROWS)


@dataclass(frozen=True)
class VehicleClass:
    """One detector class: stable integer id, display name, superclass."""

    id: int
    name: str
    superclass: str

    def __post_init__(self):
        if self.superclass not in SUPERCLASSES:
            raise TaxonomyError(
                f"unknown superclass {self.superclass!r} for class {self.name!r}")
        if not self.name:
            raise TaxonomyError("class name must be non-empty")


@dataclass(frozen=True)
class Taxonomy:
    """Immutable set of the 15 vehicle classes keyed by id and by name."""

    classes: tuple[VehicleClass, ...]
    _by_id: dict[int, VehicleClass] = field(init=False, repr=False, compare=False)
    _by_name: dict[str, VehicleClass] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        names = [c.name for c in self.classes]
        if sorted(ids) != list(range(NUM_CLASSES)):
            raise TaxonomyError(
                f"class ids must be exactly 0..{NUM_CLASSES - 1}, got {sorted(ids)}")
        if len(set(names)) != len(names):
            raise TaxonomyError("class names must be unique")
        supers = {c.superclass for c in self.classes}
        if supers != set(SUPERCLASSES):
            raise TaxonomyError(
                f"superclasses must be exactly {set(SUPERCLASSES)}, got {supers}")
        object.__setattr__(self, "_by_id", {c.id: c for c in self.classes})
        object.__setattr__(self, "_by_name", {c.name: c for c in self.classes})

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(sorted(self.classes, key=lambda c: c.id))

    def class_ids(self) -> list[int]:
        return sorted(self._by_id)

    def has_id(self, class_id: int) -> bool:
        return class_id in self._by_id

    def by_id(self, class_id: int) -> VehicleClass:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise TaxonomyError(f"unknown class id {class_id}") from None

    def by_name(self, name: str) -> VehicleClass:
        try:
            return self._by_name[name]
        except KeyError:
            raise TaxonomyError(f"unknown class name {name!r}") from None

    def name_of(self, class_id: int) -> str:
        return self.by_id(class_id).name


def default_taxonomy() -> Taxonomy:
    """The canonical taxonomy with ids assigned in superclass-major order."""
    return Taxonomy(tuple(
        VehicleClass(id=i, name=name, superclass=sup)
        for i, (name, sup) in enumerate(_CLASS_ROWS)
    ))


def class_slug(name: str) -> str:
    """Filesystem-safe lowercase slug for a class name."""
    return "".join(ch if ch.isalnum() else "_" for ch in name.lower()).strip("_")
