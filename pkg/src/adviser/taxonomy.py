"""Object classes and the joint 34-entry keypoint vocabulary.

Keypoints of all classes share one global index space so a single output
head can score them; each class owns a contiguous slice of it.
"""

from __future__ import annotations

import enum
from importlib import resources
from pathlib import Path

NUM_KEYPOINTS = 34


class ObjectClass(str, enum.Enum):
    BUS = "bus"
    CAR = "car"
    MOTORBIKE = "motorbike"

    @classmethod
    def parse(cls, value) -> "ObjectClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise TaxonomyError(f"unknown object class {value!r}") from None


CLASSES = (ObjectClass.BUS, ObjectClass.CAR, ObjectClass.MOTORBIKE)


class TaxonomyError(ValueError):
    pass


class KeypointTaxonomy:
    """Ordered ``(class, keypoint name)`` pairs with per-class index ranges."""

    def __init__(self, entries):
        entries = [(ObjectClass.parse(c), str(n)) for c, n in entries]
        if len(entries) != NUM_KEYPOINTS:
            raise TaxonomyError(f"taxonomy has {len(entries)} keypoints, expected {NUM_KEYPOINTS}")

        self.entries = tuple(entries)
        self._index = {}
        self._slices = {}
        start = 0
        for i, (cls, name) in enumerate(entries):
            if (cls, name) in self._index:
                raise TaxonomyError(f"duplicate keypoint {name!r} for class {cls.value}")
            self._index[(cls, name)] = i
            last = i + 1 == len(entries) or entries[i + 1][0] != cls
            if last:
                if cls in self._slices:
                    raise TaxonomyError(f"keypoints of class {cls.value} are not contiguous")
                self._slices[cls] = range(start, i + 1)
                start = i + 1

        missing = [c.value for c in CLASSES if c not in self._slices]
        if missing:
            raise TaxonomyError(f"taxonomy has no keypoints for {missing}")

    @classmethod
    def from_file(cls, path) -> "KeypointTaxonomy":
        """Load a ``class,keypoint_name`` per line file; blank and ``#`` lines are skipped."""
        entries = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not parts[1]:
                raise TaxonomyError(f"{path}:{lineno}: expected 'class,keypoint_name'")
            entries.append((parts[0], parts[1]))
        return cls(entries)

    def __len__(self):
        return len(self.entries)

    def class_slice(self, cls) -> range:
        return self._slices[ObjectClass.parse(cls)]

    def keypoint_index(self, cls, name: str) -> int:
        cls = ObjectClass.parse(cls)
        try:
            return self._index[(cls, name)]
        except KeyError:
            raise TaxonomyError(f"class {cls.value} has no keypoint {name!r}") from None

    def keypoint(self, index: int) -> tuple[ObjectClass, str]:
        """Inverse of :meth:`keypoint_index`."""
        if not 0 <= index < len(self.entries):
            raise TaxonomyError(f"keypoint index {index} out of range")
        return self.entries[index]

    def name(self, index: int) -> str:
        return self.keypoint(index)[1]

    def class_of(self, index: int) -> ObjectClass:
        return self.keypoint(index)[0]

    def names(self, cls) -> list[str]:
        return [self.entries[i][1] for i in self.class_slice(cls)]


def _load_default() -> KeypointTaxonomy:
    with resources.as_file(resources.files("adviser") / "data" / "pascal3d_vehicles.txt") as path:
        return KeypointTaxonomy.from_file(path)


TAXONOMY = _load_default()


def class_slice(cls) -> range:
    return TAXONOMY.class_slice(cls)


def keypoint_index(cls, name: str) -> int:
    return TAXONOMY.keypoint_index(cls, name)
