"""Class vocabulary: id/name/prototype-color table shared by all models."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

BACKGROUND_ID = 0


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    color: Tuple[float, float, float]  # RGB prototype in [0,1]^3


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered class table. Class 0 is always the background."""

    entries: Tuple[ClassEntry, ...]

    def __post_init__(self):
        ids = [e.class_id for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"class_ids must be contiguous from 0, got {ids}")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError(f"class names must be unique, got {names}")
        if not self.entries:
            raise ValueError("vocabulary needs at least the background class")
        for e in self.entries:
            if len(e.color) != 3 or not all(0.0 <= c <= 1.0 for c in e.color):
                raise ValueError(f"prototype color for {e.name!r} must be RGB in [0,1]^3")

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def foreground_ids(self) -> Tuple[int, ...]:
        return tuple(e.class_id for e in self.entries if e.class_id != BACKGROUND_ID)

    def colors(self) -> np.ndarray:
        """Prototype colors as a (num_classes, 3) float array."""
        return np.array([e.color for e in self.entries], dtype=np.float64)

    def name_of(self, class_id: int) -> str:
        return self.entries[class_id].name

    def id_of(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.class_id
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    def to_json(self) -> str:
        doc = {
            str(e.class_id): {"name": e.name, "color": list(e.color)}
            for e in self.entries
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClassVocabulary":
        doc = json.loads(text)
        entries = []
        for key in sorted(doc, key=int):
            item = doc[key]
            entries.append(
                ClassEntry(int(key), item["name"], tuple(float(c) for c in item["color"]))
            )
        return cls(tuple(entries))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[str, Tuple[float, float, float]]]) -> "ClassVocabulary":
        """Build from an ordered (name, color) list; index 0 is the background."""
        return cls(tuple(ClassEntry(i, n, tuple(c)) for i, (n, c) in enumerate(pairs)))


def default_vocabulary() -> ClassVocabulary:
    """Small well-separated palette used by the toy backends and demos."""
    return ClassVocabulary.from_pairs(
        [
            ("background", (0.05, 0.05, 0.05)),
            ("cat", (0.9, 0.1, 0.1)),
            ("dog", (0.1, 0.8, 0.15)),
            ("car", (0.15, 0.2, 0.9)),
            ("bird", (0.9, 0.85, 0.1)),
        ]
    )
