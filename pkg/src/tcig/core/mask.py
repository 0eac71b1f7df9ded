"""Per-class spatial masks and the lossless index-map serialization."""
from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from ..errors import MaskNotHardError, ShapeMismatchError
from .vocab import BACKGROUND_ID, ClassVocabulary


@dataclass(frozen=True, eq=False)
class SegMask:
    """Stack of per-class planes, shape (num_classes, height, width), values in [0,1].

    Hard masks are one-hot per pixel (values in {0,1}, planes summing to 1);
    soft masks carry per-pixel probabilities. Instances are immutable.
    """

    planes: np.ndarray
    _hard: bool = field(init=False, repr=False)

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3:
            raise ValueError(f"planes must be (num_classes, H, W), got shape {planes.shape}")
        if planes.shape[0] < 1 or planes.shape[1] < 1 or planes.shape[2] < 1:
            raise ValueError(f"planes must be non-empty, got shape {planes.shape}")
        if np.isnan(planes).any() or planes.min() < 0.0 or planes.max() > 1.0:
            raise ValueError("mask values must lie in [0,1]")
        planes = planes.copy()
        planes.setflags(write=False)
        object.__setattr__(self, "planes", planes)
        binary = np.logical_or(planes == 0.0, planes == 1.0).all()
        one_hot = binary and np.all(planes.sum(axis=0) == 1.0)
        object.__setattr__(self, "_hard", bool(one_hot))

    @property
    def num_classes(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def is_hard(self) -> bool:
        return self._hard

    @classmethod
    def from_class_ids(cls, ids: np.ndarray, num_classes: int) -> "SegMask":
        """Build a hard mask from an (H, W) integer class-id map."""
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError(f"class-id map must be 2D, got shape {ids.shape}")
        if ids.min() < 0 or ids.max() >= num_classes:
            raise ValueError(
                f"class ids must lie in [0, {num_classes - 1}], got range "
                f"[{ids.min()}, {ids.max()}]"
            )
        planes = np.zeros((num_classes,) + ids.shape, dtype=np.float64)
        for c in range(num_classes):
            planes[c][ids == c] = 1.0
        return cls(planes)

    def class_ids(self) -> np.ndarray:
        """Per-pixel class-id map; requires a hard mask."""
        if not self.is_hard:
            raise MaskNotHardError("class_ids requires a hard mask")
        return self.planes.argmax(axis=0).astype(np.uint8)

    def harden(self) -> "SegMask":
        """Argmax per pixel; ties break toward the lower class_id."""
        if self.is_hard:
            return self
        return SegMask.from_class_ids(self.planes.argmax(axis=0), self.num_classes)

    def classes_present(self) -> tuple:
        """Foreground class ids with at least one assigned pixel (hard mask)."""
        if not self.is_hard:
            raise MaskNotHardError("classes_present requires a hard mask")
        return tuple(
            c for c in range(1, self.num_classes) if self.planes[c].sum() > 0
        )

    def foreground_fractions(self) -> dict:
        """Map foreground class_id -> fraction of pixels it occupies (hard mask)."""
        total = self.height * self.width
        return {
            c: float(self.planes[c].sum()) / total for c in self.classes_present()
        }

    def same_shape_as(self, other: "SegMask") -> bool:
        return self.planes.shape == other.planes.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegMask):
            return NotImplemented
        return self.planes.shape == other.planes.shape and bool(
            np.all(self.planes == other.planes)
        )

    def __hash__(self):
        return hash((self.planes.shape, self.planes.tobytes()))


def encode_mask(mask: SegMask, vocab: ClassVocabulary, fmt: str = "png") -> tuple:
    """Serialize a hard mask to (index-map bytes, vocabulary sidecar JSON).

    The index map is a single-channel 8-bit image, pixel value = class_id,
    in PNG or PGM (both lossless). decode_mask inverts it bit-exactly.
    """
    if not mask.is_hard:
        raise MaskNotHardError("mask must be hard for serialization")
    if mask.num_classes != vocab.num_classes:
        raise ShapeMismatchError(
            f"mask has {mask.num_classes} planes but vocabulary has "
            f"{vocab.num_classes} classes"
        )
    if vocab.num_classes > 256:
        raise ValueError("index-map serialization supports at most 256 classes")
    ids = mask.class_ids()
    if fmt == "png":
        buf = io.BytesIO()
        PILImage.fromarray(ids, mode="L").save(buf, format="PNG")
        data = buf.getvalue()
    elif fmt == "pgm":
        header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
        data = header + ids.tobytes()
    else:
        raise ValueError(f"unknown mask format {fmt!r} (use 'png' or 'pgm')")
    return data, vocab.to_json()


def decode_mask(data: bytes, vocab: ClassVocabulary) -> SegMask:
    """Parse an index-map image (PNG or PGM, detected by magic bytes)."""
    if data[:2] == b"P5":
        ids = _parse_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        img = PILImage.open(io.BytesIO(data))
        if img.mode != "L":
            img = img.convert("L")
        ids = np.asarray(img, dtype=np.uint8)
    else:
        raise ValueError("mask data is neither PNG nor PGM")
    if ids.max(initial=0) >= vocab.num_classes:
        raise ValueError(
            f"index map contains class id {int(ids.max())} outside the "
            f"{vocab.num_classes}-class vocabulary"
        )
    return SegMask.from_class_ids(ids, vocab.num_classes)


_PGM_HEADER = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _parse_pgm(data: bytes) -> np.ndarray:
    m = _PGM_HEADER.match(data)
    if not m:
        raise ValueError("malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise ValueError("only 8-bit PGM supported")
    raster = data[m.end():]
    expected = width * height
    if len(raster) < expected:
        raise ValueError(f"PGM raster truncated: {len(raster)} < {expected} bytes")
    return np.frombuffer(raster[:expected], dtype=np.uint8).reshape(height, width)
