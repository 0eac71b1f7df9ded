"""RGB image value type plus PNG serialization."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable RGB image, data shape (height, width, 3), values in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"image data must be (H, W, 3), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        data = np.clip(data, 0.0, 1.0)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.all(self.data == other.data)
        )

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def to_png_bytes(self) -> bytes:
        """8-bit PNG encoding; quantization is round(v * 255)."""
        quant = np.rint(self.data * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        PILImage.fromarray(quant, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "Image":
        img = PILImage.open(io.BytesIO(data)).convert("RGB")
        return cls(np.asarray(img, dtype=np.float64) / 255.0)

    @classmethod
    def constant(cls, height: int, width: int, color) -> "Image":
        data = np.empty((height, width, 3), dtype=np.float64)
        data[:] = np.asarray(color, dtype=np.float64)
        return cls(data)


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) array using pixel-center alignment.

    Sample coordinates outside the source grid clamp to the border; constant
    inputs stay exactly constant (lerp form, no weight renormalization).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    in_h, in_w = data.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return data

    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    ty = (ys - y0)[:, None, None]
    tx = (xs - x0)[None, :, None]

    v00 = data[np.ix_(y0, x0)]
    v01 = data[np.ix_(y0, x1)]
    v10 = data[np.ix_(y1, x0)]
    v11 = data[np.ix_(y1, x1)]
    top = v00 + tx * (v01 - v00)
    bottom = v10 + tx * (v11 - v10)
    return top + ty * (bottom - top)
