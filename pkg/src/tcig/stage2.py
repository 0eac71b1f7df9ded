"""Refinement stage: img2img pass over a Stage-1 image.

The strength knob trades mask fidelity against flexibility: 0 keeps the
Stage-1 image exactly, 1 ignores it. The default sits mid-range because
Stage-1 outputs tend to overfit hand-drawn masks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .backends.contracts import Refiner
from .core import Image, resize_bilinear
from .errors import RefinerError


@dataclass(frozen=True)
class RefineConfig:
    strength: float = 0.55
    steps: int = 25
    seed: int = 0
    output_width: Optional[int] = None
    output_height: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must be in [0,1], got {self.strength}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if (self.output_width is None) != (self.output_height is None):
            raise ValueError("set both output_width and output_height or neither")
        if self.output_width is not None and (self.output_width < 1 or self.output_height < 1):
            raise ValueError("output size must be positive")


@dataclass(eq=False)
class StageTwoResult:
    image: Image
    source_id: str
    config: RefineConfig
    id: Optional[str] = None


def resize_bridge(img: Image, target_w: int, target_h: int) -> Image:
    """Bilinear resample to the refiner resolution; identity if sizes match."""
    if (img.width, img.height) == (target_w, target_h):
        return img
    return Image(resize_bilinear(img.data, target_h, target_w))


def refine(stage1_image: Image, prompt: str, config: RefineConfig,
           refiner: Refiner, source_id: str = "") -> StageTwoResult:
    """Delegate to the refiner contract and record provenance.

    Deterministic given (image, prompt, strength, seed); refiner failures are
    surfaced with the refiner's own diagnostic.
    """
    image = stage1_image
    if config.output_width is not None:
        image = resize_bridge(image, config.output_width, config.output_height)
    try:
        refined = refiner.refine(
            image, prompt, config.strength, config.seed, steps=config.steps
        )
    except Exception as exc:
        raise RefinerError(f"refiner failed: {exc}") from exc
    return StageTwoResult(image=refined, source_id=source_id, config=config)
