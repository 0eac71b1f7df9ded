"""Weights of the composite optimization loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple


@dataclass(frozen=True)
class LossWeights:
    """Scorer weight plus one segmentation-guide weight per registered guide."""

    alpha_clip: float = 1.0
    alpha_seg: Tuple[float, ...] = (5.0,)

    def __post_init__(self):
        object.__setattr__(self, "alpha_seg", tuple(float(a) for a in self.alpha_seg))
        if self.alpha_clip < 0:
            raise ValueError(f"alpha_clip must be >= 0, got {self.alpha_clip}")
        for i, a in enumerate(self.alpha_seg):
            if a < 0:
                raise ValueError(f"alpha_seg[{i}] must be >= 0, got {a}")

    @property
    def num_guides(self) -> int:
        return len(self.alpha_seg)

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(
            self.alpha_clip * factor, tuple(a * factor for a in self.alpha_seg)
        )
