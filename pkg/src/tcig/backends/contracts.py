"""Model contracts: generator, scorer, segmenter, refiner.

Stage logic is written against these four protocols only; the toy
implementations close the loop analytically, and adapters for real
pretrained models plug in behind the same methods. Gradient methods are
vector-Jacobian products: they take the upstream gradient of a scalar loss
with respect to this model's output and return the gradient with respect
to its input.
"""
from __future__ import annotations

from typing import FrozenSet, Protocol, runtime_checkable

import numpy as np

from ..core import Image, SegMask


@runtime_checkable
class Generator(Protocol):
    latent_dim: int
    exclusive: bool

    def decode(self, z: np.ndarray) -> Image:
        """Deterministic latent -> image mapping."""
        ...

    def decode_with_gradient(self, z: np.ndarray, image_grad: np.ndarray) -> np.ndarray:
        """Adjoint of decode: (H, W, 3) upstream gradient -> latent gradient."""
        ...


@runtime_checkable
class Scorer(Protocol):
    exclusive: bool

    def score(self, image: Image, prompt: str) -> float:
        """Nonnegative prompt-mismatch loss; lower is a better match."""
        ...

    def score_gradient(self, image: Image, prompt: str) -> np.ndarray:
        """Gradient of score with respect to the image, shape (H, W, 3)."""
        ...


@runtime_checkable
class Segmenter(Protocol):
    exclusive: bool

    @property
    def supported_classes(self) -> FrozenSet[int]:
        """Foreground class ids this model can predict."""
        ...

    def predict(self, image: Image) -> SegMask:
        """Soft mask; planes cover supported classes plus background,
        unsupported planes are exactly zero, per-pixel values on the simplex."""
        ...

    def predict_with_gradient(self, image: Image, planes_grad: np.ndarray) -> np.ndarray:
        """Adjoint of predict: (C, H, W) upstream gradient -> (H, W, 3)."""
        ...


@runtime_checkable
class Refiner(Protocol):
    exclusive: bool

    def refine(self, image: Image, prompt: str, strength: float, seed: int,
               steps: int = 25) -> Image:
        """Deterministic img2img pass. strength 0 returns the input unchanged;
        strength 1 ignores the input entirely. steps is a budget hint."""
        ...
