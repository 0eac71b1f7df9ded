"""Controlled-generation stage: gradient optimization of the generator latent
under a weighted sum of the scorer loss and per-guide segmentation MSE losses.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .backends.contracts import Segmenter
from .backends.registry import BackendBundle
from .core import Image, LossWeights, SegMask
from .core.vocab import BACKGROUND_ID
from .errors import (
    MaskNotHardError,
    OptimizationError,
    OrphanClassError,
    ShapeMismatchError,
)


@dataclass(frozen=True, eq=False)
class LatentState:
    """The optimizable vector plus its seed and step counter."""

    z: np.ndarray
    seed: int
    step: int = 0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1:
            raise ValueError(f"latent must be a vector, got shape {z.shape}")
        if not np.isfinite(z).all():
            raise ValueError("latent contains NaN/Inf")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.step < 0:
            raise ValueError("step must be nonnegative")


@dataclass(frozen=True)
class GuideRegistration:
    """A segmentation guide plus its index into LossWeights.alpha_seg."""

    segmenter: Segmenter
    weight_index: int

    def __post_init__(self):
        if self.weight_index < 0:
            raise ValueError("weight_index must be nonnegative")
        if not self.segmenter.supported_classes:
            raise ValueError("guide supports no classes")


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient descent with momentum and plateau stopping.

    With normalize=True (the default) the velocity is rescaled to unit norm
    before stepping, so progress does not stall on the flat plateaus the
    soft renderers produce far from a solution.
    """

    max_steps: int = 300
    step_size: float = 0.1
    plateau_patience: int = 60
    plateau_tolerance: float = 1e-5
    momentum: float = 0.9
    normalize: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be positive")
        if self.plateau_tolerance < 0:
            raise ValueError("plateau_tolerance must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class TraceRow:
    """Loss components at one optimization step; l_segs has one entry per
    registered guide (zero for guides that were not invoked)."""

    step: int
    l_clip: float
    l_segs: Tuple[float, ...]
    l_total: float


@dataclass(eq=False)
class StageOneResult:
    image: Image
    final_loss: float
    loss_trace: Tuple[TraceRow, ...]
    latent: LatentState
    id: Optional[str] = None


def segmentation_loss(pred: SegMask, target: SegMask,
                      class_ids: Optional[Sequence[int]] = None) -> float:
    """Mean squared error between predicted and target planes.

    When class_ids is given, only those planes plus the background plane
    enter the mean, so a guide is never penalized for classes it cannot
    predict.
    """
    if pred.planes.shape != target.planes.shape:
        raise ShapeMismatchError(
            f"mask shapes differ: pred {pred.planes.shape} vs "
            f"target {target.planes.shape}"
        )
    if class_ids is None:
        diff = pred.planes - target.planes
    else:
        sel = sorted({BACKGROUND_ID} | set(int(c) for c in class_ids))
        diff = pred.planes[sel] - target.planes[sel]
    return float(np.mean(diff * diff))


def route_guides(target: SegMask,
                 registered: Sequence[GuideRegistration]) -> List[GuideRegistration]:
    """Select the guides whose supported classes appear in the target.

    Order follows registration order. A target class no guide supports is a
    configuration error, reported for all orphans at once.
    """
    if not target.is_hard:
        raise MaskNotHardError("routing requires a hard target mask")
    present = set(target.classes_present())
    covered = set()
    for reg in registered:
        covered |= set(reg.segmenter.supported_classes)
    orphans = present - covered
    if orphans:
        raise OrphanClassError(orphans)
    return [
        reg for reg in registered
        if set(reg.segmenter.supported_classes) & present
    ]


def total_loss(l_clip: float, l_segs: Sequence[float], weights: LossWeights) -> float:
    """alpha_clip * l_clip + sum_i alpha_seg[i] * l_segs[i], in that order."""
    if len(l_segs) != len(weights.alpha_seg):
        raise ValueError(
            f"{len(l_segs)} segmentation losses for {len(weights.alpha_seg)} weights"
        )
    total = weights.alpha_clip * l_clip
    for alpha, l_seg in zip(weights.alpha_seg, l_segs):
        total += alpha * l_seg
    return total


def optimize(prompt: str, target: SegMask, backends: BackendBundle,
             config: OptimizerConfig, seed: int,
             on_step: Optional[Callable[[TraceRow], None]] = None) -> StageOneResult:
    """Run the latent steering loop and return the best iterate by total loss.

    Per step: decode the latent, score against the prompt, segment with each
    routed guide, recombine the weighted total loss, backpropagate to the
    latent, and take a gradient step. Stops at max_steps or when the best
    total loss has not improved by plateau_tolerance for plateau_patience
    steps. Guides whose classes are absent from the target, or whose weight
    is exactly zero, are never invoked and contribute exact zeros.
    """
    generator, scorer = backends.generator, backends.scorer
    weights = config.weights
    n_guides = len(backends.segmenters)
    if weights.num_guides != n_guides:
        raise ValueError(
            f"{weights.num_guides} guide weights for {n_guides} registered guides"
        )
    if not target.is_hard:
        raise MaskNotHardError("target mask must be hard")
    if target.num_classes != backends.vocab.num_classes:
        raise ShapeMismatchError(
            f"target has {target.num_classes} planes, vocabulary has "
            f"{backends.vocab.num_classes} classes"
        )

    registered = [
        GuideRegistration(seg, i) for i, seg in enumerate(backends.segmenters)
    ]
    routed = route_guides(target, registered)
    active = [reg for reg in routed if weights.alpha_seg[reg.weight_index] > 0.0]
    restrictions = {
        reg.weight_index: sorted({BACKGROUND_ID} | set(reg.segmenter.supported_classes))
        for reg in active
    }

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(generator.latent_dim)
    velocity = np.zeros_like(z)

    trace: List[TraceRow] = []
    best_loss = math.inf
    best_z = z
    best_image: Optional[Image] = None
    best_step = 0
    stale = 0

    for step in range(config.max_steps):
        image = generator.decode(z)
        l_clip = scorer.score(image, prompt)

        l_segs = [0.0] * n_guides
        image_grad = weights.alpha_clip * scorer.score_gradient(image, prompt)
        for reg in active:
            idx = reg.weight_index
            sel = restrictions[idx]
            pred = reg.segmenter.predict(image)
            diff = pred.planes[sel] - target.planes[sel]
            l_segs[idx] = float(np.mean(diff * diff))
            planes_grad = np.zeros_like(pred.planes)
            planes_grad[sel] = (2.0 / diff.size) * diff
            image_grad += weights.alpha_seg[idx] * reg.segmenter.predict_with_gradient(
                image, planes_grad
            )

        l_total = total_loss(l_clip, l_segs, weights)
        components = {"l_clip": l_clip, "l_segs": tuple(l_segs), "l_total": l_total}
        if not math.isfinite(l_total):
            raise OptimizationError(step, components)

        row = TraceRow(step, l_clip, tuple(l_segs), l_total)
        trace.append(row)
        if on_step is not None:
            on_step(row)

        if l_total < best_loss - config.plateau_tolerance:
            stale = 0
        else:
            stale += 1
        if l_total < best_loss:
            best_loss = l_total
            best_z = z
            best_image = image
            best_step = step
        if stale >= config.plateau_patience:
            break

        z_grad = generator.decode_with_gradient(z, image_grad)
        if not np.isfinite(z_grad).all():
            raise OptimizationError(step, components, f"non-finite gradient at step {step}")
        velocity = config.momentum * velocity + z_grad
        update = velocity
        if config.normalize:
            update = velocity / (np.linalg.norm(velocity) + 1e-12)
        z = z - config.step_size * update

    assert best_image is not None
    return StageOneResult(
        image=best_image,
        final_loss=best_loss,
        loss_trace=tuple(trace),
        latent=LatentState(best_z, seed=seed, step=best_step),
    )


def trace_to_dicts(trace: Sequence[TraceRow]) -> List[dict]:
    return [
        {"step": r.step, "l_clip": r.l_clip, "l_seg": list(r.l_segs), "l_total": r.l_total}
        for r in trace
    ]


def trace_to_json(trace: Sequence[TraceRow]) -> str:
    return json.dumps(trace_to_dicts(trace), indent=2)


def trace_to_csv(trace: Sequence[TraceRow]) -> str:
    n_guides = len(trace[0].l_segs) if trace else 0
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "l_clip"] + [f"l_seg_{i}" for i in range(n_guides)] + ["l_total"])
    for r in trace:
        writer.writerow([r.step, repr(r.l_clip)] + [repr(v) for v in r.l_segs] + [repr(r.l_total)])
    return buf.getvalue()
