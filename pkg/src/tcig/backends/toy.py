"""Analytic toy backends.

Everything here is smooth, deterministic, and closed-form differentiable, so
the full optimization loop can be verified against finite differences at desk
scale without any pretrained weights:

- ToyGenerator renders k soft radial blobs; the latent packs (cx, cy, rx, ry,
  class selector) per blob, each squashed through a sigmoid.
- ToySegmenter does a per-pixel softmax over negative squared color distances
  to the class prototype colors.
- ToyScorer compares the image's mean soft class histogram against a target
  histogram parsed from a tiny "a <class> and a <class>" prompt grammar.
- ToyRefiner blends the input with a deterministic procedural image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Sequence

import numpy as np

from ..core import Image, SegMask, ClassVocabulary, resize_bilinear
from ..core.vocab import BACKGROUND_ID
from ..errors import PromptError
from ..seeds import hash64


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def parse_prompt(prompt: str, vocab: ClassVocabulary) -> List[int]:
    """Parse 'a <class-name> and a <class-name> ...' into class ids.

    Mentions keep multiplicity; an empty prompt means pure background.
    """
    text = prompt.strip().lower()
    if not text:
        return []
    mentions = []
    for chunk in text.split(" and "):
        words = chunk.split()
        if words and words[0] in ("a", "an", "the"):
            words = words[1:]
        name = " ".join(words)
        if not name or name not in vocab:
            valid = ", ".join(e.name for e in vocab.entries if e.class_id != BACKGROUND_ID)
            raise PromptError(
                f"unknown class {name!r} in prompt; valid class names: {valid}"
            )
        class_id = vocab.id_of(name)
        if class_id == BACKGROUND_ID:
            raise PromptError("the background class cannot be prompted")
        mentions.append(class_id)
    return mentions


def prompt_histogram(prompt: str, vocab: ClassVocabulary,
                     foreground_share: float = 0.5) -> np.ndarray:
    """Target class-presence histogram for a prompt.

    Mentioned classes split a fixed foreground share evenly (by multiplicity);
    the rest is background. Empty prompt -> all background.
    """
    target = np.zeros(vocab.num_classes, dtype=np.float64)
    mentions = parse_prompt(prompt, vocab)
    if not mentions:
        target[BACKGROUND_ID] = 1.0
        return target
    target[BACKGROUND_ID] = 1.0 - foreground_share
    per_mention = foreground_share / len(mentions)
    for c in mentions:
        target[c] += per_mention
    return target


class ToyGenerator:
    """Soft radial blob renderer with an exact hand-derived adjoint.

    Per blob the latent packs pre-sigmoid (cx, cy, rx, ry) in normalized
    image coordinates plus one selector logit per foreground class, so
    latent_dim = blobs * (4 + num_foreground). Blob color is the softmax of
    the selector logits mixed over the foreground prototype colors; a plain
    softmax keeps a live gradient toward every class, so a blob can always
    change class under guidance. The pixel color is the intensity-weighted
    average of blob colors and the background prototype, so outputs stay in
    [0,1] without clamping (clamping would kill gradients).
    """

    exclusive = False

    def __init__(self, vocab: ClassVocabulary, width: int = 24, height: int = 24,
                 blobs: int = 4, blob_gain: float = 4.0):
        if blobs < 1:
            raise ValueError("need at least one blob")
        if vocab.num_classes < 2:
            raise ValueError("toy generator needs at least one foreground class")
        self.vocab = vocab
        self.width = width
        self.height = height
        self.blobs = blobs
        self.blob_gain = float(blob_gain)
        self.n_fg = vocab.num_classes - 1
        self._colors = vocab.colors()
        self._px = (np.arange(width) + 0.5) / width
        self._py = (np.arange(height) + 0.5) / height

    @property
    def latent_dim(self) -> int:
        return self.blobs * (4 + self.n_fg)

    def _check_dim(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ValueError(
                f"latent must have shape ({self.latent_dim},) = {self.blobs} blobs "
                f"x (4 + {self.n_fg}) params, got {z.shape}"
            )
        return z

    def _forward(self, z: np.ndarray) -> dict:
        z = self._check_dim(z)
        raw = z.reshape(self.blobs, 4 + self.n_fg)
        sig = _sigmoid(raw[:, :4])
        cx, cy, rx, ry = (sig[:, i] for i in range(4))

        dx = self._px[None, :] - cx[:, None]                      # (k, W)
        dy = self._py[None, :] - cy[:, None]                      # (k, H)
        qx = (dx / rx[:, None]) ** 2
        qy = (dy / ry[:, None]) ** 2
        intensity = np.exp(-(qy[:, :, None] + qx[:, None, :]))    # (k, H, W)

        logits = raw[:, 4:] - raw[:, 4:].max(axis=1, keepdims=True)
        expl = np.exp(logits)
        sel_weights = expl / expl.sum(axis=1, keepdims=True)      # (k, F)
        blob_color = sel_weights @ self._colors[1:]               # (k, 3)

        gain = self.blob_gain
        total = gain * intensity.sum(axis=0)                      # (H, W)
        numer = self._colors[0][None, None, :] + gain * np.einsum(
            "khw,kc->hwc", intensity, blob_color
        )
        out = numer / (1.0 + total)[:, :, None]
        return dict(
            sig=sig, dx=dx, dy=dy, intensity=intensity,
            sel_weights=sel_weights, blob_color=blob_color,
            total=total, out=out,
        )

    def decode(self, z: np.ndarray) -> Image:
        return Image(self._forward(z)["out"])

    def decode_with_gradient(self, z: np.ndarray, image_grad: np.ndarray) -> np.ndarray:
        f = self._forward(z)
        g = np.asarray(image_grad, dtype=np.float64)
        out, total, intensity = f["out"], f["total"], f["intensity"]
        blob_color, sel_weights = f["blob_color"], f["sel_weights"]
        sig, dx, dy = f["sig"], f["dx"], f["dy"]
        rx, ry = sig[:, 2], sig[:, 3]
        gain = self.blob_gain

        if g.shape != out.shape:
            raise ValueError(f"image gradient shape {g.shape} != {out.shape}")

        denom = 1.0 + total
        d_numer = g / denom[:, :, None]
        d_total = -(g * out).sum(axis=2) / denom

        # numer = bg + gain * sum_b I_b c_b ; total = gain * sum_b I_b
        d_intensity = gain * (
            np.einsum("hwc,kc->khw", d_numer, blob_color) + d_total[None, :, :]
        )
        d_color = gain * np.einsum("hwc,khw->kc", d_numer, intensity)

        # intensity = exp(-((dx/rx)^2 + (dy/ry)^2))
        a = d_intensity * intensity                               # (k, H, W)
        d_cx = (a * (2.0 * dx / rx[:, None] ** 2)[:, None, :]).sum(axis=(1, 2))
        d_cy = (a * (2.0 * dy / ry[:, None] ** 2)[:, :, None]).sum(axis=(1, 2))
        d_rx = (a * (2.0 * dx ** 2 / rx[:, None] ** 3)[:, None, :]).sum(axis=(1, 2))
        d_ry = (a * (2.0 * dy ** 2 / ry[:, None] ** 3)[:, :, None]).sum(axis=(1, 2))

        # blob_color = softmax(selector logits) @ fg_colors
        d_w = d_color @ self._colors[1:].T                        # (k, F)
        inner = (d_w * sel_weights).sum(axis=1, keepdims=True)
        d_logits = sel_weights * (d_w - inner)

        d_sig = np.stack([d_cx, d_cy, d_rx, d_ry], axis=1)        # (k, 4)
        d_raw = np.concatenate([d_sig * sig * (1.0 - sig), d_logits], axis=1)
        return d_raw.reshape(-1)


class ToySegmenter:
    """Per-pixel softmax over negative squared distance to prototype colors."""

    exclusive = False

    def __init__(self, vocab: ClassVocabulary,
                 classes: Optional[Sequence[int]] = None,
                 temperature: float = 0.05):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.vocab = vocab
        self.temperature = float(temperature)
        if classes is None:
            classes = vocab.foreground_ids
        classes = sorted(set(int(c) for c in classes))
        if not classes:
            raise ValueError("segmenter needs at least one foreground class")
        for c in classes:
            if c <= 0 or c >= vocab.num_classes:
                raise ValueError(f"class id {c} outside vocabulary (or background)")
        self._classes = tuple(classes)
        self._active = np.array([BACKGROUND_ID] + list(classes))
        self._active_colors = vocab.colors()[self._active]       # (A, 3)

    @property
    def supported_classes(self) -> FrozenSet[int]:
        return frozenset(self._classes)

    def _softmax(self, image: Image) -> np.ndarray:
        x = image.data                                            # (H, W, 3)
        diff = x[:, :, None, :] - self._active_colors[None, None, :, :]
        logits = -(diff ** 2).sum(axis=3) / self.temperature      # (H, W, A)
        logits -= logits.max(axis=2, keepdims=True)
        expl = np.exp(logits)
        return expl / expl.sum(axis=2, keepdims=True)

    def predict(self, image: Image) -> SegMask:
        probs = self._softmax(image)                              # (H, W, A)
        planes = np.zeros(
            (self.vocab.num_classes, image.height, image.width), dtype=np.float64
        )
        planes[self._active] = np.moveaxis(probs, 2, 0)
        return SegMask(planes)

    def predict_with_gradient(self, image: Image, planes_grad: np.ndarray) -> np.ndarray:
        planes_grad = np.asarray(planes_grad, dtype=np.float64)
        expected = (self.vocab.num_classes, image.height, image.width)
        if planes_grad.shape != expected:
            raise ValueError(f"planes gradient shape {planes_grad.shape} != {expected}")
        probs = self._softmax(image)                              # (H, W, A)
        d_probs = np.moveaxis(planes_grad[self._active], 0, 2)    # (H, W, A)
        inner = (d_probs * probs).sum(axis=2, keepdims=True)
        d_logits = probs * (d_probs - inner)
        x = image.data
        diff = x[:, :, None, :] - self._active_colors[None, None, :, :]
        # logits_a = -|x - c_a|^2 / tau
        return (d_logits[:, :, :, None] * (-2.0 * diff / self.temperature)).sum(axis=2)


class ToyScorer:
    """Squared distance between the image's soft class histogram and the
    prompt's target histogram; differentiable through the internal segmenter."""

    exclusive = False

    def __init__(self, vocab: ClassVocabulary, temperature: float = 0.05,
                 foreground_share: float = 0.5):
        if not 0.0 < foreground_share <= 1.0:
            raise ValueError("foreground_share must be in (0, 1]")
        self.vocab = vocab
        self.foreground_share = float(foreground_share)
        self._segmenter = ToySegmenter(vocab, classes=None, temperature=temperature)

    def _histogram(self, image: Image) -> np.ndarray:
        return self._segmenter.predict(image).planes.mean(axis=(1, 2))

    def score(self, image: Image, prompt: str) -> float:
        target = prompt_histogram(prompt, self.vocab, self.foreground_share)
        diff = self._histogram(image) - target
        return float((diff ** 2).sum())

    def score_gradient(self, image: Image, prompt: str) -> np.ndarray:
        target = prompt_histogram(prompt, self.vocab, self.foreground_share)
        hist = self._histogram(image)
        d_hist = 2.0 * (hist - target)
        n_pixels = image.height * image.width
        planes_grad = np.broadcast_to(
            (d_hist / n_pixels)[:, None, None],
            (self.vocab.num_classes, image.height, image.width),
        )
        return self._segmenter.predict_with_gradient(image, planes_grad)


class ToyRefiner:
    """Linear blend with a deterministic procedural image.

    output = (1 - strength) * input + strength * P(seed, prompt); P is smooth
    seeded noise biased toward the prompt's class colors. The endpoint
    contracts hold exactly: strength 0 returns the input object, strength 1
    never reads it. The step budget is recorded but unused.
    """

    exclusive = False

    def __init__(self, vocab: ClassVocabulary, color_bias: float = 0.6):
        self.vocab = vocab
        self.color_bias = float(color_bias)
        self.last_steps: Optional[int] = None

    def procedural_image(self, seed: int, prompt: str, height: int, width: int) -> Image:
        mentions = parse_prompt(prompt, self.vocab)
        colors = self.vocab.colors()
        bias = colors[mentions].mean(axis=0) if mentions else colors[BACKGROUND_ID]
        rng = np.random.default_rng(hash64("toy-refiner", seed, prompt))
        coarse = rng.uniform(0.0, 1.0, size=(4, 4, 3))
        noise = resize_bilinear(coarse, height, width)
        data = self.color_bias * bias[None, None, :] + (1.0 - self.color_bias) * noise
        return Image(data)

    def refine(self, image: Image, prompt: str, strength: float, seed: int,
               steps: int = 25) -> Image:
        if not 0.0 <= strength <= 1.0:
            raise ValueError(f"strength must be in [0,1], got {strength}")
        self.last_steps = steps
        if strength == 0.0:
            return image
        base = self.procedural_image(seed, prompt, image.height, image.width)
        if strength == 1.0:
            return base
        return Image((1.0 - strength) * image.data + strength * base.data)
