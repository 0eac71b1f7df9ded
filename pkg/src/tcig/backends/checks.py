"""Reusable contract checks.

The toy backends must pass all of these including the finite-difference
gradient comparisons; adapters wrapping real models run the same suite with
check_gradients=False, which swaps the numeric comparison for a shape check.
"""
from __future__ import annotations

import numpy as np

from ..core import Image
from .contracts import Generator, Refiner, Scorer, Segmenter

FD_STEP = 1e-5
FD_REL_TOL = 1e-4


def finite_difference_gradient(fn, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        f_plus = fn(x)
        xf[i] = orig - step
        f_minus = fn(x)
        xf[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_generator(gen: Generator, rng: np.random.Generator,
                    points: int = 3, check_gradients: bool = True) -> None:
    for _ in range(points):
        z = rng.standard_normal(gen.latent_dim)
        img = gen.decode(z)
        img2 = gen.decode(z)
        assert img == img2, "decode must be deterministic"
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0

        upstream = rng.standard_normal(img.data.shape)
        analytic = gen.decode_with_gradient(z, upstream)
        assert analytic.shape == (gen.latent_dim,), "latent gradient shape"
        if check_gradients:
            numeric = finite_difference_gradient(
                lambda v: float((gen.decode(v).data * upstream).sum()), z
            )
            err = relative_gradient_error(analytic, numeric)
            assert err < FD_REL_TOL, f"generator gradient rel err {err:.2e}"


def check_segmenter(seg: Segmenter, rng: np.random.Generator, num_classes: int,
                    size: int = 8, points: int = 3,
                    check_gradients: bool = True) -> None:
    for _ in range(points):
        img = Image(rng.uniform(0.0, 1.0, size=(size, size, 3)))
        mask = seg.predict(img)
        assert mask.num_classes == num_classes
        sums = mask.planes.sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-9), "per-pixel simplex"
        inactive = set(range(1, num_classes)) - set(seg.supported_classes)
        for c in inactive:
            assert np.all(mask.planes[c] == 0.0), f"unsupported plane {c} must be zero"

        upstream = rng.standard_normal(mask.planes.shape)
        analytic = seg.predict_with_gradient(img, upstream)
        assert analytic.shape == img.data.shape, "image gradient shape"
        if check_gradients:
            numeric = finite_difference_gradient(
                lambda v: float((seg.predict(Image(v)).planes * upstream).sum()),
                img.data.copy(),
            ).reshape(img.data.shape)
            err = relative_gradient_error(analytic, numeric)
            assert err < FD_REL_TOL, f"segmenter gradient rel err {err:.2e}"


def check_scorer(scorer: Scorer, rng: np.random.Generator, prompt: str,
                 size: int = 8, points: int = 3,
                 check_gradients: bool = True) -> None:
    for _ in range(points):
        img = Image(rng.uniform(0.0, 1.0, size=(size, size, 3)))
        value = scorer.score(img, prompt)
        assert value >= 0.0, "score must be nonnegative"

        analytic = scorer.score_gradient(img, prompt)
        assert analytic.shape == img.data.shape, "image gradient shape"
        if check_gradients:
            numeric = finite_difference_gradient(
                lambda v: scorer.score(Image(v), prompt), img.data.copy()
            ).reshape(img.data.shape)
            err = relative_gradient_error(analytic, numeric)
            assert err < FD_REL_TOL, f"scorer gradient rel err {err:.2e}"


def check_refiner(refiner: Refiner, rng: np.random.Generator, prompt: str,
                  size: int = 8, seed: int = 7) -> None:
    img_a = Image(rng.uniform(0.0, 1.0, size=(size, size, 3)))
    img_b = Image(rng.uniform(0.0, 1.0, size=(size, size, 3)))

    assert refiner.refine(img_a, prompt, 0.0, seed) == img_a, "strength 0 identity"
    full_a = refiner.refine(img_a, prompt, 1.0, seed)
    full_b = refiner.refine(img_b, prompt, 1.0, seed)
    assert full_a == full_b, "strength 1 must not depend on the input"
    once = refiner.refine(img_a, prompt, 0.4, seed)
    twice = refiner.refine(img_a, prompt, 0.4, seed)
    assert once == twice, "refine must be deterministic"
