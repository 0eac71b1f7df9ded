"""Backend selection from a config document.

Config shape:
    {"generator": {"name": "toy", ...params},
     "scorer": {"name": "toy", ...},
     "segmenters": [{"name": "toy", ...}, ...],
     "refiner": {"name": "toy", ...}}

Adapters for real models register factories under new names; stage logic
only ever sees the BackendBundle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

from ..core import ClassVocabulary, default_vocabulary
from .contracts import Generator, Refiner, Scorer, Segmenter
from .toy import ToyGenerator, ToyRefiner, ToyScorer, ToySegmenter

_FACTORIES: Dict[Tuple[str, str], Callable] = {}


def register_backend(kind: str, name: str, factory: Callable) -> None:
    """Register a factory(vocab, **params) for a backend kind/name pair."""
    if kind not in ("generator", "scorer", "segmenter", "refiner"):
        raise ValueError(f"unknown backend kind {kind!r}")
    _FACTORIES[(kind, name)] = factory


register_backend("generator", "toy", ToyGenerator)
register_backend("scorer", "toy", ToyScorer)
register_backend("segmenter", "toy", ToySegmenter)
register_backend("refiner", "toy", ToyRefiner)


@dataclass(frozen=True)
class BackendBundle:
    """The four model roles a generation job runs against."""

    generator: Generator
    scorer: Scorer
    segmenters: Tuple[Segmenter, ...]
    refiner: Refiner
    vocab: ClassVocabulary

    def has_exclusive(self) -> bool:
        backends = (self.generator, self.scorer, self.refiner) + self.segmenters
        return any(getattr(b, "exclusive", False) for b in backends)


def _build(kind: str, block: dict, vocab: ClassVocabulary):
    params = dict(block)
    name = params.pop("name", "toy")
    factory = _FACTORIES.get((kind, name))
    if factory is None:
        known = sorted(n for k, n in _FACTORIES if k == kind)
        raise ValueError(f"unknown {kind} backend {name!r}; registered: {known}")
    return factory(vocab, **params)


def build_backends(config: dict, vocab: ClassVocabulary | None = None) -> BackendBundle:
    vocab = vocab or default_vocabulary()
    segmenter_blocks = config.get("segmenters") or [{"name": "toy"}]
    return BackendBundle(
        generator=_build("generator", config.get("generator", {}), vocab),
        scorer=_build("scorer", config.get("scorer", {}), vocab),
        segmenters=tuple(_build("segmenter", b, vocab) for b in segmenter_blocks),
        refiner=_build("refiner", config.get("refiner", {}), vocab),
        vocab=vocab,
    )


def default_toy_backends(vocab: ClassVocabulary | None = None,
                         width: int = 24, height: int = 24,
                         blobs: int = 4) -> BackendBundle:
    """One full-vocabulary toy guide; the everyday desk-scale setup."""
    return build_backends(
        {"generator": {"name": "toy", "width": width, "height": height, "blobs": blobs}},
        vocab=vocab,
    )
