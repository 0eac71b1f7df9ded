from .contracts import Generator, Refiner, Scorer, Segmenter
from .registry import BackendBundle, build_backends, default_toy_backends, register_backend
from .toy import ToyGenerator, ToyRefiner, ToyScorer, ToySegmenter, parse_prompt, prompt_histogram

__all__ = [
    "BackendBundle",
    "Generator",
    "Refiner",
    "Scorer",
    "Segmenter",
    "ToyGenerator",
    "ToyRefiner",
    "ToyScorer",
    "ToySegmenter",
    "build_backends",
    "default_toy_backends",
    "parse_prompt",
    "prompt_histogram",
    "register_backend",
]
