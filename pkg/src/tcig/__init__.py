"""Two-stage controllable image generation: latent steering under a composite
text/segmentation loss, followed by img2img refinement."""

from .core import (
    ClassEntry,
    ClassVocabulary,
    Image,
    LossWeights,
    SegMask,
    decode_mask,
    default_vocabulary,
    encode_mask,
    iou,
)
from .pipeline import GenerationJob, JobStatus, run_job, select_candidates
from .stage1 import OptimizerConfig, StageOneResult, optimize
from .stage2 import RefineConfig, StageTwoResult, refine

__version__ = "0.1.0"

__all__ = [
    "ClassEntry",
    "ClassVocabulary",
    "Image",
    "LossWeights",
    "SegMask",
    "decode_mask",
    "default_vocabulary",
    "encode_mask",
    "iou",
    "GenerationJob",
    "JobStatus",
    "run_job",
    "select_candidates",
    "OptimizerConfig",
    "StageOneResult",
    "optimize",
    "RefineConfig",
    "StageTwoResult",
    "refine",
    "__version__",
]
