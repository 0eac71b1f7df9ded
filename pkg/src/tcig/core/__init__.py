from .image import Image, resize_bilinear
from .mask import SegMask, decode_mask, encode_mask
from .metrics import iou
from .vocab import BACKGROUND_ID, ClassEntry, ClassVocabulary, default_vocabulary
from .weights import LossWeights

__all__ = [
    "BACKGROUND_ID",
    "ClassEntry",
    "ClassVocabulary",
    "Image",
    "LossWeights",
    "SegMask",
    "decode_mask",
    "default_vocabulary",
    "encode_mask",
    "iou",
    "resize_bilinear",
]
