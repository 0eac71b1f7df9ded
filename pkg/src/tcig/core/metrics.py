"""Intersection-over-union between hard masks."""
from __future__ import annotations

from ..errors import MaskNotHardError, ShapeMismatchError
from .mask import SegMask


def iou(pred: SegMask, target: SegMask, class_agnostic: bool = False) -> float:
    """Foreground IoU between two hard masks of the same shape and vocabulary.

    Default convention: per-foreground-class IoU averaged over the classes
    present in either mask. With class_agnostic=True a single ratio is
    returned instead: union counts pixels that are foreground in either mask,
    intersection counts pixels carrying the same foreground class in both.
    Both masks empty -> 1.0; exactly one empty -> 0.0.
    """
    if not pred.is_hard or not target.is_hard:
        raise MaskNotHardError("iou requires hard masks on both sides")
    if pred.planes.shape != target.planes.shape:
        raise ShapeMismatchError(
            f"mask shapes differ: pred {pred.planes.shape} vs "
            f"target {target.planes.shape}"
        )

    pred_ids = pred.class_ids()
    target_ids = target.class_ids()

    if class_agnostic:
        union = int(((pred_ids > 0) | (target_ids > 0)).sum())
        if union == 0:
            return 1.0
        inter = int(((pred_ids == target_ids) & (pred_ids > 0)).sum())
        return inter / union

    per_class = []
    for c in range(1, pred.num_classes):
        in_pred = pred_ids == c
        in_target = target_ids == c
        union = int((in_pred | in_target).sum())
        if union == 0:
            continue
        inter = int((in_pred & in_target).sum())
        per_class.append(inter / union)
    if not per_class:
        return 1.0
    return sum(per_class) / len(per_class)
