"""Recompute the guidance-efficacy fixture numbers.

Runs the guided (alpha_seg = 5) and unguided (alpha_seg = 0) arms over the
same seeds on the standard single-square task and prints the statistics the
acceptance suite freezes. Run after touching the toy generator, segmenter,
scorer, or optimizer defaults, and update tests/test_acceptance.py if the
frozen threshold no longer has comfortable margin.
"""
import argparse
import time

import numpy as np

from tcig.backends.registry import default_toy_backends
from tcig.backends.toy import ToySegmenter
from tcig.core import LossWeights, SegMask, default_vocabulary, iou
from tcig.stage1 import OptimizerConfig, optimize


def square_target(vocab, size=24, class_id=1, lo=6, hi=18) -> SegMask:
    ids = np.zeros((size, size), dtype=np.uint8)
    ids[lo:hi, lo:hi] = class_id
    return SegMask.from_class_ids(ids, vocab.num_classes)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--alpha-seg", type=float, default=5.0)
    args = parser.parse_args()

    vocab = default_vocabulary()
    backends = default_toy_backends(vocab)
    target = square_target(vocab)
    seg_eval = ToySegmenter(vocab)

    t0 = time.time()
    arms = {}
    for label, alpha in (("guided", args.alpha_seg), ("unguided", 0.0)):
        vals = []
        for seed in range(args.seeds):
            cfg = OptimizerConfig(weights=LossWeights(1.0, (alpha,)))
            res = optimize("a cat", target, backends, cfg, seed=seed)
            vals.append(iou(seg_eval.predict(res.image).harden(), target))
        arms[label] = vals
        print(f"{label:9s} mean={np.mean(vals):.4f} min={min(vals):.4f} "
              f"max={max(vals):.4f}")
    margin = np.mean(arms["guided"]) - np.mean(arms["unguided"])
    print(f"separation={margin:.4f}  elapsed={time.time() - t0:.1f}s")
    print("frozen acceptance threshold: guided mean > 0.8 and > unguided mean")


if __name__ == "__main__":
    main()
