"""End-to-end demo: build a two-class target, run a 2x2 fan-out job, and
write every candidate image plus the loss traces to a directory.
"""
import argparse
import json
import os

import numpy as np

from tcig.backends.registry import default_toy_backends
from tcig.backends.toy import ToySegmenter
from tcig.core import LossWeights, SegMask, default_vocabulary, iou
from tcig.pipeline import GenerationJob, run_job
from tcig.stage1 import OptimizerConfig, trace_to_dicts
from tcig.stage2 import RefineConfig


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="demo_out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--strength", type=float, default=0.3)
    args = parser.parse_args()

    vocab = default_vocabulary()
    backends = default_toy_backends(vocab)
    ids = np.zeros((24, 24), dtype=np.uint8)
    ids[4:12, 3:11] = vocab.id_of("cat")
    ids[12:20, 13:21] = vocab.id_of("car")
    target = SegMask.from_class_ids(ids, vocab.num_classes)

    job = GenerationJob(
        id="demo",
        prompt="a cat and a car",
        target=target,
        optimizer_config=OptimizerConfig(weights=LossWeights(1.0, (5.0,))),
        refine_config=RefineConfig(strength=args.strength),
        n_stage1=2,
        n_stage2_per_stage1=2,
        seed=args.seed,
    )
    run_job(job, backends)
    print(f"job finished: {job.status.value}")

    os.makedirs(args.out_dir, exist_ok=True)
    seg_eval = ToySegmenter(vocab)
    for res in job.stage1_results:
        path = os.path.join(args.out_dir, f"{res.id}.png")
        with open(path, "wb") as fh:
            fh.write(res.image.to_png_bytes())
        score = iou(seg_eval.predict(res.image).harden(), target)
        print(f"  {res.id}: loss={res.final_loss:.4f} iou={score:.3f} -> {path}")
    for res in job.stage2_results:
        path = os.path.join(args.out_dir, f"{res.id}.png")
        with open(path, "wb") as fh:
            fh.write(res.image.to_png_bytes())
        score = iou(seg_eval.predict(res.image).harden(), target)
        print(f"  {res.id} (from {res.source_id}): iou={score:.3f} -> {path}")
    traces = [
        {"run": res.id, "trace": trace_to_dicts(res.loss_trace)}
        for res in job.stage1_results
    ]
    with open(os.path.join(args.out_dir, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(traces, fh, indent=2)
    print(f"traces -> {os.path.join(args.out_dir, 'trace.json')}")


if __name__ == "__main__":
    main()
