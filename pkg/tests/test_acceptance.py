"""End-to-end acceptance suite.

Each test is one release criterion, marked so the terminal summary prints a
pass/fail line per criterion. Tolerances and budgets are part of the
criterion, not incidental test choices.
"""
import base64
import hashlib
import itertools
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from tcig.backends.checks import finite_difference_gradient, relative_gradient_error
from tcig.backends.toy import ToyRefiner, ToySegmenter
from tcig.cli import main as cli_main
from tcig.core import Image, LossWeights, SegMask, encode_mask, iou
from tcig.errors import OrphanClassError
from tcig.evalharness import filter_records, synthetic_records
from tcig.pipeline import GenerationJob, JobStatus, job_from_spec, run_job
from tcig.service import JobService, JobStore, create_app
from tcig.stage1 import (
    GuideRegistration,
    OptimizerConfig,
    optimize,
    route_guides,
    segmentation_loss,
    total_loss,
)
from tcig.stage2 import RefineConfig


@pytest.mark.acceptance("gradient fidelity vs finite differences")
def test_gradient_fidelity(small_backends, small_target):
    """The analytic latent gradient of the full composite loss matches central
    finite differences to < 1e-4 relative error at 10 random latents, on a
    16x16 toy generator with latent_dim <= 20, in under 30 seconds."""
    start = time.monotonic()
    gen = small_backends.generator
    scorer = small_backends.scorer
    guide = small_backends.segmenters[0]
    weights = LossWeights(1.0, (5.0,))
    prompt = "a cat"
    assert gen.latent_dim <= 20

    def composite_loss(z):
        img = gen.decode(z)
        l_clip = scorer.score(img, prompt)
        l_seg = segmentation_loss(guide.predict(img), small_target)
        return total_loss(l_clip, [l_seg], weights)

    def composite_gradient(z):
        img = gen.decode(z)
        image_grad = weights.alpha_clip * scorer.score_gradient(img, prompt)
        pred = guide.predict(img)
        diff = pred.planes - small_target.planes
        planes_grad = (2.0 / diff.size) * diff
        image_grad += weights.alpha_seg[0] * guide.predict_with_gradient(
            img, planes_grad
        )
        return gen.decode_with_gradient(z, image_grad)

    rng = np.random.default_rng(2024)
    for _ in range(10):
        z = rng.standard_normal(gen.latent_dim)
        analytic = composite_gradient(z)
        numeric = finite_difference_gradient(composite_loss, z)
        err = relative_gradient_error(analytic, numeric)
        assert err < 1e-4, f"relative gradient error {err:.3e}"

    assert time.monotonic() - start < 30.0


@pytest.mark.acceptance("guidance efficacy over 20 seeds")
def test_guidance_efficacy(backends, square_target, eval_segmenter):
    """Mask guidance must work: with the segmentation term on, the mean IoU
    over 20 seeds strictly beats the scorer-only baseline and exceeds the
    frozen 0.8 threshold, within a 2-minute budget."""
    start = time.monotonic()
    prompt = "a cat"
    seeds = range(20)

    def mean_iou(weights):
        config = OptimizerConfig(weights=weights)
        scores = []
        for seed in seeds:
            result = optimize(prompt, square_target, backends, config, seed=seed)
            pred = eval_segmenter.predict(result.image).harden()
            scores.append(iou(pred, square_target))
        return sum(scores) / len(scores)

    guided = mean_iou(LossWeights(1.0, (5.0,)))
    unguided = mean_iou(LossWeights(1.0, (0.0,)))

    assert guided > unguided, f"guided {guided:.4f} <= unguided {unguided:.4f}"
    assert guided > 0.8, f"guided mean IoU {guided:.4f} <= 0.8"
    assert time.monotonic() - start < 120.0


@pytest.mark.acceptance("loss equations exact")
def test_loss_equations_exact(vocab):
    """segmentation and total losses match independent recomputations to
    1e-12 on 100 random inputs; zero guide weights reduce the total exactly
    to the scorer term."""
    rng = np.random.default_rng(31337)
    for _ in range(100):
        h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        c = int(rng.integers(2, 5))
        pred = SegMask(rng.uniform(0.0, 1.0, size=(c, h, w)))
        target = SegMask.from_class_ids(rng.integers(0, c, size=(h, w)), c)

        # independent recomputation: explicit loops, no numpy reductions
        acc, count = 0.0, 0
        for ci in range(c):
            for yi in range(h):
                for xi in range(w):
                    d = float(pred.planes[ci, yi, xi]) - float(target.planes[ci, yi, xi])
                    acc += d * d
                    count += 1
        assert abs(segmentation_loss(pred, target) - acc / count) < 1e-12

        n = int(rng.integers(0, 4))
        alpha_clip = float(rng.uniform(0.0, 3.0))
        alphas = tuple(float(a) for a in rng.uniform(0.0, 3.0, size=n))
        l_clip = float(rng.uniform(0.0, 2.0))
        l_segs = [float(v) for v in rng.uniform(0.0, 2.0, size=n)]
        expected = alpha_clip * l_clip
        for a, l in zip(alphas, l_segs):
            expected += a * l
        got = total_loss(l_clip, l_segs, LossWeights(alpha_clip, alphas))
        assert abs(got - expected) < 1e-12

        zeroed = total_loss(l_clip, l_segs, LossWeights(alpha_clip, (0.0,) * n))
        assert zeroed == alpha_clip * l_clip  # exact reduction, no tolerance


@pytest.mark.acceptance("guide routing exhaustive")
def test_routing_exhaustive(vocab):
    """For every assignment of class subsets to 2 guides and every target
    class subset: the invoked guides are exactly those whose classes
    intersect the target, and uncovered target classes always error."""
    classes = (1, 2, 3, 4)
    nonempty_subsets = [
        frozenset(s)
        for r in range(1, 5)
        for s in itertools.combinations(classes, r)
    ]
    segmenters = {s: ToySegmenter(vocab, classes=sorted(s)) for s in nonempty_subsets}

    def target_for(subset):
        ids = np.zeros((4, 4), dtype=np.uint8)
        for k, cid in enumerate(sorted(subset)):
            ids[k, 0] = cid
        return SegMask.from_class_ids(ids, vocab.num_classes)

    all_targets = [
        frozenset(s)
        for r in range(0, 5)
        for s in itertools.combinations(classes, r)
    ]

    checked = 0
    for s1, s2 in itertools.product(nonempty_subsets, repeat=2):
        guides = [
            GuideRegistration(segmenters[s1], 0),
            GuideRegistration(segmenters[s2], 1),
        ]
        covered = s1 | s2
        for t in all_targets:
            target = target_for(t)
            orphans = t - covered
            if orphans:
                with pytest.raises(OrphanClassError) as exc:
                    route_guides(target, guides)
                assert exc.value.class_ids == tuple(sorted(orphans))
            else:
                routed = route_guides(target, guides)
                expected = [i for i, s in enumerate((s1, s2)) if s & t]
                assert [g.weight_index for g in routed] == expected
            checked += 1
    assert checked == 15 * 15 * 16


@pytest.mark.acceptance("iou matches brute-force oracle")
def test_iou_oracle():
    """The IoU implementation agrees exactly with naive per-pixel counting on
    100 random mask pairs, in both per-class and class-agnostic modes."""

    def oracle(pred_ids, target_ids, num_classes, class_agnostic):
        if class_agnostic:
            inter = union = 0
            for p, t in zip(pred_ids.flat, target_ids.flat):
                if p > 0 or t > 0:
                    union += 1
                    if p == t and p > 0:
                        inter += 1
            return 1.0 if union == 0 else inter / union
        ratios = []
        for c in range(1, num_classes):
            inter = union = 0
            for p, t in zip(pred_ids.flat, target_ids.flat):
                if p == c or t == c:
                    union += 1
                    if p == c and t == c:
                        inter += 1
            if union > 0:
                ratios.append(inter / union)
        return 1.0 if not ratios else sum(ratios) / len(ratios)

    rng = np.random.default_rng(555)
    for trial in range(100):
        num_classes = int(rng.integers(2, 6))
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        # bias some trials toward sparse masks so empty unions occur
        high = num_classes if trial % 3 else 2
        pred_ids = rng.integers(0, high, size=(h, w))
        target_ids = rng.integers(0, high, size=(h, w))
        pred = SegMask.from_class_ids(pred_ids, num_classes)
        target = SegMask.from_class_ids(target_ids, num_classes)
        for agnostic in (False, True):
            got = iou(pred, target, class_agnostic=agnostic)
            want = oracle(pred_ids, target_ids, num_classes, agnostic)
            assert got == want, (trial, agnostic, got, want)


@pytest.mark.acceptance("filter protocol clause-by-clause")
def test_filter_protocol(person_vocab):
    """On a 200-record synthetic manifest, the record filter agrees with an
    independent clause-by-clause re-implementation record for record."""
    records = synthetic_records(200, person_vocab, seed=0)
    result = filter_records(records)

    person_id = person_vocab.id_of("person")
    expected_kept = []
    expected_rejections = {"excluded_class": 0, "object_count": 0, "min_area": 0}
    for record in records:
        # independent: read the pixel map directly, not record.object_stats
        ids = record.target.class_ids()
        counts = np.bincount(ids.reshape(-1), minlength=person_vocab.num_classes)
        present = [c for c in range(1, person_vocab.num_classes) if counts[c] > 0]
        fractions = [counts[c] / ids.size for c in present]
        if person_id in present:
            expected_rejections["excluded_class"] += 1
        elif not 2 <= len(present) <= 4:
            expected_rejections["object_count"] += 1
        elif any(f < 0.05 for f in fractions):
            expected_rejections["min_area"] += 1
        else:
            expected_kept.append(record.id)

    assert [r.id for r in result.kept] == expected_kept
    assert result.rejections == expected_rejections
    assert sum(expected_rejections.values()) + len(expected_kept) == 200
    # the sample is large enough that every clause fires
    assert all(v > 0 for v in expected_rejections.values())


@pytest.mark.acceptance("refiner strength endpoints")
def test_refiner_endpoints(vocab):
    """strength 0 is a bit-identical pass-through; strength 1 is independent
    of the input; the output's distance from the input grows monotonically
    over a 5-point strength grid."""
    refiner = ToyRefiner(vocab)
    rng = np.random.default_rng(99)
    img_a = Image(rng.uniform(0.0, 1.0, size=(24, 24, 3)))
    img_b = Image(rng.uniform(0.0, 1.0, size=(24, 24, 3)))
    prompt = "a cat and a dog"

    zero = refiner.refine(img_a, prompt, 0.0, seed=7)
    assert zero.to_png_bytes() == img_a.to_png_bytes()
    assert np.array_equal(zero.data, img_a.data)

    full_a = refiner.refine(img_a, prompt, 1.0, seed=7)
    full_b = refiner.refine(img_b, prompt, 1.0, seed=7)
    assert np.array_equal(full_a.data, full_b.data)

    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    distances = [
        float(np.linalg.norm(refiner.refine(img_a, prompt, s, seed=7).data - img_a.data))
        for s in grid
    ]
    assert distances[0] == 0.0
    for lo, hi in zip(distances, distances[1:]):
        assert hi > lo, f"distance not monotone: {distances}"


def _job_hashes(spec, backends):
    job = job_from_spec(spec, backends, "det")
    run_job(job, backends, mode="auto")
    assert job.status is JobStatus.DONE
    stage1 = [hashlib.sha256(r.image.to_png_bytes()).hexdigest()
              for r in job.stage1_results]
    stage2 = [hashlib.sha256(r.image.to_png_bytes()).hexdigest()
              for r in job.stage2_results]
    return stage1, stage2


@pytest.mark.acceptance("fan-out determinism")
def test_determinism_fan_out(backends, square_target, vocab):
    """The same spec and seed produce bit-identical artifacts across two full
    auto runs with fan-out 2x2 (2 stage-1 and 4 stage-2 results)."""
    data, _ = encode_mask(square_target, vocab, "png")
    spec = {
        "prompt": "a cat",
        "mask_b64": base64.b64encode(data).decode("ascii"),
        "optimizer": {"max_steps": 40},
        "fan_out": {"n_stage1": 2, "n_stage2_per_stage1": 2},
        "seed": 11,
    }
    first = _job_hashes(spec, backends)
    second = _job_hashes(spec, backends)
    assert first == second
    assert len(first[0]) == 2
    assert len(first[1]) == 4
    # distinct seeds produce distinct candidates, so the equality above is
    # not satisfied vacuously
    assert len(set(first[0])) == 2
    assert len(set(first[1])) == 4


@pytest.mark.acceptance("service round-trip matches cli")
def test_service_round_trip(tmp_path, vocab, square_target):
    """Submitting a spec over HTTP must reproduce the CLI's outputs bit for
    bit: same stage images behind the artifact endpoint, a replayable event
    log, and the same job metadata."""
    mask_bytes, sidecar = encode_mask(square_target, vocab, "png")
    mask_path = tmp_path / "mask.png"
    mask_path.write_bytes(mask_bytes)
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(sidecar)
    out_dir = tmp_path / "cli_out"

    runner = CliRunner()
    result = runner.invoke(cli_main, [
        "generate",
        "--mask", str(mask_path),
        "--vocab", str(vocab_path),
        "--prompt", "a cat",
        "--seed", "11",
        "--max-steps", "20",
        "--n-stage1", "2",
        "--n-stage2", "1",
        "--out-dir", str(out_dir),
    ])
    assert result.exit_code == 0, result.output
    cli_files = {
        "s1-0": (out_dir / "stage1_0.png").read_bytes(),
        "s1-1": (out_dir / "stage1_1.png").read_bytes(),
        "s2-0-0": (out_dir / "stage2_0_0.png").read_bytes(),
        "s2-1-0": (out_dir / "stage2_1_0.png").read_bytes(),
    }

    from tcig.backends.registry import default_toy_backends

    service = JobService(
        default_toy_backends(vocab), JobStore(str(tmp_path / "store"))
    )
    app = create_app(service)
    with TestClient(app) as client:
        spec = {
            "prompt": "a cat",
            "mask_b64": base64.b64encode(mask_bytes).decode("ascii"),
            "optimizer": {"max_steps": 20},
            "fan_out": {"n_stage1": 2, "n_stage2_per_stage1": 1},
            "seed": 11,
        }
        job_id = client.post("/jobs", json=spec).json()["id"]

        # follow the stream to completion
        events = []
        with client.stream("GET", f"/jobs/{job_id}/events") as resp:
            current = None
            for line in resp.iter_lines():
                if line.startswith("id: "):
                    current = int(line[4:])
                elif line.startswith("data: "):
                    events.append((current, json.loads(line[6:])))
        assert events[-1][1]["type"] == "terminal"
        assert [seq for seq, _ in events] == list(range(len(events)))

        # replaying from any cursor returns exactly the suffix
        cutoff = events[3][0]
        with client.stream(
            "GET", f"/jobs/{job_id}/events",
            headers={"Last-Event-ID": str(cutoff)},
        ) as resp:
            replay = []
            current = None
            for line in resp.iter_lines():
                if line.startswith("id: "):
                    current = int(line[4:])
                elif line.startswith("data: "):
                    replay.append((current, json.loads(line[6:])))
        assert replay == events[4:]

        doc = client.get(f"/jobs/{job_id}").json()
        assert doc["status"] == "done"
        service_files = {}
        for entry in doc["stage1"] + doc["stage2"]:
            resp = client.get(f"/artifacts/{entry['artifact']}")
            assert resp.status_code == 200
            service_files[entry["id"]] = resp.content

    assert set(service_files) == set(cli_files)
    for key, blob in cli_files.items():
        assert service_files[key] == blob, f"{key} differs between CLI and service"

    # the mask itself round-trips bit-exactly through the artifact store
    stored_mask = service.store.get_artifact(doc["mask_artifact"])
    assert stored_mask == mask_bytes
