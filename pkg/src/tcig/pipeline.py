"""Two-stage orchestration: seed fan-out, candidate bookkeeping, job status machine.

Seeds are derived deterministically so a job spec reproduces bit-identical
results: Stage-1 run i uses base_seed + i, Stage-2 refinement (i, j) uses
hash64(base_seed, i, j).
"""
from __future__ import annotations

import base64
import enum
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

from . import stage1, stage2
from .backends.registry import BackendBundle
from .core import LossWeights, SegMask, decode_mask
from .errors import JobSpecError, JobStateError
from .seeds import hash64
from .stage1 import GuideRegistration, OptimizerConfig, StageOneResult, TraceRow
from .stage2 import RefineConfig, StageTwoResult


class JobStatus(str, enum.Enum):
    PENDING = "pending"
    STAGE1_RUNNING = "stage1_running"
    AWAITING_SELECTION = "awaiting_selection"
    STAGE2_RUNNING = "stage2_running"
    DONE = "done"
    FAILED = "failed"


# Forward edges only; failure is reachable from the active states.
_EDGES = {
    (JobStatus.PENDING, JobStatus.STAGE1_RUNNING),
    (JobStatus.STAGE1_RUNNING, JobStatus.AWAITING_SELECTION),
    (JobStatus.STAGE1_RUNNING, JobStatus.STAGE2_RUNNING),
    (JobStatus.AWAITING_SELECTION, JobStatus.STAGE2_RUNNING),
    (JobStatus.STAGE2_RUNNING, JobStatus.DONE),
    (JobStatus.PENDING, JobStatus.FAILED),
    (JobStatus.STAGE1_RUNNING, JobStatus.FAILED),
    (JobStatus.STAGE2_RUNNING, JobStatus.FAILED),
}


@dataclass(eq=False)
class GenerationJob:
    id: str
    prompt: str
    target: SegMask
    optimizer_config: OptimizerConfig = field(default_factory=OptimizerConfig)
    refine_config: RefineConfig = field(default_factory=RefineConfig)
    n_stage1: int = 1
    n_stage2_per_stage1: int = 1
    seed: int = 0
    mode: str = "auto"
    status: JobStatus = JobStatus.PENDING
    stage1_results: List[StageOneResult] = field(default_factory=list)
    stage2_results: List[StageTwoResult] = field(default_factory=list)
    error: Optional[str] = None
    failed_stage: Optional[int] = None

    def __post_init__(self):
        if self.n_stage1 < 1 or self.n_stage2_per_stage1 < 1:
            raise ValueError("fan-out counts must be positive")
        if self.mode not in ("auto", "interactive"):
            raise ValueError(f"mode must be 'auto' or 'interactive', got {self.mode!r}")

    def transition(self, new_status: JobStatus) -> None:
        if (self.status, new_status) not in _EDGES:
            raise JobStateError(
                f"job {self.id}: illegal status transition "
                f"{self.status.value} -> {new_status.value}"
            )
        self.status = new_status


@dataclass
class JobObserver:
    """Optional hooks the service uses to stream progress; all may be None."""

    status_changed: Optional[Callable[[GenerationJob], None]] = None
    stage1_step: Optional[Callable[[int, TraceRow], None]] = None
    stage1_done: Optional[Callable[[int, StageOneResult], None]] = None
    stage2_done: Optional[Callable[[StageTwoResult], None]] = None


def _notify_status(job: GenerationJob, observer: Optional[JobObserver]) -> None:
    if observer and observer.status_changed:
        observer.status_changed(job)


def _fail(job: GenerationJob, stage: int, exc: Exception,
          observer: Optional[JobObserver]) -> GenerationJob:
    job.transition(JobStatus.FAILED)
    job.error = str(exc)
    job.failed_stage = stage
    _notify_status(job, observer)
    return job


def _run_stage2(job: GenerationJob, backends: BackendBundle,
                selected_indices: Sequence[int],
                refine_config: RefineConfig,
                observer: Optional[JobObserver]) -> GenerationJob:
    job.transition(JobStatus.STAGE2_RUNNING)
    _notify_status(job, observer)
    try:
        for i in selected_indices:
            source = job.stage1_results[i]
            for j in range(job.n_stage2_per_stage1):
                cfg = replace(refine_config, seed=hash64(job.seed, i, j))
                result = stage2.refine(
                    source.image, job.prompt, cfg, backends.refiner,
                    source_id=source.id or f"s1-{i}",
                )
                result.id = f"s2-{i}-{j}"
                job.stage2_results.append(result)
                if observer and observer.stage2_done:
                    observer.stage2_done(result)
    except Exception as exc:
        return _fail(job, 2, exc, observer)
    job.transition(JobStatus.DONE)
    _notify_status(job, observer)
    return job


def run_job(job: GenerationJob, backends: BackendBundle,
            mode: Optional[str] = None,
            observer: Optional[JobObserver] = None) -> GenerationJob:
    """Execute a job. Auto mode runs both stages over the full fan-out;
    interactive mode stops at awaiting_selection after Stage 1 and resumes
    via select_candidates. Partial results are retained on failure."""
    mode = mode or job.mode
    if mode not in ("auto", "interactive"):
        raise ValueError(f"mode must be 'auto' or 'interactive', got {mode!r}")

    job.transition(JobStatus.STAGE1_RUNNING)
    _notify_status(job, observer)
    try:
        for i in range(job.n_stage1):
            on_step = None
            if observer and observer.stage1_step:
                run_index = i
                on_step = lambda row, _i=run_index: observer.stage1_step(_i, row)
            result = stage1.optimize(
                job.prompt, job.target, backends, job.optimizer_config,
                seed=job.seed + i, on_step=on_step,
            )
            result.id = f"s1-{i}"
            job.stage1_results.append(result)
            if observer and observer.stage1_done:
                observer.stage1_done(i, result)
    except Exception as exc:
        return _fail(job, 1, exc, observer)

    if mode == "interactive":
        job.transition(JobStatus.AWAITING_SELECTION)
        _notify_status(job, observer)
        return job

    return _run_stage2(
        job, backends, range(len(job.stage1_results)), job.refine_config, observer
    )


def select_candidates(job: GenerationJob, stage1_ids: Sequence[str],
                      backends: BackendBundle,
                      refine_override: Optional[RefineConfig] = None,
                      observer: Optional[JobObserver] = None) -> GenerationJob:
    """Resume an awaiting_selection job into Stage 2 for the chosen candidates."""
    if job.status != JobStatus.AWAITING_SELECTION:
        raise JobStateError(
            f"job {job.id} is {job.status.value}, not awaiting_selection"
        )
    if not stage1_ids:
        raise ValueError("select at least one stage-1 candidate")
    by_id = {res.id: idx for idx, res in enumerate(job.stage1_results)}
    unknown = [sid for sid in stage1_ids if sid not in by_id]
    if unknown:
        raise ValueError(f"unknown stage-1 candidate id(s): {unknown}")
    indices = sorted(by_id[sid] for sid in stage1_ids)
    config = refine_override or job.refine_config
    return _run_stage2(job, backends, indices, config, observer)


_OPTIMIZER_KEYS = {
    "max_steps", "step_size", "plateau_patience", "plateau_tolerance",
    "momentum", "normalize",
}
_REFINE_KEYS = {"strength", "steps", "output_width", "output_height"}


def _spec_weights(spec: dict, backends: BackendBundle,
                  violations: List[Tuple[str, str]]) -> LossWeights:
    doc = spec.get("weights", {})
    if not isinstance(doc, dict):
        violations.append(("weights", "must be an object"))
        return LossWeights()
    alpha_clip = doc.get("alpha_clip", 1.0)
    alpha_seg = doc.get("alpha_seg", [5.0] * len(backends.segmenters))
    ok = True
    if not isinstance(alpha_clip, (int, float)) or isinstance(alpha_clip, bool) \
            or alpha_clip < 0:
        violations.append(("weights.alpha_clip", "must be a nonnegative number"))
        ok = False
    if not isinstance(alpha_seg, (list, tuple)):
        violations.append(("weights.alpha_seg", "must be a list of numbers"))
        ok = False
    else:
        for idx, value in enumerate(alpha_seg):
            if not isinstance(value, (int, float)) or isinstance(value, bool) \
                    or value < 0:
                violations.append(
                    (f"weights.alpha_seg[{idx}]", "must be a nonnegative number")
                )
                ok = False
        if len(alpha_seg) != len(backends.segmenters):
            violations.append((
                "weights.alpha_seg",
                f"expected {len(backends.segmenters)} weight(s) for the "
                f"registered guides, got {len(alpha_seg)}",
            ))
            ok = False
    if not ok:
        return LossWeights()
    return LossWeights(float(alpha_clip), tuple(float(v) for v in alpha_seg))


def mask_bytes_from_spec(spec: dict) -> bytes:
    """Raw index-map bytes named by a spec's mask_path or mask_b64 field.

    Callers that already validated the job spec (via job_from_spec) can use
    this to recover the exact uploaded bytes, e.g. for content-addressed
    storage.
    """
    if "mask_path" in spec:
        with open(spec["mask_path"], "rb") as fh:
            return fh.read()
    return base64.b64decode(spec["mask_b64"], validate=True)


def _spec_mask(spec: dict, backends: BackendBundle,
               violations: List[Tuple[str, str]]) -> Optional[SegMask]:
    has_path = "mask_path" in spec
    has_inline = "mask_b64" in spec
    if has_path == has_inline:
        violations.append(("mask", "provide exactly one of mask_path or mask_b64"))
        return None
    try:
        data = mask_bytes_from_spec(spec)
        target = decode_mask(data, backends.vocab)
    except Exception as exc:
        violations.append(("mask", f"mask does not decode: {exc}"))
        return None
    gen = backends.generator
    gen_h, gen_w = getattr(gen, "height", None), getattr(gen, "width", None)
    if gen_h is not None and (target.height, target.width) != (gen_h, gen_w):
        violations.append((
            "mask",
            f"mask is {target.height}x{target.width} but the generator "
            f"outputs {gen_h}x{gen_w}",
        ))
        return None
    return target


def job_from_spec(spec: dict, backends: BackendBundle, job_id: str) -> GenerationJob:
    """Validate a job spec document and build the job.

    Collects every violated field instead of stopping at the first and raises
    a single JobSpecError listing them all.
    """
    violations: List[Tuple[str, str]] = []
    if not isinstance(spec, dict):
        raise JobSpecError([("spec", "must be a JSON object")])

    prompt = spec.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        violations.append(("prompt", "must be a non-empty string"))

    weights = _spec_weights(spec, backends, violations)
    target = _spec_mask(spec, backends, violations)

    opt_doc = spec.get("optimizer", {})
    optimizer_config = OptimizerConfig(weights=weights)
    if not isinstance(opt_doc, dict):
        violations.append(("optimizer", "must be an object"))
    else:
        unknown = set(opt_doc) - _OPTIMIZER_KEYS
        if unknown:
            violations.append(("optimizer", f"unknown field(s): {sorted(unknown)}"))
        else:
            try:
                optimizer_config = OptimizerConfig(weights=weights, **opt_doc)
            except (TypeError, ValueError) as exc:
                violations.append(("optimizer", str(exc)))

    refine_doc = spec.get("refine", {})
    refine_config = RefineConfig()
    if not isinstance(refine_doc, dict):
        violations.append(("refine", "must be an object"))
    else:
        unknown = set(refine_doc) - _REFINE_KEYS
        if unknown:
            violations.append(("refine", f"unknown field(s): {sorted(unknown)}"))
        else:
            try:
                refine_config = RefineConfig(**refine_doc)
            except (TypeError, ValueError) as exc:
                violations.append(("refine", str(exc)))

    fan_out = spec.get("fan_out", {})
    n_stage1, n_stage2 = 1, 1
    if not isinstance(fan_out, dict):
        violations.append(("fan_out", "must be an object"))
    else:
        for key, default in (("n_stage1", 1), ("n_stage2_per_stage1", 1)):
            value = fan_out.get(key, default)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                violations.append((f"fan_out.{key}", "must be a positive integer"))
            elif key == "n_stage1":
                n_stage1 = value
            else:
                n_stage2 = value

    seed = spec.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        violations.append(("seed", "must be an integer"))
        seed = 0

    mode = spec.get("mode", "auto")
    if mode not in ("auto", "interactive"):
        violations.append(("mode", "must be 'auto' or 'interactive'"))
        mode = "auto"

    if target is not None:
        registered = [
            GuideRegistration(seg, i) for i, seg in enumerate(backends.segmenters)
        ]
        try:
            stage1.route_guides(target, registered)
        except Exception as exc:
            violations.append(("mask", str(exc)))

    if violations:
        raise JobSpecError(violations)
    return GenerationJob(
        id=job_id,
        prompt=prompt.strip(),
        target=target,
        optimizer_config=optimizer_config,
        refine_config=refine_config,
        n_stage1=n_stage1,
        n_stage2_per_stage1=n_stage2,
        seed=seed,
        mode=mode,
    )


def job_summary(job: GenerationJob) -> dict:
    """JSON-safe snapshot of a job; artifact/file references are added by the
    caller that owns the storage."""
    weights = job.optimizer_config.weights
    return {
        "id": job.id,
        "prompt": job.prompt,
        "status": job.status.value,
        "mode": job.mode,
        "seed": job.seed,
        "n_stage1": job.n_stage1,
        "n_stage2_per_stage1": job.n_stage2_per_stage1,
        "weights": {
            "alpha_clip": weights.alpha_clip,
            "alpha_seg": list(weights.alpha_seg),
        },
        "optimizer": {
            "max_steps": job.optimizer_config.max_steps,
            "step_size": job.optimizer_config.step_size,
            "plateau_patience": job.optimizer_config.plateau_patience,
            "plateau_tolerance": job.optimizer_config.plateau_tolerance,
            "momentum": job.optimizer_config.momentum,
            "normalize": job.optimizer_config.normalize,
        },
        "refine": {
            "strength": job.refine_config.strength,
            "steps": job.refine_config.steps,
            "output_width": job.refine_config.output_width,
            "output_height": job.refine_config.output_height,
        },
        "error": job.error,
        "failed_stage": job.failed_stage,
        "stage1": [
            {"id": res.id, "seed": res.latent.seed, "final_loss": res.final_loss}
            for res in job.stage1_results
        ],
        "stage2": [
            {
                "id": res.id,
                "source_id": res.source_id,
                "seed": res.config.seed,
                "strength": res.config.strength,
                "steps": res.config.steps,
            }
            for res in job.stage2_results
        ],
    }
