"""Job execution service: validates specs, runs jobs on a worker pool, and
fans progress out through the persistent event log.

Each job has a single writer (its worker thread), so job docs and events for
one job never race. Subscribers replay the log and then follow live appends
via a shared condition variable.
"""
from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..backends.registry import BackendBundle
from ..core import Image, LossWeights, decode_mask
from ..errors import JobSpecError, JobStateError
from ..pipeline import (
    GenerationJob,
    JobObserver,
    JobStatus,
    job_from_spec,
    job_summary,
    mask_bytes_from_spec,
    run_job,
    select_candidates,
)
from ..stage1 import LatentState, OptimizerConfig, StageOneResult, TraceRow
from ..stage2 import RefineConfig, StageTwoResult
from .store import JobStore

log = logging.getLogger("tcig.service")

TERMINAL_STATUSES = (JobStatus.DONE.value, JobStatus.FAILED.value)


class JobService:
    def __init__(self, backends: BackendBundle, store: JobStore,
                 workers: int = 2, loss_cadence: int = 10):
        if loss_cadence < 1:
            raise ValueError("loss_cadence must be positive")
        self.backends = backends
        self.store = store
        self.loss_cadence = loss_cadence
        self._jobs: Dict[str, GenerationJob] = {}
        self._artifacts: Dict[str, Dict[str, str]] = {}
        self._jobs_lock = threading.Lock()
        self._event_cond = threading.Condition()
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._exclusive: Optional[threading.Lock] = (
            threading.Lock() if backends.has_exclusive() else None
        )
        self._recover()

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)
        self.store.close()

    def _recover(self) -> None:
        """Mark jobs that were mid-run when the process died; never resume
        them silently. awaiting_selection jobs stay selectable."""
        interrupted = (
            JobStatus.PENDING.value,
            JobStatus.STAGE1_RUNNING.value,
            JobStatus.STAGE2_RUNNING.value,
        )
        for doc in self.store.list_jobs():
            if doc.get("status") in interrupted:
                doc["status"] = JobStatus.FAILED.value
                doc["error"] = "interrupted by service restart"
                self.store.put_job(doc["id"], doc)
                self._append_event(doc["id"], {
                    "type": "status", "status": doc["status"], "error": doc["error"],
                })
                self._append_event(doc["id"], {
                    "type": "terminal", "status": doc["status"],
                })

    # -- events ---------------------------------------------------------------

    def _append_event(self, job_id: str, doc: Dict) -> None:
        self.store.append_event(job_id, doc)
        with self._event_cond:
            self._event_cond.notify_all()

    def subscribe(self, job_id: str, after: int = -1,
                  poll_interval: float = 0.2) -> Iterator[Tuple[int, Dict]]:
        """Replay events past `after`, then follow until the terminal event."""
        if self.store.get_job(job_id) is None:
            raise KeyError(job_id)
        cursor = after
        while True:
            batch = self.store.events_after(job_id, cursor)
            for seq, doc in batch:
                cursor = seq
                yield seq, doc
                if doc.get("type") == "terminal":
                    return
            with self._event_cond:
                self._event_cond.wait(timeout=poll_interval)

    # -- job documents ----------------------------------------------------------

    def _job_doc(self, job: GenerationJob) -> Dict:
        doc = job_summary(job)
        refs = self._artifacts.get(job.id, {})
        doc["mask_artifact"] = refs.get("mask")
        for entry in doc["stage1"]:
            entry["artifact"] = refs.get(entry["id"])
        for entry in doc["stage2"]:
            entry["artifact"] = refs.get(entry["id"])
        return doc

    def _persist(self, job: GenerationJob) -> None:
        self.store.put_job(job.id, self._job_doc(job))

    def get_job_doc(self, job_id: str) -> Optional[Dict]:
        return self.store.get_job(job_id)

    # -- submit / select ----------------------------------------------------------

    def submit(self, spec: Dict) -> str:
        job_id = uuid.uuid4().hex[:12]
        job = job_from_spec(spec, self.backends, job_id)  # raises JobSpecError
        # store the upload verbatim so the round trip is byte-exact in
        # whichever format (PNG or PGM) the client chose
        mask_bytes = mask_bytes_from_spec(spec)
        with self._jobs_lock:
            self._jobs[job_id] = job
            self._artifacts[job_id] = {"mask": self.store.put_artifact(mask_bytes)}
        self._persist(job)
        self._append_event(job_id, {"type": "status", "status": job.status.value})
        self._pool.submit(self._execute, job_id)
        return job_id

    def select(self, job_id: str, stage1_ids: Sequence[str],
               refine_doc: Optional[Dict] = None) -> Dict:
        doc = self.store.get_job(job_id)
        if doc is None:
            raise KeyError(job_id)
        with self._jobs_lock:
            job = self._jobs.get(job_id)
            if job is None and doc.get("status") == JobStatus.AWAITING_SELECTION.value:
                job = self._reconstruct_awaiting(doc)
                self._jobs[job_id] = job
        if job is None or job.status is not JobStatus.AWAITING_SELECTION:
            raise JobStateError(
                f"job {job_id} is {doc.get('status')}, not awaiting_selection"
            )
        override = None
        if refine_doc:
            try:
                base = job.refine_config
                override = RefineConfig(
                    strength=refine_doc.get("strength", base.strength),
                    steps=refine_doc.get("steps", base.steps),
                    output_width=refine_doc.get("output_width", base.output_width),
                    output_height=refine_doc.get("output_height", base.output_height),
                )
            except (TypeError, ValueError) as exc:
                raise JobSpecError([("refine", str(exc))]) from exc
        known = {res.id for res in job.stage1_results}
        unknown = [sid for sid in stage1_ids if sid not in known]
        if not stage1_ids or unknown:
            raise JobSpecError(
                [("stage1_ids", f"unknown candidate id(s): {unknown}" if unknown
                  else "select at least one candidate")]
            )
        self._pool.submit(self._run_selection, job_id, list(stage1_ids), override)
        return self.store.get_job(job_id)

    def _reconstruct_awaiting(self, doc: Dict) -> GenerationJob:
        """Rebuild an awaiting_selection job from its persisted doc after a
        restart. Stage-1 images come back from the artifact store (8-bit), so
        a post-restart selection refines the stored PNGs, not live floats."""
        mask_bytes = self.store.get_artifact(doc["mask_artifact"])
        if mask_bytes is None:
            raise JobStateError(f"job {doc['id']}: mask artifact missing")
        weights = LossWeights(
            doc["weights"]["alpha_clip"], tuple(doc["weights"]["alpha_seg"])
        )
        job = GenerationJob(
            id=doc["id"],
            prompt=doc["prompt"],
            target=decode_mask(mask_bytes, self.backends.vocab),
            optimizer_config=OptimizerConfig(weights=weights, **doc["optimizer"]),
            refine_config=RefineConfig(**doc["refine"]),
            n_stage1=doc["n_stage1"],
            n_stage2_per_stage1=doc["n_stage2_per_stage1"],
            seed=doc["seed"],
            mode=doc["mode"],
        )
        refs = {"mask": doc["mask_artifact"]}
        for entry in doc["stage1"]:
            data = self.store.get_artifact(entry["artifact"])
            if data is None:
                raise JobStateError(
                    f"job {doc['id']}: artifact for {entry['id']} missing"
                )
            job.stage1_results.append(StageOneResult(
                image=Image.from_png_bytes(data),
                final_loss=entry["final_loss"],
                loss_trace=(),
                latent=LatentState(np.zeros(1), seed=entry["seed"]),
                id=entry["id"],
            ))
            refs[entry["id"]] = entry["artifact"]
        job.status = JobStatus.AWAITING_SELECTION
        self._artifacts[doc["id"]] = refs
        return job

    # -- execution ----------------------------------------------------------

    def _observer(self, job_id: str) -> JobObserver:
        cadence = self.loss_cadence

        def status_changed(job: GenerationJob) -> None:
            self._persist(job)
            event: Dict = {"type": "status", "status": job.status.value}
            if job.error is not None:
                event["error"] = job.error
                event["failed_stage"] = job.failed_stage
            self._append_event(job_id, event)
            if job.status.value in TERMINAL_STATUSES:
                self._append_event(
                    job_id, {"type": "terminal", "status": job.status.value}
                )

        def stage1_step(run: int, row: TraceRow) -> None:
            if row.step % cadence == 0:
                self._append_event(job_id, {
                    "type": "loss", "run": run, "step": row.step,
                    "l_clip": row.l_clip, "l_segs": list(row.l_segs),
                    "l_total": row.l_total,
                })

        def stage1_done(run: int, result: StageOneResult) -> None:
            self._store_result_artifact(job_id, result.id, result.image)
            last = result.loss_trace[-1]
            if last.step % cadence != 0:
                self._append_event(job_id, {
                    "type": "loss", "run": run, "step": last.step,
                    "l_clip": last.l_clip, "l_segs": list(last.l_segs),
                    "l_total": last.l_total,
                })
            with self._jobs_lock:
                self._persist(self._jobs[job_id])
            self._append_event(job_id, {
                "type": "candidate", "stage": 1, "id": result.id,
                "artifact": self._artifacts[job_id][result.id],
                "final_loss": result.final_loss,
            })

        def stage2_done(result: StageTwoResult) -> None:
            self._store_result_artifact(job_id, result.id, result.image)
            with self._jobs_lock:
                self._persist(self._jobs[job_id])
            self._append_event(job_id, {
                "type": "candidate", "stage": 2, "id": result.id,
                "artifact": self._artifacts[job_id][result.id],
                "source_id": result.source_id,
                "strength": result.config.strength,
            })

        return JobObserver(
            status_changed=status_changed,
            stage1_step=stage1_step,
            stage1_done=stage1_done,
            stage2_done=stage2_done,
        )

    def _store_result_artifact(self, job_id: str, result_id: str, image: Image) -> None:
        artifact_id = self.store.put_artifact(image.to_png_bytes())
        with self._jobs_lock:
            self._artifacts[job_id][result_id] = artifact_id

    def _execute(self, job_id: str) -> None:
        with self._jobs_lock:
            job = self._jobs[job_id]
        observer = self._observer(job_id)
        try:
            if self._exclusive:
                with self._exclusive:
                    run_job(job, self.backends, observer=observer)
            else:
                run_job(job, self.backends, observer=observer)
        except Exception:
            log.exception("job %s: executor error", job_id)

    def _run_selection(self, job_id: str, stage1_ids: List[str],
                       override: Optional[RefineConfig]) -> None:
        with self._jobs_lock:
            job = self._jobs[job_id]
        observer = self._observer(job_id)
        try:
            if self._exclusive:
                with self._exclusive:
                    select_candidates(job, stage1_ids, self.backends,
                                      refine_override=override, observer=observer)
            else:
                select_candidates(job, stage1_ids, self.backends,
                                  refine_override=override, observer=observer)
        except JobStateError:
            pass  # lost a race with another selection; the first one stands
