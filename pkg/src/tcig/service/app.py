"""HTTP surface over JobService: JSON endpoints plus server-sent events.

Endpoints: POST /jobs, GET /jobs/{id}, GET /jobs/{id}/events,
POST /jobs/{id}/select, GET /artifacts/{id}, GET /vocab.
"""
from __future__ import annotations

import json
import os
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse

from ..backends.registry import build_backends
from ..core import ClassVocabulary
from ..errors import JobSpecError, JobStateError
from .runner import JobService
from .store import JobStore

DEFAULT_PORT = 8787


def build_service(config: Optional[dict] = None) -> JobService:
    """Wire a service from a config document; TCIG_STORAGE_ROOT overrides the
    configured storage root."""
    config = config or {}
    vocab = None
    if "vocab" in config:
        vocab = ClassVocabulary.from_json(json.dumps(config["vocab"]))
    backends = build_backends(config.get("backends", {}), vocab=vocab)
    root = os.environ.get("TCIG_STORAGE_ROOT") or config.get(
        "storage_root", os.path.join(os.getcwd(), "tcig_store")
    )
    store = JobStore(root)
    return JobService(
        backends,
        store,
        workers=config.get("workers", 2),
        loss_cadence=config.get("loss_cadence", 10),
    )


def _violations_response(exc: JobSpecError) -> JSONResponse:
    return JSONResponse(
        status_code=422,
        content={
            "detail": "invalid job spec",
            "violations": [
                {"field": field, "message": message}
                for field, message in exc.violations
            ],
        },
    )


def create_app(service: JobService) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        service.shutdown()

    app = FastAPI(title="tcig service", lifespan=lifespan)
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/jobs", status_code=201)
    async def submit_job(request: Request):
        try:
            spec = await request.json()
        except Exception:
            return JSONResponse(
                status_code=422,
                content={"detail": "body must be a JSON job spec"},
            )
        try:
            job_id = service.submit(spec)
        except JobSpecError as exc:
            return _violations_response(exc)
        return {"id": job_id, "status": "pending"}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        doc = service.get_job_doc(job_id)
        if doc is None:
            return JSONResponse(status_code=404, content={"detail": "unknown job"})
        return doc

    @app.get("/jobs/{job_id}/events")
    def job_events(job_id: str, request: Request):
        if service.get_job_doc(job_id) is None:
            return JSONResponse(status_code=404, content={"detail": "unknown job"})
        after = -1
        last_id = request.headers.get("last-event-id")
        if last_id is not None:
            try:
                after = int(last_id)
            except ValueError:
                after = -1

        def stream():
            for seq, doc in service.subscribe(job_id, after=after):
                yield f"id: {seq}\ndata: {json.dumps(doc)}\n\n"

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    @app.post("/jobs/{job_id}/select")
    async def select(job_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(
                status_code=422, content={"detail": "body must be JSON"}
            )
        stage1_ids = body.get("stage1_ids", [])
        refine_doc = body.get("refine")
        try:
            return service.select(job_id, stage1_ids, refine_doc)
        except KeyError:
            return JSONResponse(status_code=404, content={"detail": "unknown job"})
        except JobStateError as exc:
            return JSONResponse(status_code=409, content={"detail": str(exc)})
        except JobSpecError as exc:
            return _violations_response(exc)

    @app.get("/artifacts/{artifact_id}")
    def get_artifact(artifact_id: str):
        data = service.store.get_artifact(artifact_id)
        if data is None:
            return JSONResponse(
                status_code=404, content={"detail": "unknown artifact"}
            )
        media = "image/png" if data[:8] == b"\x89PNG\r\n\x1a\n" \
            else "image/x-portable-graymap"
        return Response(content=data, media_type=media)

    @app.get("/vocab")
    def get_vocab():
        return json.loads(service.backends.vocab.to_json())

    return app
