"""HTTP front end: projects, finetune/edit jobs, and result assets.

Mutations route through a per-project FIFO queue, so concurrent
submissions against one project never interleave; GETs read persisted
state only. Responses are JSON except the binary image and mask
endpoints, which serve the canonical PPM/P6 and PGM/P5 bytes.
"""

from __future__ import annotations

import json
from typing import Optional

from fastapi import FastAPI, File, Request, Response
from fastapi.responses import JSONResponse

from .editing import EditRequest
from .errors import (ConfigError, CorruptionError, DeditError, DimensionError,
                     EditError, IntegrityError, MetricError, NotFoundError,
                     StateError, VocabularyError)
from .finetune import FinetuneConfig
from .jobs import Job, JobQueue
from .masks import MaskEdit
from .project import DEFAULT_TOKENS_PER_ITEM, ProjectStore

_STATUS_FOR = (
    (NotFoundError, 404),
    (StateError, 409),  # covers OrderingError
    ((ConfigError, VocabularyError, DimensionError, EditError, MetricError,
      CorruptionError, IntegrityError), 422),
)


def _http_status(exc: DeditError) -> int:
    for types, code in _STATUS_FOR:
        if isinstance(exc, types):
            return code
    return 500


def _job_view(job: Job) -> dict:
    out = {"job_id": job.id, "kind": job.kind, "status": job.status,
           "project_ids": job.project_ids}
    if job.error:
        out["error"] = job.error
    if job.loss_trace is not None:
        out["loss_trace"] = [[s, l] for s, l in job.loss_trace]
    if job.result_ids:
        out["result_refs"] = [
            {"result_id": rid,
             "image": f"/api/results/{rid}/image",
             "mask": f"/api/results/{rid}/mask",
             "metrics": f"/api/results/{rid}/metrics"}
            for rid in job.result_ids]
    return out


def create_app(store: ProjectStore, queue: Optional[JobQueue] = None) -> FastAPI:
    app = FastAPI(title="dedit service")
    app.state.store = store
    app.state.queue = queue or JobQueue(max_workers=2)

    @app.exception_handler(DeditError)
    async def dedit_error(request: Request, exc: DeditError):
        return JSONResponse(
            status_code=_http_status(exc),
            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.post("/api/projects", status_code=201)
    async def create_project(image: bytes = File(alias="image.ppm"),
                             mask: bytes = File(alias="mask.pgm"),
                             options: str = File(default="{}")):
        try:
            opts = json.loads(options)
        except ValueError:
            raise ConfigError("options must be a JSON object") from None
        tokens = int(opts.get("tokens_per_item", DEFAULT_TOKENS_PER_ITEM))
        manifest = store.create_project(image, mask, tokens_per_item=tokens)
        return {"project_id": manifest["id"], "items": manifest["items"]}

    @app.get("/api/projects/{pid}")
    async def get_project(pid: str):
        return store.get_manifest(pid)

    @app.put("/api/projects/{pid}/mask")
    async def put_mask(pid: str, request: Request):
        try:
            edits = await request.json()
        except ValueError:
            raise ConfigError("mask update body must be JSON") from None
        if not isinstance(edits, list):
            raise ConfigError("mask update body must be a JSON list of edits")
        parsed = [MaskEdit.from_dict(e) for e in edits]
        return store.put_mask(pid, parsed)

    @app.post("/api/projects/{pid}/finetune")
    async def submit_finetune(pid: str, config: Optional[dict] = None):
        cfg = FinetuneConfig.from_dict(config or {})
        store.get_manifest(pid)

        def work(job: Job) -> None:
            job.loss_trace = store.run_finetune(
                pid, cfg, on_status=lambda s: setattr(job, "status", s))

        store.set_status(pid, "queued")
        job = app.state.queue.submit([pid], "finetune", work)
        return {"job_id": job.id}

    @app.post("/api/pairs")
    async def submit_pair(body: dict):
        for key in ("target_id", "reference_id"):
            if key not in body:
                raise ConfigError(f"pair request needs {key}")
        target, reference = body["target_id"], body["reference_id"]
        cfg = FinetuneConfig.from_dict(body.get("config") or {})
        store.get_manifest(target)
        store.get_manifest(reference)

        def work(job: Job) -> None:
            job.loss_trace = store.run_pair_finetune(target, reference, cfg)

        store.set_status(target, "queued")
        store.set_status(reference, "queued")
        job = app.state.queue.submit([target, reference], "pair", work)
        return {"job_id": job.id}

    @app.post("/api/projects/{pid}/edits")
    async def submit_edit(pid: str, body: dict):
        req = EditRequest.from_dict(body)
        store.get_manifest(pid)
        if req.kind == "image" or (req.kind == "interpolate"
                                   and req.reference_item >= 0):
            if not req.reference_project:
                raise ConfigError(f"{req.kind} request needs reference_project")
            store.get_manifest(req.reference_project)

        def work(job: Job) -> None:
            rid, _ = store.run_edit(pid, req)
            job.result_ids.append(rid)

        job = app.state.queue.submit([pid], "edit", work)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    async def poll_job(job_id: str):
        return _job_view(app.state.queue.poll(job_id))

    @app.get("/api/results/{result_id}/image")
    async def result_image(result_id: str):
        return Response(content=store.result_image_bytes(result_id),
                        media_type="application/octet-stream")

    @app.get("/api/results/{result_id}/mask")
    async def result_mask(result_id: str):
        return Response(content=store.result_mask_bytes(result_id),
                        media_type="application/octet-stream")

    @app.get("/api/results/{result_id}/metrics")
    async def result_metrics(result_id: str):
        doc = store.result_json(result_id)
        return {"result_id": result_id, "metrics": doc.get("metrics")}

    return app
