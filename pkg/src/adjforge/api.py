"""HTTP/JSON API mirroring the workflow actions for the browser workbench."""
from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse, Response

from .config import ServiceConfig
from .errors import (
    AdjforgeError,
    RunNotFoundError,
    StateConflictError,
    TargetValidationError,
)
from .generator import Library, TargetSpec
from .geometry import design_to_image
from .service import RunStore


def create_app(config: ServiceConfig | None = None, store: RunStore | None = None) -> FastAPI:
    config = config or ServiceConfig.load()
    if store is None:
        library = Library.load(config.library_dir) if config.library_dir else None
        store = RunStore(config.runs_dir, library=library, workers=config.workers)

    app = FastAPI(title="adjforge", docs_url="/api/docs", openapi_url="/api/openapi.json")
    app.state.store = store
    app.state.config = config

    def _target_from_body(body: dict) -> TargetSpec:
        try:
            return TargetSpec.from_dict(body)
        except TargetValidationError:
            raise
        except Exception as exc:
            raise TargetValidationError(str(exc))

    @app.exception_handler(AdjforgeError)
    async def _domain_error(request: Request, exc: AdjforgeError):
        status = 500
        if isinstance(exc, RunNotFoundError):
            status = 404
        elif isinstance(exc, StateConflictError):
            status = 409
        elif isinstance(exc, TargetValidationError):
            status = 422
        detail = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, TargetValidationError) and exc.field:
            detail["field"] = exc.field
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=status, content=detail)

    @app.post("/api/runs", status_code=201)
    async def create_run(body: dict):
        run = store.create_run(_target_from_body(body))
        return run.to_dict()

    @app.get("/api/runs")
    async def list_runs():
        return [store.get_run(rid).to_dict() for rid in store.list_runs()]

    @app.post("/api/runs/{run_id}/generate")
    async def generate_action(run_id: str):
        return store.advance(run_id, "generate").to_dict()

    @app.post("/api/runs/{run_id}/validate")
    async def validate_action(run_id: str):
        return store.advance(run_id, "validate").to_dict()

    @app.post("/api/runs/{run_id}/optimize")
    async def optimize_action(run_id: str, body: dict):
        return store.advance(
            run_id, "optimize",
            target_wavelengths=body.get("target_wavelengths"),
            config=body.get("config"),
        ).to_dict()

    @app.get("/api/runs/{run_id}")
    async def get_run(run_id: str):
        return store.get_run(run_id).to_dict()

    @app.get("/api/runs/{run_id}/events")
    async def get_events(run_id: str, after: int = Query(0, ge=0)):
        return store.get_events(run_id, after)

    @app.get("/api/runs/{run_id}/spectrum.csv")
    async def get_spectrum(run_id: str):
        store.get_run(run_id)
        path = os.path.join(store.run_dir(run_id), "spectrum_validated.csv")
        if not os.path.exists(path):
            raise HTTPException(404, "run has no validated spectrum yet")
        with open(path) as f:
            return PlainTextResponse(f.read(), media_type="text/csv")

    @app.get("/api/runs/{run_id}/design.png")
    async def get_design_png(run_id: str, which: str = Query("latest")):
        store.get_run(run_id)
        names = ["final", "generated"] if which == "latest" else [which]
        for name in names:
            path = store.design_path(run_id, name)
            if os.path.exists(path):
                design = store.load_design(run_id, name)
                return Response(design_to_image(design).to_png_bytes(),
                                media_type="image/png")
        raise HTTPException(404, "run has no design yet")

    @app.get("/api/runs/{run_id}/target.json")
    async def get_target(run_id: str):
        run = store.get_run(run_id)
        return {
            "target": run.target.to_dict(),
            "composed": [float(v) for v in run.target.compose()],
        }

    static_dir = config.static_dir
    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        async def index():
            return "<html><body><h1>adjforge</h1><p>API at /api; no UI bundle configured.</p></body></html>"

    return app
