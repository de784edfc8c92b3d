"""HTTP API exposing an Engine to client agents."""
from __future__ import annotations

import logging
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .engine import Engine
from .errors import (
    BackendError,
    ConcurrentWriteError,
    EmptyCompletion,
    MalformedSession,
    OutOfOrderSession,
    ResearchAborted,
    UnknownPageId,
)
from .records import Session
from .researcher import OutputFormat

log = logging.getLogger(__name__)


class SessionBody(BaseModel):
    id: int = Field(ge=0)
    content: str
    created_at: Optional[str] = None
    metadata: Optional[dict[str, str]] = None


class ResearchBody(BaseModel):
    request: str
    format: str = OutputFormat.INTEGRATION_ONLY.value
    max_depth: Optional[int] = Field(default=None, ge=1)
    top_k: Optional[int] = Field(default=None, ge=1)


def create_app(engine: Engine, persist: bool = False) -> FastAPI:
    """Build the app. With ``persist`` the store is written to disk after each ingest."""
    app = FastAPI(title="gam")

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed body", "detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions")
    def post_session(body: SessionBody):
        try:
            session = Session.from_dict(body.model_dump(exclude_none=True))
        except MalformedSession as exc:
            raise HTTPException(400, str(exc)) from None
        try:
            page_ids = engine.ingest(session)
        except OutOfOrderSession as exc:
            raise HTTPException(409, str(exc)) from None
        except ConcurrentWriteError as exc:
            raise HTTPException(409, str(exc)) from None
        except (BackendError, EmptyCompletion) as exc:
            raise HTTPException(502, f"backend failure: {exc}") from None
        if persist and engine.config.store_path:
            engine.persist()
        return {"session_id": session.id, "page_ids": page_ids}

    @app.post("/v1/research")
    def post_research(body: ResearchBody):
        if not body.request.strip():
            raise HTTPException(400, "request is empty")
        try:
            fmt = OutputFormat(body.format)
        except ValueError:
            raise HTTPException(400, f"unknown format {body.format!r}") from None
        try:
            final = engine.research(body.request, output_format=fmt, max_depth=body.max_depth, top_k=body.top_k)
        except ResearchAborted as exc:
            return JSONResponse(status_code=502, content={"error": str(exc), "trace": exc.trace.to_dict()})
        return final.to_dict()

    @app.get("/v1/memory")
    def get_memory():
        _, memory = engine.snapshot()
        return {"memos": [m.to_dict() for m in memory.memos]}

    @app.get("/v1/pages/{page_id}")
    def get_page(page_id: int):
        view, _ = engine.snapshot()
        try:
            return view.page(page_id).to_dict()
        except UnknownPageId:
            raise HTTPException(404, f"unknown page {page_id}") from None

    return app
