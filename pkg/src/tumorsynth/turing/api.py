"""HTTP JSON API for the blinded reader study.

Client-facing payloads are built exclusively through `client_view`, so ground
truth never leaves the server before a session is closed; per-session reports
are refused (409) while the session is open.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..errors import SessionClosed, UnknownCase
from .cases import TuringCase, client_view, load_reader_study
from .sessions import (
    GROUPINGS,
    READER_LEVELS,
    SessionStore,
    TuringSession,
    close_session,
    create_session,
    record_verdict,
    report,
)


class CreateSessionRequest(BaseModel):
    reader_id: str
    reader_level: str
    seed: int | None = None


class VerdictRequest(BaseModel):
    case_id: str
    verdict: str
    client_ts: float | None = None


def create_app(
    cases_dir: str | Path,
    store_dir: str | Path | None = None,
    base_seed: int = 0,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    cases_dir = Path(cases_dir)
    store = SessionStore(store_dir if store_dir is not None else cases_dir / "sessions")
    cases: list[TuringCase] = load_reader_study(cases_dir)
    case_by_id = {c.case_id: c for c in cases}
    sessions: dict[str, TuringSession] = {s.session_id: s for s in store.load_sessions()}

    app = FastAPI(title="tumorsynth reader study")

    def _session(session_id: str) -> TuringSession:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return sessions[session_id]

    def _progress(s: TuringSession) -> dict:
        return {
            "session_id": s.session_id,
            "answered": s.answered,
            "total": s.total,
            "closed": s.closed,
            "done": s.next_case_id() is None,
        }

    @app.post("/api/sessions")
    def api_create_session(req: CreateSessionRequest):
        if req.reader_level not in READER_LEVELS:
            raise HTTPException(status_code=422, detail=f"reader_level must be one of {READER_LEVELS}")
        seed = req.seed if req.seed is not None else base_seed + 9973 * len(sessions)
        session = create_session(store, req.reader_id, req.reader_level, cases, seed)
        if session.session_id in sessions:
            raise HTTPException(status_code=409, detail="session with this reader/seed already exists")
        sessions[session.session_id] = session
        return _progress(session)

    @app.get("/api/sessions/{session_id}")
    def api_session_state(session_id: str):
        return _progress(_session(session_id))

    @app.get("/api/sessions/{session_id}/next")
    def api_next_case(session_id: str):
        s = _session(session_id)
        case_id = s.next_case_id()
        if case_id is None:
            return {"done": True, **_progress(s)}
        view = client_view(case_by_id[case_id], asset_prefix="/api/assets/")
        return {**view, "index": s.answered, "total": s.total, "done": False}

    @app.post("/api/sessions/{session_id}/verdicts")
    def api_submit_verdict(session_id: str, req: VerdictRequest):
        s = _session(session_id)
        try:
            record_verdict(s, req.case_id, req.verdict, store)
        except UnknownCase as e:
            raise HTTPException(status_code=404, detail=str(e))
        except SessionClosed as e:
            raise HTTPException(status_code=409, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return {"recorded": True, **_progress(s)}

    @app.post("/api/sessions/{session_id}/close")
    def api_close_session(session_id: str):
        s = close_session(_session(session_id), store)
        return _progress(s)

    @app.get("/api/sessions/{session_id}/report")
    def api_session_report(session_id: str):
        s = _session(session_id)
        if not s.closed:
            raise HTTPException(status_code=409, detail="session must be closed before reporting")
        return {
            "total": report([s], cases, "total"),
            "by_type": report([s], cases, "type"),
        }

    @app.get("/api/report")
    def api_global_report(grouping: str = "total"):
        if grouping not in GROUPINGS:
            raise HTTPException(status_code=422, detail=f"grouping must be one of {GROUPINGS}")
        closed = [s for s in sessions.values() if s.closed]
        return report(closed, cases, grouping)

    @app.get("/api/assets/{name}")
    def api_asset(name: str):
        path = (cases_dir / "assets" / name).resolve()
        if not str(path).startswith(str((cases_dir / "assets").resolve())) or not path.exists():
            raise HTTPException(status_code=404, detail=f"no asset {name}")
        return FileResponse(path, media_type="image/png")

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")

    return app
