#!/usr/bin/env python3
from __future__ import annotations

import os
import secrets
import shutil
import sys
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware

THIS_DIR = Path(__file__).resolve().parent
ROOT_DIR = THIS_DIR.parent
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from app.core.harness import build_processing_trace  # noqa: E402
from app.db.session import init_db  # noqa: E402
from app.routes.routing import resolve_model, route_record_file  # noqa: E402
from app.routes.runs import get_history, get_run  # noqa: E402
from app.utils.errors import QueeError  # noqa: E402
from app.utils.logging import configure_logging, stage_logger  # noqa: E402

UPLOAD_DIR = Path("output/uploads")

log = stage_logger("api")

app = FastAPI(title="QuEE routing service")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.on_event("startup")
async def startup_event():
    init_db()


@app.get("/api/processing-trace")
async def get_processing_trace():
    return {"trace": build_processing_trace()}


@app.get("/api/history")
async def get_history_api(limit: int = 20):
    try:
        return {"items": get_history(limit=limit)}
    except QueeError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


@app.get("/api/runs/{run_id}")
async def get_run_api(run_id: str):
    record = get_run(run_id)
    if not record:
        raise HTTPException(status_code=404, detail="Run not found")
    return record


@app.post("/api/route")
async def route_upload(
    records: UploadFile = File(...),
    model: str = Form(...),
    mode: str = Form("quee"),
    lam: float = Form(0.0),
    threshold: Optional[float] = Form(None),
    fixed_path: Optional[str] = Form(None),
):
    upload_id = secrets.token_hex(8)
    temp_dir = UPLOAD_DIR / f"tmp_{upload_id}"
    temp_dir.mkdir(parents=True, exist_ok=True)
    try:
        records_path = temp_dir / "records.ndjson"
        with records_path.open("wb") as buffer:
            shutil.copyfileobj(records.file, buffer)
        return route_record_file(records_path, resolve_model(model), mode, lam, threshold, fixed_path)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc))
    except QueeError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except Exception as exc:
        log.exception("routing failed")
        raise HTTPException(status_code=500, detail=f"Routing failed: {exc}")
    finally:
        shutil.rmtree(temp_dir, ignore_errors=True)


if __name__ == "__main__":
    configure_logging()
    port = int(os.environ.get("PORT", 8010))
    log.info("QuEE routing service on http://localhost:{}", port)
    uvicorn.run(app, host="0.0.0.0", port=port)
