from __future__ import annotations

import json
import uuid
from datetime import datetime, timezone
from typing import Dict, List, Mapping

from app.db import session


def store_experiment_run(
    command: str,
    config_hash: str,
    topology_hash: str,
    num_paths: int,
    summary: Mapping[str, object],
    run_id: str | None = None,
) -> str:
    run_id = run_id or uuid.uuid4().hex
    session.init_db()
    with session.get_connection() as conn:
        conn.execute(
            """
            INSERT INTO experiment_runs(id, created_at, command, config_hash, topology_hash, num_paths, summary_json)
            VALUES (?, ?, ?, ?, ?, ?, ?)
            """,
            (
                run_id,
                datetime.now(timezone.utc).isoformat(),
                command,
                config_hash,
                topology_hash,
                num_paths,
                json.dumps(summary),
            ),
        )
        conn.commit()
    return run_id


def list_experiment_runs(limit: int = 20) -> List[Dict[str, object]]:
    session.init_db()
    with session.get_connection() as conn:
        rows = conn.execute(
            "SELECT id, created_at, command, config_hash, num_paths FROM experiment_runs ORDER BY created_at DESC LIMIT ?",
            (limit,),
        ).fetchall()
    return [dict(row) for row in rows]


def get_experiment_run(run_id: str) -> Dict[str, object] | None:
    session.init_db()
    with session.get_connection() as conn:
        row = conn.execute("SELECT * FROM experiment_runs WHERE id = ?", (run_id,)).fetchone()
    if row is None:
        return None
    out = dict(row)
    out["summary"] = json.loads(out.pop("summary_json"))
    return out
