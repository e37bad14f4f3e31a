from __future__ import annotations

import os
import sqlite3
from pathlib import Path

DB_PATH = Path(os.environ.get("QUEE_DB_PATH", "output/quee_runs.db"))


def get_connection() -> sqlite3.Connection:
    DB_PATH.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(DB_PATH)
    conn.row_factory = sqlite3.Row
    return conn


def init_db() -> None:
    with get_connection() as conn:
        conn.execute(
            """
            CREATE TABLE IF NOT EXISTS experiment_runs (
                id TEXT PRIMARY KEY,
                created_at TEXT NOT NULL,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                topology_hash TEXT NOT NULL,
                num_paths INTEGER NOT NULL,
                summary_json TEXT NOT NULL
            )
            """
        )
        conn.commit()
