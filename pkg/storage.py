"""sqlite ledger of runs and completed sweep points, kept at <out>/ledger.db."""
from __future__ import annotations

import json
import logging
import sqlite3
from datetime import datetime, timezone
from pathlib import Path

log = logging.getLogger(__name__)

LEDGER_NAME = "ledger.db"


def ledger_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / LEDGER_NAME


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def init_db(db: str | Path) -> Path:
    db = Path(db)
    db.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db)
    try:
        cur = conn.cursor()
        cur.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            ts TEXT NOT NULL,
            name TEXT NOT NULL,
            task TEXT NOT NULL,
            config_hash TEXT NOT NULL,
            status TEXT NOT NULL,
            manifest TEXT
        )
        """)
        cur.execute("""
        CREATE TABLE IF NOT EXISTS sweep_points (
            config_hash TEXT NOT NULL,
            idx INTEGER NOT NULL,
            parameter TEXT NOT NULL,
            value REAL NOT NULL,
            row_json TEXT NOT NULL,
            ts TEXT NOT NULL
        )
        """)
        cur.execute("""
        CREATE UNIQUE INDEX IF NOT EXISTS idx_sweep_points_unique
        ON sweep_points(config_hash, idx)
        """)
        conn.commit()
    finally:
        conn.close()
    return db


def record_run(db: str | Path, name: str, task: str, config_hash: str, status: str,
               manifest: dict | None = None) -> int:
    conn = sqlite3.connect(db)
    try:
        cur = conn.cursor()
        cur.execute(
            "INSERT INTO runs(ts, name, task, config_hash, status, manifest) VALUES(?,?,?,?,?,?)",
            (_utc_now(), name, task, config_hash, status,
             None if manifest is None else json.dumps(manifest, sort_keys=True, default=str)),
        )
        conn.commit()
        return 1 if cur.rowcount == 1 else 0
    finally:
        conn.close()


def save_point(db: str | Path, config_hash: str, idx: int, parameter: str, value: float, row: dict) -> int:
    """1 if inserted, 0 if the point was already in the ledger."""
    conn = sqlite3.connect(db)
    try:
        cur = conn.cursor()
        cur.execute(
            """INSERT OR IGNORE INTO sweep_points(config_hash, idx, parameter, value, row_json, ts)
               VALUES(?,?,?,?,?,?)""",
            (config_hash, int(idx), parameter, float(value), json.dumps(row, sort_keys=True), _utc_now()),
        )
        conn.commit()
        return 1 if cur.rowcount == 1 else 0
    finally:
        conn.close()


def completed_points(db: str | Path, config_hash: str) -> dict[int, dict]:
    if not Path(db).exists():
        return {}
    conn = sqlite3.connect(db)
    try:
        rows = conn.execute(
            "SELECT idx, row_json FROM sweep_points WHERE config_hash = ? ORDER BY idx", (config_hash,)
        ).fetchall()
    finally:
        conn.close()
    return {int(idx): json.loads(blob) for idx, blob in rows}


def recent_runs(db: str | Path, limit: int = 20) -> list[dict]:
    conn = sqlite3.connect(db)
    try:
        rows = conn.execute(
            "SELECT id, ts, name, task, config_hash, status FROM runs ORDER BY id DESC LIMIT ?", (limit,)
        ).fetchall()
    finally:
        conn.close()
    keys = ("id", "ts", "name", "task", "config_hash", "status")
    return [dict(zip(keys, r)) for r in rows]
