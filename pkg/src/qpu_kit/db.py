"""SQLite run registry: runs, per-epoch metrics and evaluation reports."""

from __future__ import annotations

import json
import logging
import sqlite3
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path
from typing import TYPE_CHECKING

logger = logging.getLogger(__name__)

if TYPE_CHECKING:
    from qpu_kit.schemas import EpochRecord, EvalReport

DB_FILENAME = "qpu_kit.db"
DEFAULT_DB_PATH = f"output/{DB_FILENAME}"

_SCHEMA = """\
CREATE TABLE IF NOT EXISTS runs (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    model        TEXT NOT NULL,
    config_json  TEXT NOT NULL,
    run_dir      TEXT,
    status       TEXT NOT NULL DEFAULT 'pending',
    error        TEXT,
    report_path  TEXT,
    started_at   TEXT NOT NULL,
    completed_at TEXT
);

CREATE TABLE IF NOT EXISTS epochs (
    id            INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id        INTEGER NOT NULL REFERENCES runs(id),
    epoch         INTEGER NOT NULL,
    train_loss    REAL NOT NULL,
    best_loss     REAL NOT NULL,
    accuracy_json TEXT,
    seconds       REAL NOT NULL
);

CREATE TABLE IF NOT EXISTS evaluations (
    id             INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id         INTEGER NOT NULL REFERENCES runs(id),
    scenario       TEXT NOT NULL,
    sigma          REAL NOT NULL,
    accuracy       REAL NOT NULL,
    n_samples      INTEGER NOT NULL,
    per_class_json TEXT NOT NULL
);
"""


def _now() -> str:
    return datetime.now(UTC).isoformat()


def init_db(db_path: str = DEFAULT_DB_PATH) -> sqlite3.Connection:
    """Create tables if they don't exist and enable WAL mode."""
    logger.info("Initialising database at %s", db_path)
    if db_path != ":memory:":
        Path(db_path).parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db_path, check_same_thread=False)
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA journal_mode=WAL")
    conn.executescript(_SCHEMA)
    conn.commit()
    return conn


# ─── Runs ─────────────────────────────────────────────────────


def insert_run(
    conn: sqlite3.Connection, model: str, config_json: str, run_dir: str | None = None
) -> int:
    cur = conn.execute(
        "INSERT INTO runs (model, config_json, run_dir, status, started_at) "
        "VALUES (?, ?, ?, 'running', ?)",
        (model, config_json, run_dir, _now()),
    )
    conn.commit()
    run_id = cur.lastrowid
    logger.info("Inserted run id=%d, model=%s", run_id, model)
    return run_id  # type: ignore[return-value]


def update_run(conn: sqlite3.Connection, run_id: int, **fields: object) -> None:
    """Partial update on the runs table; unknown columns are ignored."""
    allowed = {"status", "error", "report_path", "completed_at", "run_dir"}
    cols = [k for k in fields if k in allowed]
    if not cols:
        return
    set_clause = ", ".join(f"{c} = ?" for c in cols)
    vals = [fields[c] for c in cols]
    conn.execute(f"UPDATE runs SET {set_clause} WHERE id = ?", vals + [run_id])
    conn.commit()
    logger.debug("Updated run %d: %s", run_id, {c: fields[c] for c in cols})


def finish_run(
    conn: sqlite3.Connection,
    run_id: int,
    status: str,
    report_path: str | None = None,
    error: str | None = None,
) -> None:
    update_run(
        conn,
        run_id,
        status=status,
        report_path=report_path,
        error=error,
        completed_at=_now(),
    )


# ─── Metrics ─────────────────────────────────────────────────


def insert_epoch(conn: sqlite3.Connection, run_id: int, record: EpochRecord) -> None:
    accuracy = (
        json.dumps({str(k): v for k, v in record.accuracy.items()})
        if record.accuracy is not None
        else None
    )
    conn.execute(
        "INSERT INTO epochs (run_id, epoch, train_loss, best_loss, accuracy_json, seconds) "
        "VALUES (?, ?, ?, ?, ?, ?)",
        (run_id, record.epoch, record.train_loss, record.best_loss, accuracy, record.seconds),
    )
    conn.commit()


def insert_evaluation(conn: sqlite3.Connection, run_id: int, report: EvalReport) -> None:
    conn.execute(
        "INSERT INTO evaluations "
        "(run_id, scenario, sigma, accuracy, n_samples, per_class_json) "
        "VALUES (?, ?, ?, ?, ?, ?)",
        (
            run_id,
            str(report.scenario),
            report.sigma,
            report.accuracy,
            report.n_samples,
            json.dumps(report.per_class),
        ),
    )
    conn.commit()


# ─── Queries ─────────────────────────────────────────────────


def list_runs(conn: sqlite3.Connection) -> list[dict]:
    rows = conn.execute("SELECT * FROM runs ORDER BY id DESC").fetchall()
    return [dict(r) for r in rows]


def get_run(conn: sqlite3.Connection, run_id: int) -> dict | None:
    """Run row with its ``epochs`` and ``evaluations`` attached, or None."""
    row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
    if row is None:
        return None
    run = dict(row)
    run["epochs"] = [
        dict(r)
        for r in conn.execute(
            "SELECT * FROM epochs WHERE run_id = ? ORDER BY epoch", (run_id,)
        ).fetchall()
    ]
    run["evaluations"] = [
        dict(r)
        for r in conn.execute(
            "SELECT * FROM evaluations WHERE run_id = ? ORDER BY id", (run_id,)
        ).fetchall()
    ]
    return run
