"""Training observer protocol and implementations."""

from __future__ import annotations

import json
import logging
import sqlite3
from pathlib import Path
from typing import Protocol, runtime_checkable

from qpu_kit.db import finish_run, insert_epoch, insert_evaluation, insert_run
from qpu_kit.schemas import EpochRecord, EvalReport

logger = logging.getLogger(__name__)

METRICS_FILENAME = "metrics.jsonl"


@runtime_checkable
class TrainingObserver(Protocol):
    """Receives progress from training and evaluation runs."""

    def on_run_start(self, model: str, config_json: str) -> int:
        """Called when a run begins. Returns a run_id."""
        ...

    def on_epoch(self, run_id: int, record: EpochRecord) -> None: ...

    def on_checkpoint(self, run_id: int, path: str) -> None: ...

    def on_evaluation(self, run_id: int, report: EvalReport) -> None: ...

    def on_complete(self, run_id: int, report_path: str) -> None: ...

    def on_error(self, run_id: int, error: str) -> None: ...


def notify(observer: TrainingObserver, method: str, *args: object) -> None:
    """Fire-and-forget observer call; a failing observer never stops a run."""
    try:
        logger.debug("Notifying observer: %s", method)
        getattr(observer, method)(*args)
    except Exception:
        logger.warning("Observer.%s failed", method, exc_info=True)


class NullObserver:
    def on_run_start(self, model: str, config_json: str) -> int:
        return 0

    def on_epoch(self, run_id: int, record: EpochRecord) -> None:
        pass

    def on_checkpoint(self, run_id: int, path: str) -> None:
        pass

    def on_evaluation(self, run_id: int, report: EvalReport) -> None:
        pass

    def on_complete(self, run_id: int, report_path: str) -> None:
        pass

    def on_error(self, run_id: int, error: str) -> None:
        pass


class RunLogObserver:
    """Appends epoch records to ``metrics.jsonl`` and mirrors runs into SQLite."""

    def __init__(self, run_dir: str | Path, conn: sqlite3.Connection | None = None) -> None:
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.run_dir / METRICS_FILENAME
        self._conn = conn

    def on_run_start(self, model: str, config_json: str) -> int:
        if self._conn is None:
            return 0
        return insert_run(self._conn, model, config_json, str(self.run_dir))

    def on_epoch(self, run_id: int, record: EpochRecord) -> None:
        with self.metrics_path.open("a", encoding="utf-8") as fh:
            fh.write(record.model_dump_json() + "\n")
        if self._conn is not None:
            insert_epoch(self._conn, run_id, record)

    def on_checkpoint(self, run_id: int, path: str) -> None:
        logger.info("Run %d checkpoint: %s", run_id, path)

    def on_evaluation(self, run_id: int, report: EvalReport) -> None:
        if self._conn is not None:
            insert_evaluation(self._conn, run_id, report)

    def on_complete(self, run_id: int, report_path: str) -> None:
        if self._conn is not None:
            finish_run(self._conn, run_id, "complete", report_path=report_path)
        logger.info("Run %d complete: %s", run_id, report_path)

    def on_error(self, run_id: int, error: str) -> None:
        if self._conn is not None:
            finish_run(self._conn, run_id, "failed", error=error)


def read_metrics(path: str | Path) -> list[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EpochRecord.model_validate(json.loads(line)) for line in lines if line.strip()]
