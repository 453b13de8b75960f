"""Unit tests for TrainingObserver implementations."""

from qpu_kit.db import get_run, init_db
from qpu_kit.observer import (
    METRICS_FILENAME,
    NullObserver,
    RunLogObserver,
    TrainingObserver,
    notify,
    read_metrics,
)
from qpu_kit.schemas import EpochRecord, EvalReport, Scenario


def _record(epoch=1):
    return EpochRecord(epoch=epoch, train_loss=1.5 / epoch, best_loss=1.5 / epoch, seconds=0.1)


def _report():
    return EvalReport(accuracy=0.5, scenario=Scenario.NO_ROTATION, sigma=0.0, n_samples=2)


# ─── NullObserver ───────────────────────────────────────────


def test_null_observer_is_a_training_observer():
    assert isinstance(NullObserver(), TrainingObserver)


def test_null_observer_accepts_everything():
    obs = NullObserver()
    assert obs.on_run_start("qmlp", "{}") == 0
    obs.on_epoch(0, _record())
    obs.on_checkpoint(0, "x.npz")
    obs.on_evaluation(0, _report())
    obs.on_complete(0, "report.json")
    obs.on_error(0, "boom")


# ─── notify ─────────────────────────────────────────────────


def test_notify_swallows_observer_errors(caplog):
    class Broken:
        def on_epoch(self, run_id, record):
            raise RuntimeError("disk full")

    notify(Broken(), "on_epoch", 1, _record())
    assert "Observer.on_epoch failed" in caplog.text


def test_notify_forwards_arguments():
    seen = []

    class Recorder:
        def on_checkpoint(self, run_id, path):
            seen.append((run_id, path))

    notify(Recorder(), "on_checkpoint", 7, "epoch_1.npz")
    assert seen == [(7, "epoch_1.npz")]


# ─── RunLogObserver ─────────────────────────────────────────


def test_run_log_without_database(tmp_path):
    obs = RunLogObserver(tmp_path / "run")
    assert obs.on_run_start("qmlp", "{}") == 0
    obs.on_epoch(0, _record(1))
    obs.on_epoch(0, _record(2))
    obs.on_complete(0, "report.json")
    records = read_metrics(tmp_path / "run" / METRICS_FILENAME)
    assert [r.epoch for r in records] == [1, 2]
    assert records[1].train_loss == 0.75


def test_run_log_mirrors_into_database(tmp_path):
    conn = init_db(":memory:")
    obs = RunLogObserver(tmp_path, conn)
    run_id = obs.on_run_start("qmlp_rinv", '{"epochs": 1}')
    obs.on_epoch(run_id, _record())
    obs.on_evaluation(run_id, _report())
    obs.on_complete(run_id, str(tmp_path / "report.json"))

    run = get_run(conn, run_id)
    assert run["status"] == "complete"
    assert run["run_dir"] == str(tmp_path)
    assert len(run["epochs"]) == 1
    assert len(run["evaluations"]) == 1
    conn.close()


def test_run_log_records_failure(tmp_path):
    conn = init_db(":memory:")
    obs = RunLogObserver(tmp_path, conn)
    run_id = obs.on_run_start("rmlp", "{}")
    obs.on_error(run_id, "loss became nan")
    run = get_run(conn, run_id)
    assert run["status"] == "failed"
    assert run["error"] == "loss became nan"
    conn.close()
