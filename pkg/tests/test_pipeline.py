"""Tests for the training and noise-sweep flows, run without a Prefect server."""

import json

import pytest

from qpu_kit import pipeline
from qpu_kit.cubeedge import DATASET_FILENAME, generate_dataset, save_dataset
from qpu_kit.db import get_run, init_db, list_runs
from qpu_kit.observer import METRICS_FILENAME
from qpu_kit.schemas import (
    ExperimentReport,
    GenConfig,
    ModelKind,
    RunConfig,
    Scenario,
    TrainConfig,
    TrainingReport,
)


@pytest.fixture(autouse=True)
def plain_tasks(monkeypatch):
    """Call the task bodies directly so no flow or task runs are created."""
    tasks = (
        "generate_cubeedge",
        "load_cubeedge",
        "train_model",
        "evaluate_model",
        "sweep_model",
    )
    for name in tasks:
        monkeypatch.setattr(pipeline, name, getattr(pipeline, name).fn)


@pytest.fixture()
def conn():
    c = init_db(":memory:")
    yield c
    c.close()


def _config(tmp_path, **train):
    return RunConfig(
        data=GenConfig(n_edges=4, n_train=16, n_test=8, seed=2),
        train=TrainConfig(**{"epochs": 1, "threads": 1, "model": ModelKind.RMLP, **train}),
        out=str(tmp_path),
    )


def test_make_run_dir_is_unique(tmp_path):
    first = pipeline.make_run_dir(str(tmp_path))
    second = pipeline.make_run_dir(str(tmp_path))
    assert first != second
    assert first.parent == second.parent == tmp_path / "runs"


def test_training_pipeline_writes_report(tmp_path, conn):
    report_path = pipeline.training_pipeline.fn(_config(tmp_path), conn=conn)

    report = TrainingReport.model_validate_json(open(report_path, encoding="utf-8").read())
    assert len(report.history) == 2
    assert report.smoothed_history == [min(report.history[: k + 1]) for k in range(2)]
    assert {e.scenario for e in report.evaluations} == set(Scenario)

    run_dir = tmp_path / "runs" / next(p.name for p in (tmp_path / "runs").iterdir())
    for name in ("config.json", "report.json", METRICS_FILENAME, "epoch_1.npz", DATASET_FILENAME):
        assert (run_dir / name).is_file(), name
    assert json.loads((run_dir / "config.json").read_text())["train"]["model"] == "rmlp"

    run = get_run(conn, report.run_id)
    assert run["status"] == "complete"
    assert run["report_path"] == report_path
    assert len(run["epochs"]) == 1
    assert len(run["evaluations"]) == 2


def test_training_pipeline_uses_stored_dataset(tmp_path, conn):
    stored = save_dataset(
        generate_dataset(GenConfig(n_edges=4, n_train=12, n_test=6, seed=9)), tmp_path / "data"
    )
    cfg = _config(tmp_path / "out").model_copy(update={"data_path": str(stored)})
    report_path = pipeline.training_pipeline.fn(cfg, conn=conn)
    report = TrainingReport.model_validate_json(open(report_path, encoding="utf-8").read())
    assert all(e.n_samples == 6 for e in report.evaluations)
    assert not list((tmp_path / "out" / "runs").glob(f"*/{DATASET_FILENAME}"))


def test_failed_training_marks_run_failed(tmp_path, conn, monkeypatch):
    def boom(*args, **kwargs):
        raise FloatingPointError("training loss became nan at epoch 1")

    monkeypatch.setattr(pipeline, "train_model", boom)
    with pytest.raises(FloatingPointError):
        pipeline.training_pipeline.fn(_config(tmp_path), conn=conn)
    (run,) = list_runs(conn)
    assert run["status"] == "failed"
    assert "nan" in run["error"]


def test_experiment_pipeline(tmp_path, conn):
    cfg = _config(tmp_path)
    path = pipeline.experiment_pipeline.fn(
        cfg, models=(ModelKind.RMLP, ModelKind.QMLP_RINV), sigmas=(0.0, 0.04), conn=conn
    )
    report = ExperimentReport.model_validate_json(open(path, encoding="utf-8").read())
    assert report.sigmas == [0.0, 0.04]
    assert set(report.histories) == {ModelKind.RMLP, ModelKind.QMLP_RINV}
    assert len(report.evaluations) == 2 * 2 * 2
    assert {(e.model, e.sigma) for e in report.evaluations} == {
        (m, s) for m in (ModelKind.RMLP, ModelKind.QMLP_RINV) for s in (0.0, 0.04)
    }
    assert all(e.n_samples == 8 for e in report.evaluations)
    order = [(e.model, e.sigma, e.scenario) for e in report.evaluations]
    assert order == [
        (m, s, sc)
        for m in (ModelKind.RMLP, ModelKind.QMLP_RINV)
        for s in (0.0, 0.04)
        for sc in Scenario
    ]
    assert sorted(r["model"] for r in list_runs(conn)) == ["qmlp_rinv", "rmlp"]
