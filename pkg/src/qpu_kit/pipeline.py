"""Prefect flows: a single training run and the noise-sweep experiment."""

from __future__ import annotations

import logging
import sqlite3
from collections.abc import Sequence
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path

from prefect import flow

from qpu_kit.cubeedge import CubeEdgeDataset
from qpu_kit.observer import RunLogObserver, TrainingObserver, notify
from qpu_kit.schemas import (
    ExperimentReport,
    ModelKind,
    RunConfig,
    Scenario,
    TrainingReport,
)
from qpu_kit.tasks.data import generate_cubeedge, load_cubeedge
from qpu_kit.tasks.evaluation import evaluate_model, sweep_model
from qpu_kit.tasks.training import train_model
from qpu_kit.training import SWEEP_SIGMAS, model_config_for

logger = logging.getLogger(__name__)


def make_run_dir(out: str) -> Path:
    """``<out>/runs/<UTC timestamp>``; a numeric suffix keeps directories unique."""
    ts = datetime.now(UTC).strftime("%Y%m%dT%H%M%S%fZ")
    run_dir = Path(out) / "runs" / ts
    suffix = 1
    while run_dir.exists():
        run_dir = Path(out) / "runs" / f"{ts}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    logger.info("Run directory: %s", run_dir)
    return run_dir


def _write_json(path: Path, payload: str) -> str:
    path.write_text(payload, encoding="utf-8")
    logger.debug("Wrote %s", path)
    return str(path)


def _dataset(config: RunConfig, run_dir: Path) -> CubeEdgeDataset:
    if config.data_path:
        return load_cubeedge(config.data_path)
    return generate_cubeedge(config.data, threads=config.train.threads, out_dir=str(run_dir))


@flow(name="qpu-training", log_prints=True)
def training_pipeline(
    config: RunConfig,
    observer: TrainingObserver | None = None,
    conn: sqlite3.Connection | None = None,
) -> str:
    """Dataset, training, then evaluation under both scenarios.

    Returns the path of the run's ``report.json``.
    """
    run_dir = make_run_dir(config.out)
    if observer is None:
        observer = RunLogObserver(run_dir, conn)
    _write_json(run_dir / "config.json", config.model_dump_json(indent=2))
    run_id = observer.on_run_start(config.train.model.value, config.model_dump_json())
    logger.info("Run ID assigned: %d", run_id)

    try:
        # ═══ STEP 1: DATASET ═══
        print("=== STEP 1: Dataset ===")
        dataset = _dataset(config, run_dir)

        # ═══ STEP 2: TRAINING ═══
        print(f"=== STEP 2: Training {config.train.model.value} ===")
        model_config = model_config_for(config.train, dataset)
        result = train_model(
            model_config, dataset, config.train, observer, run_id, str(run_dir)
        )

        # ═══ STEP 3: EVALUATION ═══
        print("=== STEP 3: Evaluation ===")
        evaluations = []
        for scenario in Scenario:
            report = evaluate_model(
                result.model,
                dataset.test,
                scenario,
                seed=config.train.seed,
                sigma=dataset.config.sigma,
            )
            evaluations.append(report)
            notify(observer, "on_evaluation", run_id, report)
            print(f"  {scenario.value}: accuracy {report.accuracy:.4f}")

        summary = TrainingReport(
            run_id=run_id,
            config=config,
            history=result.history,
            smoothed_history=result.smoothed_history,
            evaluations=evaluations,
            checkpoints=[str(p) for p in result.checkpoints],
        )
        report_path = _write_json(run_dir / "report.json", summary.model_dump_json(indent=2))
    except Exception as exc:
        logger.exception("Training run %d failed", run_id)
        notify(observer, "on_error", run_id, str(exc))
        raise

    notify(observer, "on_complete", run_id, report_path)
    return report_path


@flow(name="qpu-noise-sweep", log_prints=True)
def experiment_pipeline(
    config: RunConfig,
    models: Sequence[ModelKind] = tuple(ModelKind),
    sigmas: Sequence[float] = SWEEP_SIGMAS,
    conn: sqlite3.Connection | None = None,
) -> str:
    """Train every model once on noise-free data, then test at each sigma.

    Test splits for different sigmas share labels, shears and rotations
    and differ only in vertex noise.
    """
    run_dir = make_run_dir(config.out)
    _write_json(run_dir / "config.json", config.model_dump_json(indent=2))
    base = config.data.model_copy(update={"sigma": 0.0})
    threads = config.train.threads

    # ═══ STEP 1: DATASETS ═══
    print("=== STEP 1: Datasets ===")
    dataset = generate_cubeedge(base, threads=threads)
    test_sets = {
        float(s): generate_cubeedge(
            base.model_copy(update={"sigma": float(s), "n_train": 0}), threads=threads
        ).test
        for s in sigmas
    }

    report = ExperimentReport(config=config, sigmas=[float(s) for s in sigmas])
    for kind in models:
        # ═══ STEP 2: TRAIN + EVALUATE EACH MODEL ═══
        print(f"=== STEP 2: {kind.value} ===")
        bridge = config.train.bridge if kind is ModelKind.QMLP else None
        train_config = config.train.model_copy(update={"model": kind, "bridge": bridge})
        model_dir = run_dir / kind.value
        observer = RunLogObserver(model_dir, conn)
        run_id = observer.on_run_start(kind.value, train_config.model_dump_json())
        try:
            result = train_model(
                model_config_for(train_config, dataset),
                dataset,
                train_config,
                observer,
                run_id,
                str(model_dir),
            )
            for ev in sweep_model(result.model, test_sets, seed=config.train.seed):
                report.evaluations.append(ev)
                notify(observer, "on_evaluation", run_id, ev)
                print(f"  sigma={ev.sigma:g} {ev.scenario.value}: {ev.accuracy:.4f}")
        except Exception as exc:
            notify(observer, "on_error", run_id, str(exc))
            raise
        report.histories[kind] = result.history
        notify(observer, "on_complete", run_id, str(model_dir))

    return _write_json(run_dir / "experiment.json", report.model_dump_json(indent=2))
