"""Training step."""

from __future__ import annotations

import logging

from prefect import task
from prefect.cache_policies import NO_CACHE

from qpu_kit.cubeedge import CubeEdgeDataset
from qpu_kit.observer import TrainingObserver
from qpu_kit.schemas import ModelConfig, TrainConfig
from qpu_kit.training import TrainResult, train

logger = logging.getLogger(__name__)


@task(name="train-model", cache_policy=NO_CACHE)
def train_model(
    model_config: ModelConfig,
    dataset: CubeEdgeDataset,
    train_config: TrainConfig,
    observer: TrainingObserver | None = None,
    run_id: int = 0,
    run_dir: str | None = None,
) -> TrainResult:
    result = train(model_config, dataset, train_config, observer, run_id, run_dir)
    logger.info(
        "Trained %s: loss %.4f -> %.4f over %d epochs",
        model_config.kind.value,
        result.history[0],
        result.history[-1],
        len(result.history) - 1,
    )
    return result
