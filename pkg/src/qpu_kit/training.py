"""Optimizers, the training loop and scenario evaluation."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qpu_kit.cubeedge import CubeEdgeDataset, CubeEdgeSplit, featurize_vertices
from qpu_kit.errors import ConfigError, ContractViolation
from qpu_kit.models import ModelGraph, build_model, save_checkpoint
from qpu_kit.observer import NullObserver, TrainingObserver, notify
from qpu_kit.quaternion import Array, random_unit, rotate_vector
from qpu_kit.schemas import (
    EpochRecord,
    EvalReport,
    ModelConfig,
    Scenario,
    TrainConfig,
)

logger = logging.getLogger(__name__)

GRAD_SHARD = 8
EVAL_CHUNK = 256
SWEEP_SIGMAS = (0.0, 0.02, 0.04)


# ─── Optimizers ──────────────────────────────────────────────


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: OptimizerState,
    config: TrainConfig,
) -> OptimizerState:
    """Update ``params`` in place with SGD or bias-corrected Adam."""
    for key, g in grads.items():
        if key not in params:
            raise ContractViolation(f"gradient for unknown parameter {key!r}")
        if params[key].shape != g.shape:
            raise ContractViolation(
                f"{key}: parameter {params[key].shape} vs gradient {g.shape}"
            )
    lr = config.learning_rate
    state.step += 1
    if config.optimizer == "sgd":
        for key, g in grads.items():
            params[key] -= lr * g
        return state

    beta1, beta2, eps = config.adam.beta1, config.adam.beta2, config.adam.eps
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for key, g in grads.items():
        m = state.m.setdefault(key, np.zeros_like(g))
        v = state.v.setdefault(key, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ─── Training ────────────────────────────────────────────────


@dataclass
class TrainResult:
    model: ModelGraph
    history: list[float]
    records: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def smoothed_history(self) -> list[float]:
        """Running minimum of ``history``: the best loss reached by each epoch."""
        return np.minimum.accumulate(np.asarray(self.history, dtype=np.float64)).tolist()


def model_config_for(train_config: TrainConfig, dataset: CubeEdgeDataset) -> ModelConfig:
    return ModelConfig(
        kind=train_config.model,
        bridge=train_config.bridge,
        tape_mode=train_config.tape_mode,
        n_inputs=dataset.config.n_features,
        n_classes=dataset.config.n_classes,
    )


def _check_compatible(model_config: ModelConfig, dataset: CubeEdgeDataset) -> None:
    if model_config.n_inputs != dataset.config.n_features:
        raise ConfigError(
            f"model expects {model_config.n_inputs} feature quaternions, "
            f"dataset has {dataset.config.n_features}"
        )
    if model_config.n_classes != dataset.config.n_classes:
        raise ConfigError(
            f"model has {model_config.n_classes} classes, "
            f"dataset has {dataset.config.n_classes}"
        )


def _batch_grads(
    model: ModelGraph, x: Array, y: np.ndarray, pool: ThreadPoolExecutor | None
) -> tuple[float, dict[str, Array]]:
    """Mean loss and gradients over a batch, summed shard by shard in order."""
    bounds = [(i, min(i + GRAD_SHARD, len(y))) for i in range(0, len(y), GRAD_SHARD)]

    def run(span: tuple[int, int]) -> tuple[float, dict[str, Array]]:
        lo, hi = span
        return model.loss_and_grads(x[lo:hi], y[lo:hi])

    parts = list(pool.map(run, bounds)) if pool is not None else [run(b) for b in bounds]
    total_loss = 0.0
    total: dict[str, Array] = {}
    for loss, grads in parts:
        total_loss += loss
        for key, g in grads.items():
            if key in total:
                total[key] = total[key] + g
            else:
                total[key] = g
    n = float(len(y))
    return total_loss / n, {key: g / n for key, g in total.items()}


def mean_loss(model: ModelGraph, split: CubeEdgeSplit) -> float:
    if len(split) == 0:
        return 0.0
    total = 0.0
    for lo in range(0, len(split), EVAL_CHUNK):
        total += model.loss(split.features[lo : lo + EVAL_CHUNK], split.labels[lo : lo + EVAL_CHUNK])
    return total / len(split)


def train(
    model_config: ModelConfig,
    dataset: CubeEdgeDataset,
    train_config: TrainConfig,
    observer: TrainingObserver | None = None,
    run_id: int = 0,
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Mini-batch training on ``dataset.train``.

    ``history[0]`` is the loss of the initial model and ``history[k]`` the
    full-pass training loss after epoch ``k``. Results depend only on the
    configs and seeds, never on ``train_config.threads``.
    """
    observer = observer or NullObserver()
    _check_compatible(model_config, dataset)
    init_seed, shuffle_seed, eval_seed = np.random.SeedSequence(train_config.seed).spawn(3)
    model = build_model(model_config, np.random.default_rng(init_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    eval_base = int(eval_seed.generate_state(1)[0])
    params = model.parameters()
    state = OptimizerState()

    split = dataset.train
    history = [mean_loss(model, split)]
    best = history[0]
    result = TrainResult(model=model, history=history)
    logger.info(
        "Training %s: %d samples, %d epochs, %s lr=%g batch=%d, %d parameters",
        model_config.kind.value,
        len(split),
        train_config.epochs,
        train_config.optimizer,
        train_config.learning_rate,
        train_config.batch_size,
        model.num_parameters(),
    )

    pool = (
        ThreadPoolExecutor(max_workers=train_config.threads)
        if train_config.threads > 1
        else None
    )
    try:
        for epoch in range(1, train_config.epochs + 1):
            started = time.perf_counter()
            order = shuffle_rng.permutation(len(split))
            for lo in range(0, len(order), train_config.batch_size):
                idx = order[lo : lo + train_config.batch_size]
                _, grads = _batch_grads(model, split.features[idx], split.labels[idx], pool)
                optimizer_step(params, grads, state, train_config)

            loss = mean_loss(model, split)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training loss became {loss} at epoch {epoch}")
            history.append(loss)
            best = min(best, loss)

            accuracy = None
            if train_config.eval_every and epoch % train_config.eval_every == 0:
                accuracy = {
                    scenario: evaluate(model, dataset.test, scenario, seed=eval_base).accuracy
                    for scenario in Scenario
                }
            record = EpochRecord(
                epoch=epoch,
                train_loss=loss,
                best_loss=best,
                accuracy=accuracy,
                seconds=time.perf_counter() - started,
            )
            result.records.append(record)
            logger.info(
                "Epoch %d/%d: loss=%.4f best=%.4f accuracy=%s",
                epoch,
                train_config.epochs,
                loss,
                best,
                accuracy,
            )
            notify(observer, "on_epoch", run_id, record)

            final = epoch == train_config.epochs
            every = train_config.checkpoint_every
            if run_dir is not None and (final or (every and epoch % every == 0)):
                path = save_checkpoint(model, Path(run_dir) / f"epoch_{epoch}.npz", epoch)
                result.checkpoints.append(path)
                notify(observer, "on_checkpoint", run_id, str(path))
    finally:
        if pool is not None:
            pool.shutdown()

    return result


# ─── Evaluation ──────────────────────────────────────────────


def scenario_features(
    split: CubeEdgeSplit, scenario: Scenario, seed: int = 0
) -> Array:
    """Features as seen in ``scenario``; arbitrary rotation draws one rotation per sample."""
    if scenario is Scenario.NO_ROTATION or len(split) == 0:
        return split.features
    rng = np.random.default_rng(seed)
    rotations = random_unit(rng, (len(split),), canonical=True)
    rotated = rotate_vector(rotations[:, None, :], split.vertices)
    return featurize_vertices(rotated)


def evaluate(
    model: ModelGraph,
    split: CubeEdgeSplit,
    scenario: Scenario,
    seed: int = 0,
    sigma: float = 0.0,
) -> EvalReport:
    """Accuracy and per-class accuracy of ``model`` on ``split`` under ``scenario``."""
    features = scenario_features(split, scenario, seed)
    n_classes = model.config.n_classes
    if len(split) == 0:
        return EvalReport(
            accuracy=0.0, scenario=scenario, sigma=sigma, model=model.config.kind
        )
    predictions = np.concatenate(
        [
            np.argmax(model.predict(features[lo : lo + EVAL_CHUNK]), axis=-1)
            for lo in range(0, len(split), EVAL_CHUNK)
        ]
    )
    correct = predictions == split.labels
    per_class = {
        int(c): float(correct[split.labels == c].mean())
        for c in range(n_classes)
        if np.any(split.labels == c)
    }
    report = EvalReport(
        accuracy=float(correct.mean()),
        per_class=per_class,
        scenario=scenario,
        sigma=sigma,
        n_samples=len(split),
        model=model.config.kind,
    )
    logger.info(
        "Evaluated %s (%s, sigma=%g): accuracy=%.4f",
        model.config.kind.value,
        scenario.value,
        sigma,
        report.accuracy,
    )
    return report


def evaluate_sweep(
    model: ModelGraph,
    test_sets: dict[float, CubeEdgeSplit],
    seed: int = 0,
    scenarios: Sequence[Scenario] = tuple(Scenario),
) -> list[EvalReport]:
    """Evaluate one model on test splits generated at different noise levels."""
    return [
        evaluate(model, split, scenario, seed=seed, sigma=sigma)
        for sigma, split in sorted(test_sets.items())
        for scenario in scenarios
    ]
