"""Tests for the optimizers, the training loop and scenario evaluation."""

import numpy as np
import pytest

from qpu_kit.cubeedge import generate_dataset
from qpu_kit.errors import ConfigError, ContractViolation
from qpu_kit.models import build_model, load_checkpoint
from qpu_kit.quaternion import is_unit
from qpu_kit.schemas import GenConfig, ModelConfig, ModelKind, Scenario, TrainConfig
from qpu_kit.training import (
    OptimizerState,
    evaluate,
    evaluate_sweep,
    mean_loss,
    model_config_for,
    optimizer_step,
    scenario_features,
    train,
)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GenConfig(n_edges=4, n_train=48, n_test=24, seed=5))


def _model_config(kind=ModelKind.QMLP, **kwargs):
    return ModelConfig(kind=kind, n_inputs=3, n_classes=4, hidden=[6, 8], **kwargs)


def _train_config(**kwargs):
    defaults = {"epochs": 2, "batch_size": 16, "learning_rate": 1e-2, "threads": 1, "eval_every": 0}
    return TrainConfig(**{**defaults, **kwargs})


class RecordingObserver:
    def __init__(self):
        self.epochs = []
        self.checkpoints = []

    def on_epoch(self, run_id, record):
        self.epochs.append(record)

    def on_checkpoint(self, run_id, path):
        self.checkpoints.append(path)


# ─── Optimizers ─────────────────────────────────────────────


def test_sgd_step():
    params = {"w": np.array([1.0])}
    optimizer_step(params, {"w": np.array([1.0])}, OptimizerState(), _train_config(optimizer="sgd", learning_rate=0.1))
    np.testing.assert_allclose(params["w"], [0.9])


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_gradient_leaves_params(optimizer):
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState()
    for _ in range(3):
        optimizer_step(params, {"w": np.zeros(2)}, state, _train_config(optimizer=optimizer))
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step == 3


def test_adam_minimizes_a_quadratic():
    params = {"x": np.array([0.0, 10.0, -4.0])}
    target = np.array([3.0, 3.0, 3.0])
    state = OptimizerState()
    config = _train_config(optimizer="adam", learning_rate=0.1)
    for _ in range(2000):
        optimizer_step(params, {"x": params["x"] - target}, state, config)
    np.testing.assert_allclose(params["x"], target, atol=0.05)


def test_first_adam_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, 1.0])}
    optimizer_step(params, {"w": np.array([5.0, -0.01])}, OptimizerState(), _train_config(learning_rate=0.1))
    np.testing.assert_allclose(params["w"], [0.9, 1.1], atol=1e-5)


def test_gradient_shape_mismatch():
    with pytest.raises(ContractViolation):
        optimizer_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimizerState(), _train_config())


def test_unknown_gradient_key():
    with pytest.raises(ContractViolation):
        optimizer_step({"w": np.zeros(3)}, {"v": np.zeros(3)}, OptimizerState(), _train_config())


# ─── Training loop ──────────────────────────────────────────


def test_zero_epochs_returns_initial_model(dataset):
    result = train(_model_config(), dataset, _train_config(epochs=0))
    assert len(result.history) == 1
    assert result.records == [] and result.checkpoints == []
    initial = build_model(_model_config(), np.random.default_rng(np.random.SeedSequence(0).spawn(3)[0]))
    for key, value in initial.parameters().items():
        np.testing.assert_array_equal(result.model.parameters()[key], value)


def test_history_starts_with_initial_loss(dataset):
    result = train(_model_config(), dataset, _train_config(epochs=0))
    assert result.history[0] == pytest.approx(mean_loss(result.model, dataset.train))


def test_loss_decreases(dataset):
    result = train(_model_config(), dataset, _train_config(epochs=6))
    assert len(result.history) == 7
    assert result.history[-1] < result.history[0]
    assert result.records[-1].best_loss == min(result.history)
    smoothed = result.smoothed_history
    assert smoothed == [result.history[0]] + [r.best_loss for r in result.records]
    assert all(later <= earlier for earlier, later in zip(smoothed, smoothed[1:]))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_first_epoch_lowers_loss(dataset, kind):
    config = _train_config(epochs=1, batch_size=48, learning_rate=1e-3)
    result = train(_model_config(kind), dataset, config)
    assert result.history[1] < result.history[0]


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
@pytest.mark.parametrize("kind", list(ModelKind))
def test_single_step_does_not_raise_batch_loss(dataset, kind, optimizer):
    model = build_model(_model_config(kind), np.random.default_rng(0))
    x, y = dataset.train.features[:16], dataset.train.labels[:16]
    before, grads = model.loss_and_grads(x, y)
    config = _train_config(optimizer=optimizer, learning_rate=1e-3)
    optimizer_step(model.parameters(), grads, OptimizerState(), config)
    assert model.loss(x, y) <= before


@pytest.mark.parametrize("kind", list(ModelKind))
def test_training_is_thread_independent(dataset, kind):
    one = train(_model_config(kind), dataset, _train_config(threads=1))
    four = train(_model_config(kind), dataset, _train_config(threads=4))
    assert one.history == four.history
    for key, value in one.model.parameters().items():
        np.testing.assert_array_equal(four.model.parameters()[key], value)


def test_mismatched_dataset_is_rejected(dataset):
    with pytest.raises(ConfigError):
        train(ModelConfig(n_inputs=5, n_classes=4), dataset, _train_config())


def test_model_config_follows_dataset(dataset):
    config = model_config_for(TrainConfig(model=ModelKind.RMLP), dataset)
    assert config.n_inputs == 3 and config.n_classes == 4
    assert config.kind is ModelKind.RMLP


def test_observer_and_checkpoints(dataset, tmp_path):
    observer = RecordingObserver()
    result = train(
        _model_config(),
        dataset,
        _train_config(epochs=3, checkpoint_every=2, eval_every=1),
        observer=observer,
        run_dir=tmp_path,
    )
    assert [r.epoch for r in observer.epochs] == [1, 2, 3]
    assert set(observer.epochs[0].accuracy) == set(Scenario)
    assert [p.name for p in result.checkpoints] == ["epoch_2.npz", "epoch_3.npz"]
    assert observer.checkpoints == [str(p) for p in result.checkpoints]

    model, header = load_checkpoint(result.checkpoints[-1])
    assert header.epoch == 3
    for key, value in result.model.parameters().items():
        np.testing.assert_array_equal(model.parameters()[key], value)


def test_broken_observer_does_not_stop_training(dataset):
    class Broken:
        def on_epoch(self, run_id, record):
            raise RuntimeError("observer down")

    result = train(_model_config(), dataset, _train_config(epochs=1), observer=Broken())
    assert len(result.history) == 2


# ─── Evaluation ─────────────────────────────────────────────


def test_no_rotation_uses_stored_features(dataset):
    assert scenario_features(dataset.test, Scenario.NO_ROTATION) is dataset.test.features


def test_arbitrary_rotation_refeaturizes(dataset):
    features = scenario_features(dataset.test, Scenario.ARBITRARY_ROTATION, seed=3)
    assert features.shape == dataset.test.features.shape
    assert is_unit(features)
    assert not np.allclose(features, dataset.test.features)
    np.testing.assert_allclose(features[..., 0], dataset.test.features[..., 0], atol=1e-12)


def test_evaluation_is_deterministic(dataset):
    model = build_model(_model_config(), seed=1)
    a = evaluate(model, dataset.test, Scenario.ARBITRARY_ROTATION, seed=9)
    b = evaluate(model, dataset.test, Scenario.ARBITRARY_ROTATION, seed=9)
    assert a == b
    assert a.n_samples == 24
    assert 0.0 <= a.accuracy <= 1.0
    assert set(a.per_class) <= set(range(4))


def test_untrained_invariant_model_ignores_rotation(dataset):
    model = build_model(_model_config(ModelKind.QMLP_RINV), seed=4)
    plain = evaluate(model, dataset.test, Scenario.NO_ROTATION)
    rotated = evaluate(model, dataset.test, Scenario.ARBITRARY_ROTATION, seed=2)
    assert plain.accuracy == rotated.accuracy


def test_sweep_order(dataset):
    model = build_model(_model_config(), seed=0)
    reports = evaluate_sweep(model, {0.04: dataset.test, 0.0: dataset.test})
    assert [(r.sigma, r.scenario) for r in reports] == [
        (0.0, Scenario.NO_ROTATION),
        (0.0, Scenario.ARBITRARY_ROTATION),
        (0.04, Scenario.NO_ROTATION),
        (0.04, Scenario.ARBITRARY_ROTATION),
    ]
