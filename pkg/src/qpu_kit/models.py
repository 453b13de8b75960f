"""Model graphs for the CubeEdge classifiers and their checkpoint format."""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from qpu_kit.errors import CheckpointFormatError, ConfigError, ContractViolation
from qpu_kit.layers import (
    BridgeLayer,
    DenseLayer,
    GraphAggregateLayer,
    Layer,
    QpuFcLayer,
    Seed,
    softmax_cross_entropy,
)
from qpu_kit.quaternion import Array
from qpu_kit.schemas import BridgeMode, CheckpointHeader, LayerSpec, ModelConfig, ModelKind

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_HEADER_KEY = "__header__"

DEFAULT_HIDDEN: dict[ModelKind, tuple[int, int]] = {
    ModelKind.RMLP: (128, 256),
    ModelKind.QMLP: (32, 64),
    ModelKind.QMLP_RINV: (32, 256),
}


@dataclass
class ModelGraph:
    """Ordered layers ending in class logits.

    Inputs are ``(batch, n_inputs, 4)`` feature quaternions for every model
    kind; the RMLP starts with a Flatten4 bridge.
    """

    layers: list[Layer]
    config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        specs = [layer.spec for layer in self.layers]
        for i, (a, b) in enumerate(zip(specs, specs[1:])):
            if a.n_out != b.n_in:
                raise ContractViolation(
                    f"layer {i} ({a.kind}) emits {a.n_out} but layer {i + 1} "
                    f"({b.kind}) expects {b.n_in}"
                )

    def forward(self, x: Array) -> tuple[Array, list[Any]]:
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def predict(self, x: Array) -> Array:
        return self.forward(x)[0]

    def backward(
        self, caches: list[Any], grad: Array
    ) -> tuple[Array, dict[str, Array]]:
        grads: dict[str, Array] = {}
        for i in reversed(range(len(self.layers))):
            grad, layer_grads = self.layers[i].backward(caches[i], grad)
            for name, g in layer_grads.items():
                grads[f"{i}.{name}"] = g
        return grad, grads

    def loss_and_grads(self, x: Array, labels: Array) -> tuple[float, dict[str, Array]]:
        """Summed cross-entropy over the batch and its parameter gradients."""
        logits, caches = self.forward(x)
        losses, dlogits = softmax_cross_entropy(logits, labels)
        _, grads = self.backward(caches, dlogits)
        return float(losses.sum()), grads

    def loss(self, x: Array, labels: Array) -> float:
        losses, _ = softmax_cross_entropy(self.predict(x), labels)
        return float(losses.sum())

    def parameters(self) -> dict[str, Array]:
        """Live parameter arrays keyed ``"<layer>.<name>"``; updates write through."""
        return {
            f"{i}.{name}": arr
            for i, layer in enumerate(self.layers)
            for name, arr in layer.params.items()
        }

    def num_parameters(self) -> int:
        return sum(arr.size for arr in self.parameters().values())

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]


def _resolve_bridge(config: ModelConfig) -> BridgeMode:
    allowed = {
        ModelKind.RMLP: {BridgeMode.FLATTEN4},
        ModelKind.QMLP_RINV: {BridgeMode.KEEP_REAL},
        ModelKind.QMLP: set(BridgeMode),
    }[config.kind]
    default = BridgeMode.KEEP_REAL if config.kind is ModelKind.QMLP_RINV else BridgeMode.FLATTEN4
    bridge = config.bridge or default
    if bridge not in allowed:
        raise ConfigError(
            f"model {config.kind.value} cannot use bridge {bridge.value}; "
            f"allowed: {sorted(b.value for b in allowed)}"
        )
    return bridge


def build_model(config: ModelConfig, seed: Seed = 0) -> ModelGraph:
    """Build an RMLP, QMLP or QMLP-RInv with Xavier weights and zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bridge = _resolve_bridge(config)
    h1, h2 = config.hidden or DEFAULT_HIDDEN[config.kind]
    n, c = config.n_inputs, config.n_classes

    layers: list[Layer]
    if config.kind is ModelKind.RMLP:
        layers = [
            BridgeLayer(n_in=n, mode=BridgeMode.FLATTEN4),
            DenseLayer.create(4 * n, h1, rng, rectify=True),
            DenseLayer.create(h1, h2, rng, rectify=True),
            DenseLayer.create(h2, c, rng),
        ]
    else:
        layers = [
            QpuFcLayer.create(n, h1, rng, tape_mode=config.tape_mode),
            QpuFcLayer.create(h1, h2, rng, tape_mode=config.tape_mode),
            BridgeLayer(n_in=h2, mode=bridge),
            DenseLayer.create(h2 * bridge.width, c, rng),
        ]
    model = ModelGraph(layers=layers, config=config.model_copy(update={"bridge": bridge}))
    logger.debug(
        "Built %s (%s): %d parameters", config.kind.value, bridge.value, model.num_parameters()
    )
    return model


# ─── Checkpoints ─────────────────────────────────────────────


def save_checkpoint(model: ModelGraph, path: str | Path, epoch: int = 0) -> Path:
    """Write a ``.npz`` holding a JSON header and one array per parameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = CheckpointHeader(
        format_version=CHECKPOINT_VERSION,
        model=model.config,
        layers=model.specs,
        epoch=epoch,
    )
    payload = np.frombuffer(header.model_dump_json().encode("utf-8"), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez(fh, **{_HEADER_KEY: payload}, **model.parameters())
    logger.info("Checkpoint written: %s (epoch %d)", path, epoch)
    return path


def _layer_from_spec(spec: LayerSpec, params: dict[str, Array]) -> Layer:
    match spec.kind:
        case "qpu_fc":
            return QpuFcLayer(spec.n_in, spec.n_out, params=params, tape_mode=spec.tape_mode)
        case "graph_aggregate":
            return GraphAggregateLayer(spec.n_in, params=params)
        case "bridge":
            if spec.bridge is None:
                raise CheckpointFormatError("bridge layer without a mode")
            return BridgeLayer(spec.n_in, spec.bridge)
        case "dense":
            return DenseLayer(spec.n_in, spec.n_out, rectify=spec.rectify, params=params)
    raise CheckpointFormatError(f"unknown layer kind {spec.kind!r}")


_PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "qpu_fc": ("weights", "biases"),
    "graph_aggregate": ("adjacency",),
    "bridge": (),
    "dense": ("weights", "biases"),
}


def load_checkpoint(path: str | Path) -> tuple[ModelGraph, CheckpointHeader]:
    """Inverse of :func:`save_checkpoint`; parameters come back bit-exact."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        raise CheckpointFormatError(f"{path} is not a checkpoint: {exc}") from exc

    raw = arrays.pop(_HEADER_KEY, None)
    if raw is None:
        raise CheckpointFormatError(f"{path} has no header")
    try:
        meta = json.loads(raw.tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path} has an unreadable header") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {meta.get('format_version')!r}"
        )
    try:
        header = CheckpointHeader.model_validate(meta)
    except ValidationError as exc:
        raise CheckpointFormatError(f"{path} has an invalid header: {exc}") from exc

    layers: list[Layer] = []
    for i, spec in enumerate(header.layers):
        params = {}
        for name in _PARAM_NAMES[spec.kind]:
            key = f"{i}.{name}"
            if key not in arrays:
                raise CheckpointFormatError(f"{path} is missing parameter {key}")
            params[name] = arrays[key]
        layers.append(_layer_from_spec(spec, params))
    try:
        model = ModelGraph(layers=layers, config=header.model)
    except ContractViolation as exc:
        raise CheckpointFormatError(f"{path} describes an inconsistent graph: {exc}") from exc
    logger.info("Checkpoint loaded: %s (epoch %d)", path, header.epoch)
    return model, header
