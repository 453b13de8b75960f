"""Layers built from QPUs plus the small real-valued pieces the models need.

Every layer exposes ``forward(x) -> (y, cache)`` and
``backward(cache, grad) -> (grad_in, param_grads)``. Both are pure given the
layer's parameters, so shards of a batch can run on different threads.
Quaternion activations are ``(batch, count, 4)``; real ones ``(batch, width)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Protocol, runtime_checkable

import numpy as np
from numpy.typing import ArrayLike

from qpu_kit.errors import ContractViolation
from qpu_kit.qpu import (
    ChainTape,
    QpuParams,
    TapeMode,
    qpu_backward,
    qpu_forward,
    qpu_forward_tree,
)
from qpu_kit.quaternion import (
    CLAMP_EPS,
    Array,
    angle_axis_map,
    as_quat,
    split_axis,
)
from qpu_kit.schemas import BridgeMode, LayerSpec

logger = logging.getLogger(__name__)

Seed = int | np.random.Generator


@runtime_checkable
class Layer(Protocol):
    params: dict[str, Array]

    @property
    def spec(self) -> LayerSpec: ...

    def forward(self, x: Array) -> tuple[Array, Any]: ...

    def backward(self, cache: Any, grad: Array) -> tuple[Array, dict[str, Array]]: ...


def _rng(seed: Seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_xavier(n_in: int, n_out: int, seed: Seed) -> Array:
    """``(n_out, n_in)`` weights uniform on ``±sqrt(6 / (n_in + n_out))``."""
    if n_in < 1 or n_out < 1:
        raise ContractViolation(f"layer sizes must be positive, got {n_in}→{n_out}")
    bound = np.sqrt(6.0 / (n_in + n_out))
    return _rng(seed).uniform(-bound, bound, size=(n_out, n_in))


def parameter_ratio(n: int, m: int) -> float:
    """QPU-FC(n→m) weights over a real dense layer on the same ``4n→4m`` reals."""
    return (n * m) / ((4 * n) * (4 * m))


# ─── QPU fully-connected ─────────────────────────────────────


@dataclass
class QpuFcTapes:
    """What a QPU-FC forward keeps for backward: inputs, plus the tape in store mode."""

    qs: Array
    tape: ChainTape | None


def _unit_params(weights: Array, biases: Array) -> QpuParams:
    return QpuParams(w=weights, b=biases)


def _check_width(qs: Array, n_in: int) -> Array:
    qs = as_quat(qs)
    if qs.ndim < 2 or qs.shape[-2] != n_in:
        raise ContractViolation(
            f"layer expects {n_in} input quaternions, got shape {qs.shape}"
        )
    return qs


@dataclass
class QpuFcLayer:
    """``M`` QPUs sharing the same ``N`` input quaternions."""

    n_in: int
    n_out: int
    params: dict[str, Array] = field(default_factory=dict)
    tape_mode: TapeMode = TapeMode.STORE

    @classmethod
    def create(
        cls,
        n_in: int,
        n_out: int,
        seed: Seed = 0,
        tape_mode: TapeMode = TapeMode.STORE,
    ) -> QpuFcLayer:
        return cls(
            n_in=n_in,
            n_out=n_out,
            params={
                "weights": init_xavier(n_in, n_out, seed),
                "biases": np.zeros(n_out),
            },
            tape_mode=tape_mode,
        )

    @property
    def weights(self) -> Array:
        return self.params["weights"]

    @property
    def biases(self) -> Array:
        return self.params["biases"]

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(
            kind="qpu_fc", n_in=self.n_in, n_out=self.n_out, tape_mode=self.tape_mode
        )

    def forward(self, x: Array) -> tuple[Array, QpuFcTapes]:
        return qfc_forward(self, x)

    def backward(self, cache: QpuFcTapes, grad: Array) -> tuple[Array, dict[str, Array]]:
        dqs, dw, db = qfc_backward(self, cache.qs, cache, grad)
        return dqs, {"weights": dw, "biases": db}


def qfc_forward(layer: QpuFcLayer, qs: ArrayLike) -> tuple[Array, QpuFcTapes]:
    """``ys[..., m, :] = QPU(qs; weights[m], biases[m])`` for every output unit."""
    qs = _check_width(np.asarray(qs, dtype=np.float64), layer.n_in)
    params = _unit_params(layer.weights, layer.biases)
    expanded = qs[..., None, :, :]
    if layer.tape_mode is TapeMode.STORE:
        ys, tape = qpu_forward(expanded, params)
        return ys, QpuFcTapes(qs=qs, tape=tape)
    return qpu_forward_tree(expanded, params), QpuFcTapes(qs=qs, tape=None)


def qfc_backward(
    layer: QpuFcLayer,
    qs: ArrayLike,
    tapes: QpuFcTapes,
    upstream: ArrayLike,
) -> tuple[Array, Array, Array]:
    """Input, weight and bias gradients; input gradients sum over all output units."""
    qs = _check_width(np.asarray(qs, dtype=np.float64), layer.n_in)
    up = as_quat(upstream)
    if up.shape[-2] != layer.n_out:
        raise ContractViolation(
            f"layer has {layer.n_out} outputs, upstream has shape {up.shape}"
        )
    grads = qpu_backward(
        qs[..., None, :, :],
        _unit_params(layer.weights, layer.biases),
        tapes.tape,
        up,
    )
    batch_axes = tuple(range(grads.dw.ndim - 2))
    dqs = grads.dq.sum(axis=-3)
    return dqs, grads.dw.sum(axis=batch_axes), grads.db.sum(axis=batch_axes)


# ─── Graph aggregation ───────────────────────────────────────


def graph_aggregate(adj: ArrayLike, qs: ArrayLike) -> Array:
    """``out_i = q_1^{a_i1} ⊗ ... ⊗ q_N^{a_iN}``, ascending node order."""
    adj = np.asarray(adj, dtype=np.float64)
    qs = as_quat(qs)
    n = qs.shape[-2]
    if adj.shape != (n, n):
        raise ContractViolation(f"adjacency {adj.shape} does not match {n} nodes")
    ys, _ = qpu_forward(qs[..., None, :, :], QpuParams(w=adj, b=np.zeros(n)))
    return ys


@dataclass
class GraphAggregateLayer:
    """Aggregation over a graph whose adjacency entries act as learnable powers."""

    n_nodes: int
    params: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def from_adjacency(cls, adj: ArrayLike) -> GraphAggregateLayer:
        adj = np.array(adj, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ContractViolation(f"adjacency must be square, got {adj.shape}")
        return cls(n_nodes=adj.shape[0], params={"adjacency": adj})

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(kind="graph_aggregate", n_in=self.n_nodes, n_out=self.n_nodes)

    def _as_fc(self) -> QpuFcLayer:
        return QpuFcLayer(
            n_in=self.n_nodes,
            n_out=self.n_nodes,
            params={
                "weights": self.params["adjacency"],
                "biases": np.zeros(self.n_nodes),
            },
        )

    def forward(self, x: Array) -> tuple[Array, QpuFcTapes]:
        return qfc_forward(self._as_fc(), x)

    def backward(self, cache: QpuFcTapes, grad: Array) -> tuple[Array, dict[str, Array]]:
        dqs, da, _ = qfc_backward(self._as_fc(), cache.qs, cache, grad)
        return dqs, {"adjacency": da}


# ─── Bridges ─────────────────────────────────────────────────


def bridge_forward(mode: BridgeMode, ys: ArrayLike) -> Array:
    """Flatten ``(..., M, 4)`` quaternions into ``(..., width * M)`` reals."""
    ys = as_quat(ys)
    lead = ys.shape[:-2]
    match mode:
        case BridgeMode.KEEP_REAL:
            out = ys[..., 0]
        case BridgeMode.KEEP_IMAGINARY:
            out = ys[..., 1:]
        case BridgeMode.FLATTEN4:
            out = ys
        case BridgeMode.ANGLE_AXIS:
            angle, axis = angle_axis_map(ys)
            out = np.concatenate([angle[..., None], axis], axis=-1)
    return out.reshape(*lead, -1)


def bridge_backward(mode: BridgeMode, ys: ArrayLike, grad: ArrayLike) -> Array:
    ys = as_quat(ys)
    grad = np.asarray(grad, dtype=np.float64)
    lead = ys.shape[:-2]
    m = ys.shape[-2]
    out = np.zeros_like(ys)
    match mode:
        case BridgeMode.KEEP_REAL:
            out[..., 0] = grad.reshape(*lead, m)
        case BridgeMode.KEEP_IMAGINARY:
            out[..., 1:] = grad.reshape(*lead, m, 3)
        case BridgeMode.FLATTEN4:
            out = grad.reshape(*lead, m, 4).copy()
        case BridgeMode.ANGLE_AXIS:
            g = grad.reshape(*lead, m, 4)
            s = ys[..., 0]
            lo, hi = -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS
            axis, n, degenerate = split_axis(ys)
            inside = (s > lo) & (s < hi) & ~degenerate
            sc = np.clip(s, lo, hi)
            out[..., 0] = np.where(inside, -g[..., 0] / np.sqrt(1.0 - sc * sc), 0.0)
            g_axis = g[..., 1:]
            proj = g_axis - np.sum(g_axis * axis, axis=-1, keepdims=True) * axis
            safe_n = np.where(degenerate, 1.0, n)
            out[..., 1:] = np.where(degenerate[..., None], 0.0, proj / safe_n[..., None])
    return out


@dataclass
class BridgeLayer:
    n_in: int
    mode: BridgeMode
    params: dict[str, Array] = field(default_factory=dict)

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(
            kind="bridge",
            n_in=self.n_in,
            n_out=self.n_in * self.mode.width,
            bridge=self.mode,
        )

    def forward(self, x: Array) -> tuple[Array, Array]:
        x = _check_width(x, self.n_in)
        return bridge_forward(self.mode, x), x

    def backward(self, cache: Array, grad: Array) -> tuple[Array, dict[str, Array]]:
        return bridge_backward(self.mode, cache, grad), {}


# ─── Real-valued layers ──────────────────────────────────────


def real_dense(x: ArrayLike, W: ArrayLike, b: ArrayLike, rectify: bool = False) -> Array:
    """``y = W x + b``, optionally rectified; ``x`` may carry leading batch axes."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if x.shape[-1] != W.shape[1]:
        raise ContractViolation(f"dense layer expects width {W.shape[1]}, got {x.shape}")
    z = x @ W.T + b
    return np.maximum(z, 0.0) if rectify else z


@dataclass
class DenseLayer:
    n_in: int
    n_out: int
    rectify: bool = False
    params: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def create(cls, n_in: int, n_out: int, seed: Seed = 0, rectify: bool = False) -> DenseLayer:
        return cls(
            n_in=n_in,
            n_out=n_out,
            rectify=rectify,
            params={"weights": init_xavier(n_in, n_out, seed), "biases": np.zeros(n_out)},
        )

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(kind="dense", n_in=self.n_in, n_out=self.n_out, rectify=self.rectify)

    def forward(self, x: Array) -> tuple[Array, tuple[Array, Array]]:
        z = real_dense(x, self.params["weights"], self.params["biases"])
        y = np.maximum(z, 0.0) if self.rectify else z
        return y, (np.asarray(x, dtype=np.float64), z)

    def backward(
        self, cache: tuple[Array, Array], grad: Array
    ) -> tuple[Array, dict[str, Array]]:
        x, z = cache
        gz = grad * (z > 0.0) if self.rectify else grad
        x2 = x.reshape(-1, self.n_in)
        gz2 = gz.reshape(-1, self.n_out)
        return gz @ self.params["weights"], {
            "weights": gz2.T @ x2,
            "biases": gz2.sum(axis=0),
        }


def softmax_cross_entropy(logits: ArrayLike, label: ArrayLike) -> tuple[Array, Array]:
    """Per-sample ``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``.

    Works on one logit vector or a ``(batch, classes)`` block.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(label)
    n_classes = z.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ContractViolation(f"label out of range for {n_classes} classes")
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    picked = np.take_along_axis(log_probs, labels[..., None].astype(np.intp), axis=-1)
    loss = -picked[..., 0]
    grad = np.exp(log_probs)
    np.put_along_axis(
        grad,
        labels[..., None].astype(np.intp),
        np.take_along_axis(grad, labels[..., None].astype(np.intp), axis=-1) - 1.0,
        axis=-1,
    )
    return loss, grad
