"""Numerical self-checks: rotation invariance at scale and gradient checking."""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np

from qpu_kit.layers import (
    BridgeLayer,
    DenseLayer,
    GraphAggregateLayer,
    QpuFcLayer,
    softmax_cross_entropy,
)
from qpu_kit.models import ModelGraph, build_model
from qpu_kit.qpu import QpuParams, finite_diff_gradient, qpu_forward, relative_error
from qpu_kit.quaternion import Array, conjugate, hamilton, random_unit, rotate_vector
from qpu_kit.schemas import BridgeMode, GradcheckRow, InvarianceReport, ModelConfig, ModelKind

logger = logging.getLogger(__name__)

GRADCHECK_BATCH = 4
GRADCHECK_INPUTS = 6
GRADCHECK_CLASSES = 4
GRADCHECK_LAYERS = ("qpu", "graph", "qmlp", "qmlp_rinv", "rmlp")
INVARIANCE_TOL = 1e-9


def verify_invariance(
    trials: int = 1000,
    n_inputs: int = 8,
    seed: int = 0,
    tol: float = INVARIANCE_TOL,
) -> InvarianceReport:
    """Rotate every QPU input by a random rotation and compare outputs.

    Real parts must agree; imaginary parts must follow the same rotation.
    The report passes when both deviations are within ``tol``.
    """
    rng = np.random.default_rng(seed)
    qs = random_unit(rng, (trials, n_inputs))
    params = QpuParams(
        w=rng.uniform(-2.0, 2.0, size=(trials, n_inputs)),
        b=rng.uniform(-1.0, 1.0, size=trials),
    )
    r = random_unit(rng, (trials,))
    rotated = hamilton(hamilton(r[:, None, :], qs), conjugate(r)[:, None, :])

    y, _ = qpu_forward(qs, params)
    y_rot, _ = qpu_forward(rotated, params)
    real_dev = float(np.max(np.abs(y[:, 0] - y_rot[:, 0])))
    imag_dev = float(
        np.max(np.linalg.norm(rotate_vector(r, y[:, 1:]) - y_rot[:, 1:], axis=-1))
    )
    report = InvarianceReport(
        trials=trials,
        n_inputs=n_inputs,
        max_real_deviation=real_dev,
        max_imag_deviation=imag_dev,
        tol=tol,
        passed=max(real_dev, imag_dev) <= tol,
    )
    logger.info("Invariance over %d trials: real %.2e, imag %.2e", trials, real_dev, imag_dev)
    return report


def gradcheck_model(name: str, seed: int = 0) -> ModelGraph:
    """Small instance of each checkable layer stack."""
    rng = np.random.default_rng(seed)
    n = GRADCHECK_INPUTS
    match name:
        case "qpu":
            layer = QpuFcLayer.create(n, 1, rng)
            layer.params["biases"] = rng.uniform(-0.5, 0.5, size=1)
            return ModelGraph(
                [layer, BridgeLayer(1, BridgeMode.FLATTEN4), DenseLayer.create(4, GRADCHECK_CLASSES, rng)],
                ModelConfig(n_inputs=n, n_classes=GRADCHECK_CLASSES),
            )
        case "graph":
            graph = GraphAggregateLayer.from_adjacency(rng.uniform(-1.0, 1.0, size=(n, n)))
            return ModelGraph(
                [
                    graph,
                    BridgeLayer(n, BridgeMode.ANGLE_AXIS),
                    DenseLayer.create(4 * n, GRADCHECK_CLASSES, rng),
                ],
                ModelConfig(n_inputs=n, n_classes=GRADCHECK_CLASSES),
            )
        case "qmlp" | "qmlp_rinv" | "rmlp":
            kind = ModelKind(name)
            hidden = [16, 16] if kind is ModelKind.RMLP else [8, 4]
            model = build_model(
                ModelConfig(kind=kind, n_inputs=n, n_classes=GRADCHECK_CLASSES, hidden=hidden),
                rng,
            )
            for key, arr in model.parameters().items():
                if key.endswith("biases"):
                    arr[...] = rng.uniform(-0.5, 0.5, size=arr.shape)
            return model
    raise ValueError(f"unknown gradcheck layers {name!r}; choose from {GRADCHECK_LAYERS}")


def _check(
    label: str, analytic: Array, f: Callable[[Array], float], x: Array, tol: float
) -> GradcheckRow:
    numeric = finite_diff_gradient(f, x)
    err = float(np.max(relative_error(analytic, numeric))) if x.size else 0.0
    return GradcheckRow(name=label, size=int(x.size), max_rel_error=err, passed=err <= tol)


def gradcheck(layers: str = "qmlp", tol: float = 1e-5, seed: int = 0) -> list[GradcheckRow]:
    """Compare every parameter and input gradient against central differences."""
    model = gradcheck_model(layers, seed)
    rng = np.random.default_rng(seed + 1)
    x = random_unit(rng, (GRADCHECK_BATCH, GRADCHECK_INPUTS))
    labels = rng.integers(GRADCHECK_CLASSES, size=GRADCHECK_BATCH)

    logits, caches = model.forward(x)
    _, dlogits = softmax_cross_entropy(logits, labels)
    dx, grads = model.backward(caches, dlogits)

    rows = []
    params = model.parameters()
    for key, arr in params.items():
        saved = arr.copy()

        def loss_at(value: Array, arr: Array = arr) -> float:
            arr[...] = value
            return model.loss(x, labels)

        rows.append(_check(f"{layers}:{key}", grads[key], loss_at, saved, tol))
        arr[...] = saved
    rows.append(_check(f"{layers}:input", dx, lambda v: model.loss(v, labels), x, tol))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        logger.warning("Gradcheck failures: %s", failed)
    return rows


def format_gradcheck(rows: list[GradcheckRow], tol: float) -> str:
    lines = [f"{'parameter':<28} {'size':>6} {'max rel err':>12}  result (tol {tol:g})"]
    for r in rows:
        lines.append(
            f"{r.name:<28} {r.size:>6} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
