"""Quaternion product unit: biased power weighting, chain products, backprop.

A QPU maps ``N`` unit quaternions to one unit quaternion::

    QPU(q; w, b) = qpow(q_1; w_1, b) ⊗ ... ⊗ qpow(q_N; w_N, b)

Arrays keep the chain on axis ``-2`` and the quaternion on axis ``-1``; any
leading axes are batch axes and flow through unchanged.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

import numpy as np
from numpy.typing import ArrayLike

from qpu_kit.errors import ContractViolation, QuaternionDomainError
from qpu_kit.quaternion import (
    CLAMP_EPS,
    Array,
    as_quat,
    clamped_scalar,
    conjugate,
    hamilton,
    identity,
    normalize,
    split_axis,
)

logger = logging.getLogger(__name__)

GRADCHECK_STEP = 1e-6
GRADCHECK_FLOOR = 1e-3


class TapeMode(StrEnum):
    """Backward strategy: keep the prefix products or rebuild them."""

    STORE = "store"
    RECOMPUTE = "recompute"


@dataclass(frozen=True)
class QpuParams:
    """Per-input weights ``w`` (shape ``(..., N)``) and the shared bias ``b``."""

    w: Array
    b: Array | float

    @classmethod
    def of(cls, w: ArrayLike, b: ArrayLike = 0.0) -> QpuParams:
        return cls(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))


@dataclass(frozen=True)
class ChainTape:
    """Weighted inputs ``p`` and their prefix products ``c_k = p_1 ⊗ ... ⊗ p_k``."""

    p: Array
    c: Array

    @property
    def length(self) -> int:
        return self.c.shape[-2]

    def before(self) -> Array:
        """``B_k = c_k ⊗ p_k*``, the product of everything left of ``k``."""
        return hamilton(self.c, conjugate(self.p))

    def after(self) -> Array:
        """``A_k = c_k* ⊗ c_N``, the product of everything right of ``k``."""
        return hamilton(conjugate(self.c), self.c[..., -1:, :])


@dataclass(frozen=True)
class QpuGradients:
    dq: Array
    dw: Array
    db: Array


@dataclass(frozen=True)
class TreeReduction:
    y: Array
    depth: int


# ─── Weighting ───────────────────────────────────────────────


def qpow_biased(q: ArrayLike, w: ArrayLike, b: ArrayLike) -> Array:
    """``[cos(w φ), u sin(w φ)]`` with ``φ = arccos(clamp(s)) + b``.

    Degenerate axes give the identity whatever the bias.
    """
    q = as_quat(q)
    axis, _, degenerate = split_axis(q)
    phi = np.arccos(clamped_scalar(q[..., 0])) + b
    angle = np.asarray(w, dtype=np.float64) * phi
    out = np.concatenate(
        [np.cos(angle)[..., None], np.sin(angle)[..., None] * axis], axis=-1
    )
    return np.where(degenerate[..., None], identity(), out)


def qpow_biased_backward(
    q: ArrayLike, w: ArrayLike, b: ArrayLike, upstream: ArrayLike
) -> tuple[Array, Array, Array]:
    """Contract ``upstream`` with the Jacobians of :func:`qpow_biased`.

    Returns ``(dq, dw, db)`` elementwise over the broadcast shape; nothing is
    reduced. The arccos derivative is zero outside the clamp interval and all
    gradients vanish on a degenerate axis.
    """
    q = as_quat(q)
    up = as_quat(upstream)
    w = np.asarray(w, dtype=np.float64)
    s = q[..., 0]
    lo, hi = -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS
    sc = np.clip(s, lo, hi)
    inside = (s > lo) & (s < hi)

    axis, n, degenerate = split_axis(q)
    safe_n = np.where(degenerate, 1.0, n)
    phi = np.arccos(sc) + b
    angle = w * phi
    sin, cos = np.sin(angle), np.cos(angle)

    g_s = up[..., 0]
    g_v = up[..., 1:]
    g_u = np.sum(g_v * axis, axis=-1)
    # dL/d(angle)
    t = -g_s * sin + g_u * cos

    dphi_ds = np.where(inside, -1.0 / np.sqrt(1.0 - sc * sc), 0.0)
    ds = t * w * dphi_ds
    dv = (sin / safe_n)[..., None] * (g_v - g_u[..., None] * axis)
    dw = t * phi
    db = t * w

    keep = ~degenerate
    dq = np.concatenate([ds[..., None], dv], axis=-1) * keep[..., None]
    return dq, dw * keep, db * keep


# ─── Chain products ──────────────────────────────────────────


def _check_chain(ps: ArrayLike) -> Array:
    ps = as_quat(ps)
    if ps.ndim < 2 or ps.shape[-2] == 0:
        raise QuaternionDomainError("a chain product needs at least one quaternion")
    return ps


def chain_forward(ps: ArrayLike) -> tuple[Array, ChainTape]:
    """Left-to-right product ``p_1 ⊗ ... ⊗ p_N`` with its prefix tape.

    The returned output is renormalized once; the tape keeps the raw prefixes.
    """
    ps = _check_chain(ps)
    c = np.empty_like(ps)
    c[..., 0, :] = ps[..., 0, :]
    for k in range(1, ps.shape[-2]):
        c[..., k, :] = hamilton(c[..., k - 1, :], ps[..., k, :])
    return normalize(c[..., -1, :]), ChainTape(p=ps, c=c)


def tree_reduce(ps: ArrayLike) -> TreeReduction:
    """Pairwise reduction: each level multiplies positions ``2i`` and ``2i+1``.

    Every product inside a level is independent, so one level is one
    vectorized call; an odd tail is carried to the next level unchanged.
    """
    x = _check_chain(ps)
    depth = 0
    while x.shape[-2] > 1:
        n = x.shape[-2]
        half = n // 2
        paired = hamilton(x[..., 0 : 2 * half : 2, :], x[..., 1 : 2 * half : 2, :])
        if n % 2:
            paired = np.concatenate([paired, x[..., -1:, :]], axis=-2)
        x = paired
        depth += 1
    return TreeReduction(y=normalize(x[..., 0, :]), depth=depth)


def serial_tree_reduce(ps: ArrayLike) -> TreeReduction:
    """Same schedule as :func:`tree_reduce`, one product at a time, one chain."""
    level = list(_check_chain(ps))
    depth = 0
    while len(level) > 1:
        nxt = [hamilton(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        depth += 1
    return TreeReduction(y=normalize(level[0]), depth=depth)


def chain_forward_tree(ps: ArrayLike) -> Array:
    return tree_reduce(ps).y


def reduction_depth(n: int) -> int:
    """Levels the pairwise schedule needs for ``n`` inputs."""
    if n < 1:
        raise QuaternionDomainError("a chain product needs at least one quaternion")
    depth = 0
    while n > 1:
        n = (n + 1) // 2
        depth += 1
    return depth


def chain_backward(tape: ChainTape, upstream: ArrayLike) -> Array:
    """Gradient of ``<upstream, c_N>`` with respect to every chain input.

    ``grad_k = M_R(A_k)^T M_L(B_k)^T upstream``. Since ``M_L(q)^T = M_L(q*)``
    and ``M_R(q)^T = M_R(q*)`` this is evaluated as ``B_k* ⊗ upstream ⊗ A_k*``.
    """
    up = as_quat(upstream)
    if tape.p.shape != tape.c.shape:
        raise ContractViolation(
            f"tape inputs {tape.p.shape} and prefixes {tape.c.shape} differ"
        )
    if up.shape[:-1] != tape.c.shape[:-2]:
        raise ContractViolation(
            f"upstream batch shape {up.shape[:-1]} does not match tape {tape.c.shape[:-2]}"
        )
    left = hamilton(conjugate(tape.before()), up[..., None, :])
    return hamilton(left, conjugate(tape.after()))


# ─── QPU ──────────────────────────────────────────────────────


def weighted_inputs(qs: ArrayLike, params: QpuParams) -> Array:
    return qpow_biased(qs, params.w, np.asarray(params.b)[..., None])


def qpu_forward(qs: ArrayLike, params: QpuParams) -> tuple[Array, ChainTape]:
    return chain_forward(weighted_inputs(qs, params))


def qpu_forward_tree(qs: ArrayLike, params: QpuParams) -> Array:
    return chain_forward_tree(weighted_inputs(qs, params))


def qpu_backward(
    qs: ArrayLike,
    params: QpuParams,
    tape: ChainTape | None,
    upstream: ArrayLike,
) -> QpuGradients:
    """Gradients of ``<upstream, QPU(qs)>`` w.r.t. inputs, weights and bias.

    Pass ``tape=None`` to rebuild the prefix products instead of reading a
    stored tape. ``dw`` and ``dq`` keep the broadcast shape; ``db`` sums the
    per-input bias contributions over the chain axis.
    """
    qs = as_quat(qs)
    if tape is None:
        _, tape = qpu_forward(qs, params)
    elif tape.length != qs.shape[-2]:
        raise ContractViolation(
            f"tape holds {tape.length} inputs but {qs.shape[-2]} were given"
        )
    dp = chain_backward(tape, upstream)
    b = np.asarray(params.b)[..., None]
    dq, dw, db = qpow_biased_backward(qs, params.w, b, dp)
    return QpuGradients(dq=dq, dw=dw, db=db.sum(axis=-1))


# ─── Numerical oracle ─────────────────────────────────────────


def finite_diff_gradient(
    f: Callable[[Array], float], x: ArrayLike, h: float = GRADCHECK_STEP
) -> Array:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every entry."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: ArrayLike, numeric: ArrayLike) -> Array:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), GRADCHECK_FLOOR)
    return np.abs(a - n) / denom
