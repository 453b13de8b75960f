"""Quaternion algebra on ``(..., 4)`` float64 arrays laid out ``[s, x, y, z]``.

Every function broadcasts over leading axes, so the same code serves a
single quaternion and a whole ``(batch, units, inputs, 4)`` block.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from qpu_kit.errors import ContractViolation, QuaternionDomainError

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

# ─── Constants ────────────────────────────────────────────────

CLAMP_EPS = 1e-6
AXIS_TOL = 1e-12
UNIT_TOL = 1e-9

_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


class ProductMatrices(NamedTuple):
    """Left and right Hamilton-product matrices of one quaternion."""

    left: Array
    right: Array


# ─── Construction ─────────────────────────────────────────────


def quat(s: float, x: float, y: float, z: float) -> Array:
    return np.array([s, x, y, z], dtype=np.float64)


def identity(shape: tuple[int, ...] = ()) -> Array:
    out = np.zeros((*shape, 4))
    out[..., 0] = 1.0
    return out


def as_quat(q: ArrayLike) -> Array:
    """Coerce to a float64 array whose last axis has length 4."""
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != 4:
        raise ContractViolation(f"quaternion arrays need a last axis of 4, got {arr.shape}")
    return arr


def as_vec3(p: ArrayLike) -> Array:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != 3:
        raise ContractViolation(f"vector arrays need a last axis of 3, got {arr.shape}")
    return arr


def pure(p: ArrayLike) -> Array:
    """Embed 3-vectors as pure quaternions ``[0, p]``."""
    p = as_vec3(p)
    return np.concatenate([np.zeros((*p.shape[:-1], 1)), p], axis=-1)


def from_rotation(theta: ArrayLike, axis: ArrayLike) -> Array:
    """Unit quaternion for a rotation of ``theta`` radians about ``axis``."""
    theta = np.asarray(theta, dtype=np.float64)
    axis = as_vec3(axis)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = theta / 2.0
    return np.concatenate(
        [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
    )


def from_angle_axis(angle: ArrayLike, axis: ArrayLike) -> Array:
    """Inverse of :func:`angle_axis_map`: ``[cos(angle), sin(angle) * axis]``.

    ``angle`` is the half rotation angle ``arccos(s)``, as returned by the map.
    """
    angle = np.asarray(angle, dtype=np.float64)
    axis = as_vec3(axis)
    return np.concatenate(
        [np.cos(angle)[..., None], np.sin(angle)[..., None] * axis], axis=-1
    )


def random_unit(
    rng: np.random.Generator, shape: tuple[int, ...] = (), canonical: bool = False
) -> Array:
    """Rotations uniform over SO(3) from normalized 4-D Gaussians."""
    q = rng.standard_normal((*shape, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    if canonical:
        q = normalize_canonical(q)
    return q


# ─── Algebra ──────────────────────────────────────────────────


def hamilton(q1: ArrayLike, q2: ArrayLike) -> Array:
    """Hamilton product ``q1 ⊗ q2``.

    ``[s1 s2 - <v1, v2>, v1 x v2 + s1 v2 + s2 v1]`` written out per component;
    the evaluation order is fixed so batched and one-at-a-time calls round
    identically.
    """
    a = as_quat(q1)
    b = as_quat(q2)
    s1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    s2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            s1 * s2 - x1 * x2 - y1 * y2 - z1 * z2,
            s1 * x2 + x1 * s2 + y1 * z2 - z1 * y2,
            s1 * y2 - x1 * z2 + y1 * s2 + z1 * x2,
            s1 * z2 + x1 * y2 - y1 * x2 + z1 * s2,
        ],
        axis=-1,
    )


def conjugate(q: ArrayLike) -> Array:
    return as_quat(q) * _CONJ


def norm(q: ArrayLike) -> Array:
    return np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)


def is_unit(q: ArrayLike, tol: float = UNIT_TOL) -> bool:
    q = as_quat(q)
    return bool(np.all(np.abs(np.sum(q * q, axis=-1) - 1.0) <= tol))


def normalize(q: ArrayLike) -> Array:
    q = as_quat(q)
    n = norm(q)
    if np.any(n == 0.0):
        raise QuaternionDomainError("cannot normalize a zero quaternion")
    return q / n[..., None]


def normalize_canonical(q: ArrayLike) -> Array:
    """Unit quaternion with ``s >= 0``; for ``s == 0`` the first nonzero
    imaginary component is made positive."""
    q = normalize(q)
    s = q[..., 0]
    imag = q[..., 1:]
    first_idx = np.argmax(imag != 0.0, axis=-1)
    first = np.take_along_axis(imag, first_idx[..., None], axis=-1)[..., 0]
    sign = np.where(s < 0.0, -1.0, np.where(s > 0.0, 1.0, np.where(first < 0.0, -1.0, 1.0)))
    return q * sign[..., None]


def product_matrices(q: ArrayLike) -> ProductMatrices:
    """``(M_L(q), M_R(q))`` with ``M_L(q) r = q ⊗ r`` and ``M_R(q) r = r ⊗ q``."""
    q = as_quat(q)
    s, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    left = np.stack(
        [
            np.stack([s, -x, -y, -z], axis=-1),
            np.stack([x, s, -z, y], axis=-1),
            np.stack([y, z, s, -x], axis=-1),
            np.stack([z, -y, x, s], axis=-1),
        ],
        axis=-2,
    )
    right = np.stack(
        [
            np.stack([s, -x, -y, -z], axis=-1),
            np.stack([x, s, z, -y], axis=-1),
            np.stack([y, -z, s, x], axis=-1),
            np.stack([z, y, -x, s], axis=-1),
        ],
        axis=-2,
    )
    return ProductMatrices(left, right)


# ─── Rotation correspondence ─────────────────────────────────


def clamped_scalar(s: ArrayLike) -> Array:
    return np.clip(np.asarray(s, dtype=np.float64), -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS)


def split_axis(q: Array) -> tuple[Array, Array, Array]:
    """Return ``(axis, |v|, degenerate)`` with a zero axis where ``|v| <= AXIS_TOL``."""
    v = q[..., 1:]
    n = np.linalg.norm(v, axis=-1)
    degenerate = n <= AXIS_TOL
    safe = np.where(degenerate, 1.0, n)
    axis = np.where(degenerate[..., None], 0.0, v / safe[..., None])
    return axis, n, degenerate


def qpow(q: ArrayLike, w: ArrayLike) -> Array:
    """Quaternion power: scales the rotation angle by ``w``, keeps the axis."""
    q = as_quat(q)
    axis, _, degenerate = split_axis(q)
    angle = np.asarray(w, dtype=np.float64) * np.arccos(clamped_scalar(q[..., 0]))
    out = np.concatenate(
        [np.cos(angle)[..., None], np.sin(angle)[..., None] * axis], axis=-1
    )
    return np.where(degenerate[..., None], identity(), out)


def rotate_vector(q: ArrayLike, p: ArrayLike) -> Array:
    """Rotate 3-vectors by unit quaternions: ``q ⊗ [0, p] ⊗ q*``."""
    q = as_quat(q)
    return hamilton(hamilton(q, pure(p)), conjugate(q))[..., 1:]


def orthogonal_axis(v: ArrayLike) -> Array:
    """Unit vector orthogonal to ``v``: cross with its least-aligned basis vector."""
    v = as_vec3(v)
    basis = np.eye(3)[np.argmin(np.abs(v), axis=-1)]
    axis = np.cross(v, basis)
    return axis / np.linalg.norm(axis, axis=-1, keepdims=True)


def from_two_vectors(v1: ArrayLike, v2: ArrayLike) -> Array:
    """Canonical unit quaternion rotating the direction of ``v1`` onto ``v2``.

    Built from the half-way form ``[1 + <a, b>, a x b]`` of the unit
    directions. For obtuse pairs the scalar part is evaluated as
    ``|a x b|^2 / (1 - <a, b>)`` and the cross product as ``a x (a + b)``,
    so neither cancels near π. Pairs with ``|a x b| <= AXIS_TOL`` and a
    negative dot product turn by π about :func:`orthogonal_axis`.
    """
    v1 = as_vec3(v1)
    v2 = as_vec3(v2)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    if np.any(n1 <= AXIS_TOL) or np.any(n2 <= AXIS_TOL):
        raise QuaternionDomainError("from_two_vectors needs nonzero vectors")
    a = v1 / n1[..., None]
    b = v2 / n2[..., None]
    dot = np.sum(a * b, axis=-1)
    cross = np.cross(a, a + b)
    cross_sq = np.sum(cross * cross, axis=-1)
    scalar = np.where(dot >= 0.0, 1.0 + dot, cross_sq / np.maximum(1.0 - dot, 1.0))
    half_way = np.concatenate([scalar[..., None], cross], axis=-1)
    opposite = (np.sqrt(cross_sq) <= AXIS_TOL) & (dot < 0.0)
    if np.any(opposite):
        flipped = np.concatenate(
            [np.zeros((*a.shape[:-1], 1)), orthogonal_axis(a)], axis=-1
        )
        half_way = np.where(opposite[..., None], flipped, half_way)
    return normalize_canonical(half_way)


def angle_axis_map(q: ArrayLike) -> tuple[Array, Array]:
    """Disentangled Euclidean view ``(arccos(s), v / |v|)`` of unit quaternions.

    The angle uses the clamped scalar part. Degenerate axes come back as
    zero vectors and their angle is taken from the unclamped scalar, so the
    identity maps to ``(0, 0)``.
    """
    q = as_quat(q)
    axis, _, degenerate = split_axis(q)
    s = q[..., 0]
    angle = np.where(
        degenerate,
        np.arccos(np.clip(s, -1.0, 1.0)),
        np.arccos(clamped_scalar(s)),
    )
    return angle, axis
