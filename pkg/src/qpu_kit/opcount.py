"""Instrumented scalar QPU-FC forward that tallies real arithmetic.

Every scalar runs through :class:`Counted`, whose operators record each
multiplication, addition/subtraction, division and square root as it
happens. Work is split across two counters:

- the layer counter sees the weighting step (bias addition, angle scaling and
  one sine/cosine pair per input) and the Hamilton products of the chain;
- the overhead counter sees the axis-angle decomposition of the inputs
  (arccos, axis norm, axis rescaling) and the final renormalization.

An ``N``-input, ``M``-output layer performs ``(17N - 16)M`` multiplications,
``(13N - 12)M`` additions and ``NM`` trig evaluations on the layer counter.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from qpu_kit.quaternion import AXIS_TOL, CLAMP_EPS

Quat4 = tuple[float, float, float, float]


@dataclass
class OpCounter:
    mul: int = 0
    add: int = 0
    div: int = 0
    sqrt: int = 0
    trig: int = 0


class Counted:
    """A float that reports its arithmetic to an :class:`OpCounter`.

    Negation and comparisons are free.
    """

    __slots__ = ("value", "counter")

    def __init__(self, value: float, counter: OpCounter) -> None:
        self.value = float(value)
        self.counter = counter

    def _wrap(self, value: float) -> Counted:
        return Counted(value, self.counter)

    def __add__(self, other: Counted | float) -> Counted:
        self.counter.add += 1
        return self._wrap(self.value + _raw(other))

    __radd__ = __add__

    def __sub__(self, other: Counted | float) -> Counted:
        self.counter.add += 1
        return self._wrap(self.value - _raw(other))

    def __rsub__(self, other: Counted | float) -> Counted:
        self.counter.add += 1
        return self._wrap(_raw(other) - self.value)

    def __mul__(self, other: Counted | float) -> Counted:
        self.counter.mul += 1
        return self._wrap(self.value * _raw(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Counted | float) -> Counted:
        self.counter.div += 1
        return self._wrap(self.value / _raw(other))

    def __rtruediv__(self, other: Counted | float) -> Counted:
        self.counter.div += 1
        return self._wrap(_raw(other) / self.value)

    def __neg__(self) -> Counted:
        return self._wrap(-self.value)

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Counted({self.value!r})"


def _raw(x: Counted | float) -> float:
    return x.value if isinstance(x, Counted) else float(x)


def _bind(values: Iterable[float], counter: OpCounter) -> list[Counted]:
    return [Counted(float(v), counter) for v in values]


def counted_sqrt(x: Counted) -> Counted:
    x.counter.sqrt += 1
    return Counted(math.sqrt(x.value), x.counter)


def counted_sincos(x: Counted) -> tuple[Counted, Counted]:
    """One sine/cosine pair, counted as a single trig evaluation."""
    x.counter.trig += 1
    return Counted(math.sin(x.value), x.counter), Counted(math.cos(x.value), x.counter)


def counted_acos(x: Counted) -> Counted:
    x.counter.trig += 1
    return Counted(math.acos(x.value), x.counter)


def expected_multiplications(n: int, m: int) -> int:
    return (17 * n - 16) * m


def expected_additions(n: int, m: int) -> int:
    return (13 * n - 12) * m


def counted_hamilton(a: Sequence[float], b: Sequence[float], counter: OpCounter) -> Quat4:
    s1, x1, y1, z1 = _bind(a, counter)
    s2, x2, y2, z2 = _bind(b, counter)
    out = (
        s1 * s2 - x1 * x2 - y1 * y2 - z1 * z2,
        s1 * x2 + x1 * s2 + y1 * z2 - z1 * y2,
        s1 * y2 - x1 * z2 + y1 * s2 + z1 * x2,
        s1 * z2 + x1 * y2 - y1 * x2 + z1 * s2,
    )
    return (float(out[0]), float(out[1]), float(out[2]), float(out[3]))


def counted_qpow(
    q: Sequence[float],
    w: float,
    b: float,
    counter: OpCounter,
    overhead: OpCounter | None = None,
) -> Quat4:
    """``qpow_biased`` on one quaternion; decomposition work goes to ``overhead``."""
    overhead = overhead if overhead is not None else OpCounter()
    s, x, y, z = (float(c) for c in q)
    clamped = min(max(s, -1.0 + CLAMP_EPS), 1.0 - CLAMP_EPS)
    phi = counted_acos(Counted(clamped, overhead))

    angle = Counted(w, counter) * (Counted(phi.value, counter) + b)
    sin_a, cos_a = counted_sincos(angle)

    ox, oy, oz = _bind((x, y, z), overhead)
    n = counted_sqrt(ox * ox + oy * oy + oz * oz)
    if n.value <= AXIS_TOL:
        return (1.0, 0.0, 0.0, 0.0)
    k = Counted(sin_a.value, overhead) / n
    return (cos_a.value, float(ox * k), float(oy * k), float(oz * k))


def counted_qpu_fc_forward(
    qs: Sequence[Sequence[float]],
    weights: Sequence[Sequence[float]],
    biases: Sequence[float],
) -> tuple[list[Quat4], OpCounter, OpCounter]:
    """Sequential scalar QPU-FC forward, one output unit after another.

    Returns the outputs, the layer counter and the overhead counter.
    """
    counter = OpCounter()
    overhead = OpCounter()
    outputs: list[Quat4] = []
    for row, b in zip(weights, biases, strict=True):
        acc: Quat4 | None = None
        for q, w in zip(qs, row, strict=True):
            p = counted_qpow(q, w, b, counter, overhead)
            acc = p if acc is None else counted_hamilton(acc, p, counter)
        assert acc is not None
        c0, c1, c2, c3 = _bind(acc, overhead)
        scale = 1.0 / counted_sqrt(c0 * c0 + c1 * c1 + c2 * c2 + c3 * c3)
        outputs.append(
            (float(c0 * scale), float(c1 * scale), float(c2 * scale), float(c3 * scale))
        )
    return outputs, counter, overhead
