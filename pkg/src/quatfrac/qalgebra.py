"""Quaternion and complexified-quaternion arithmetic.

Values of the scalar field are u = q1 + i*q2 with q1, q2 quaternions and i a
central complex unit commuting with e1, e2, e3.  Grid-scale code works on flat
float arrays (4 components for H, 8 for the complexified algebra, ordering
q1 then q2); the dataclasses below are the scalar API used by tests, constants
and the contour machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Quaternion",
    "CQuaternion",
    "SlicePoint",
    "qmul",
    "cqmul",
    "inner",
    "slice_power",
    "left_mult_matrix4",
    "right_mult_matrix4",
    "left_mult_matrix8",
    "right_mult_matrix8",
]


@dataclass(frozen=True)
class Quaternion:
    """s = s0 + s1*e1 + s2*e2 + s3*e3 with e1^2 = e2^2 = e3^2 = e1e2e3 = -1."""

    s0: float = 0.0
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0

    @staticmethod
    def from_array(v) -> "Quaternion":
        return Quaternion(float(v[0]), float(v[1]), float(v[2]), float(v[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3], dtype=float)

    def conj(self) -> "Quaternion":
        return Quaternion(self.s0, -self.s1, -self.s2, -self.s3)

    def norm(self) -> float:
        return math.sqrt(self.s0**2 + self.s1**2 + self.s2**2 + self.s3**2)

    def re(self) -> float:
        return self.s0

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.s0 + other.s0, self.s1 + other.s1,
                          self.s2 + other.s2, self.s3 + other.s3)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.s0 - other.s0, self.s1 - other.s1,
                          self.s2 - other.s2, self.s3 - other.s3)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.s0, -self.s1, -self.s2, -self.s3)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return qmul(self, other)
        return Quaternion(self.s0 * other, self.s1 * other,
                          self.s2 * other, self.s3 * other)

    def __rmul__(self, other) -> "Quaternion":
        # other is a real scalar; quaternion*quaternion goes through __mul__
        return Quaternion(self.s0 * other, self.s1 * other,
                          self.s2 * other, self.s3 * other)

    def inverse(self) -> "Quaternion":
        n2 = self.s0**2 + self.s1**2 + self.s2**2 + self.s3**2
        if n2 == 0.0:
            raise ZeroDivisionError("inverse of zero quaternion")
        c = self.conj()
        return Quaternion(c.s0 / n2, c.s1 / n2, c.s2 / n2, c.s3 / n2)


ONE = Quaternion(1.0)
E1 = Quaternion(0.0, 1.0, 0.0, 0.0)
E2 = Quaternion(0.0, 0.0, 1.0, 0.0)
E3 = Quaternion(0.0, 0.0, 0.0, 1.0)


def qmul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product."""
    return Quaternion(
        a.s0 * b.s0 - a.s1 * b.s1 - a.s2 * b.s2 - a.s3 * b.s3,
        a.s0 * b.s1 + a.s1 * b.s0 + a.s2 * b.s3 - a.s3 * b.s2,
        a.s0 * b.s2 - a.s1 * b.s3 + a.s2 * b.s0 + a.s3 * b.s1,
        a.s0 * b.s3 + a.s1 * b.s2 - a.s2 * b.s1 + a.s3 * b.s0,
    )


@dataclass(frozen=True)
class CQuaternion:
    """u = q1 + i*q2 with i central (commutes with e1, e2, e3)."""

    q1: Quaternion = Quaternion()
    q2: Quaternion = Quaternion()

    @staticmethod
    def from_array(v) -> "CQuaternion":
        return CQuaternion(Quaternion.from_array(v[:4]), Quaternion.from_array(v[4:8]))

    @staticmethod
    def from_quaternion(q: Quaternion) -> "CQuaternion":
        return CQuaternion(q, Quaternion())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q1.as_array(), self.q2.as_array()])

    def norm(self) -> float:
        return math.sqrt(self.q1.norm() ** 2 + self.q2.norm() ** 2)

    def __add__(self, other: "CQuaternion") -> "CQuaternion":
        return CQuaternion(self.q1 + other.q1, self.q2 + other.q2)

    def __sub__(self, other: "CQuaternion") -> "CQuaternion":
        return CQuaternion(self.q1 - other.q1, self.q2 - other.q2)

    def __neg__(self) -> "CQuaternion":
        return CQuaternion(-self.q1, -self.q2)

    def __mul__(self, other):
        if isinstance(other, CQuaternion):
            return cqmul(self, other)
        if isinstance(other, Quaternion):
            return cqmul(self, CQuaternion.from_quaternion(other))
        return CQuaternion(self.q1 * other, self.q2 * other)

    def __rmul__(self, other) -> "CQuaternion":
        return CQuaternion(self.q1 * other, self.q2 * other)


CI = CQuaternion(Quaternion(), ONE)  # the central complex unit i


def cqmul(u: CQuaternion, v: CQuaternion) -> CQuaternion:
    """(q1 + i q2)(w1 + i w2) = (q1 w1 - q2 w2) + i (q1 w2 + q2 w1)."""
    return CQuaternion(
        qmul(u.q1, v.q1) - qmul(u.q2, v.q2),
        qmul(u.q1, v.q2) + qmul(u.q2, v.q1),
    )


def inner(u: CQuaternion, v: CQuaternion) -> Quaternion:
    """Quaternion-valued scalar product conj(q1)w1 + conj(q2)w2.

    inner(u, u) is real and equals |u|^2; right-linear in v over H.
    """
    return qmul(u.q1.conj(), v.q1) + qmul(u.q2.conj(), v.q2)


@dataclass(frozen=True)
class SlicePoint:
    """A point s = j*t on the imaginary axis of the slice plane span{1, j}.

    j must be a purely imaginary unit quaternion; t is real.
    """

    j: Quaternion
    t: float

    def __post_init__(self):
        if self.j.s0 != 0.0:
            raise ValueError("slice unit j must be purely imaginary (Re j = 0)")
        if abs(self.j.norm() - 1.0) > 4 * np.spacing(1.0):
            raise ValueError("slice unit j must have |j| = 1")

    def value(self) -> Quaternion:
        return self.j * self.t

    def conj_value(self) -> Quaternion:
        return self.j * (-self.t)


def slice_power(s: SlicePoint, beta: float) -> Quaternion:
    """Principal-branch power s^beta on the slice plane, argument in (-pi, pi].

    For s = j*t the argument is sign(t)*pi/2, so
    s^beta = |t|^beta * (cos(beta*sign(t)*pi/2) + j*sin(beta*sign(t)*pi/2)).
    Rejects t = 0 (branch point).
    """
    if s.t == 0.0:
        raise ValueError("slice_power at the branch point t = 0")
    theta = math.copysign(math.pi / 2.0, s.t) * beta
    mag = abs(s.t) ** beta
    return Quaternion(mag * math.cos(theta)) + s.j * (mag * math.sin(theta))


# ---------------------------------------------------------------------------
# Real matrix representations.  Left multiplication by a fixed value of the
# algebra and right multiplication by a quaternion are real-linear maps on the
# flat component vectors; these matrices are what the operator assembly bakes
# into its sparse blocks.  Columns are images of the basis elements.

def left_mult_matrix4(q: Quaternion) -> np.ndarray:
    """4x4 real matrix of p -> q*p."""
    basis = (ONE, E1, E2, E3)
    return np.column_stack([qmul(q, b).as_array() for b in basis])


def right_mult_matrix4(q: Quaternion) -> np.ndarray:
    """4x4 real matrix of p -> p*q."""
    basis = (ONE, E1, E2, E3)
    return np.column_stack([qmul(b, q).as_array() for b in basis])


def left_mult_matrix8(c: CQuaternion) -> np.ndarray:
    """8x8 real matrix of u -> c*u on the complexified algebra."""
    l1 = left_mult_matrix4(c.q1)
    l2 = left_mult_matrix4(c.q2)
    out = np.zeros((8, 8))
    out[:4, :4] = l1
    out[:4, 4:] = -l2
    out[4:, :4] = l2
    out[4:, 4:] = l1
    return out


def right_mult_matrix8(c: CQuaternion) -> np.ndarray:
    """8x8 real matrix of u -> u*c."""
    r1 = right_mult_matrix4(c.q1)
    r2 = right_mult_matrix4(c.q2)
    out = np.zeros((8, 8))
    out[:4, :4] = r1
    out[:4, 4:] = -r2
    out[4:, :4] = r2
    out[4:, 4:] = r1
    return out
