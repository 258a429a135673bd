"""Exact SU(2) propagators for piecewise-constant control.

An element is stored as a unit quaternion ``(a, bx, by, bz)`` standing for
``a*I - i*(bx*sx + by*sy + bz*sz)``. A rotation by ``theta`` about the unit
axis ``n`` is ``a = cos(theta/2)``, ``b = sin(theta/2) * n``. The global
phase (overall sign) carries no physics here and is ignored by the
axis/angle read-out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sequence import ControlSegment, Timeline

__all__ = [
    "Su2Element",
    "IDENTITY",
    "segment_propagator",
    "segment_quaternions",
    "cumulative_propagators",
    "cumulative_quaternions",
    "total_propagator",
    "rotation_axis_angle",
    "rotation_matrix",
    "compose",
]

RENORM_EVERY = 64


@dataclass(frozen=True)
class Su2Element:
    a: float
    b: tuple

    @classmethod
    def from_array(cls, q) -> "Su2Element":
        q = np.asarray(q, dtype=float)
        return cls(float(q[0]), (float(q[1]), float(q[2]), float(q[3])))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Su2Element":
        n = np.asarray(axis, dtype=float)
        n = n / np.linalg.norm(n)
        s = math.sin(0.5 * angle)
        return cls(math.cos(0.5 * angle), tuple(float(x) for x in s * n))

    def as_array(self) -> np.ndarray:
        return np.array((self.a, *self.b))

    def __mul__(self, other: "Su2Element") -> "Su2Element":
        """``self * other`` applies ``other`` first, then ``self``."""
        return Su2Element.from_array(compose(self.as_array(), other.as_array()))

    def dagger(self) -> "Su2Element":
        return Su2Element(self.a, tuple(-x for x in self.b))

    def norm(self) -> float:
        return math.sqrt(self.a * self.a + sum(x * x for x in self.b))

    def matrix(self) -> np.ndarray:
        """2x2 complex unitary in the (up, down) basis."""
        a, (bx, by, bz) = self.a, self.b
        return np.array([[a - 1j * bz, -1j * bx - by],
                         [-1j * bx + by, a + 1j * bz]])


IDENTITY = Su2Element(1.0, (0.0, 0.0, 0.0))


def compose(q2: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Quaternion form of the product ``U2 @ U1`` (``U1`` acts first)."""
    a2, b2 = q2[..., 0], q2[..., 1:]
    a1, b1 = q1[..., 0], q1[..., 1:]
    a = a2 * a1 - np.sum(b2 * b1, axis=-1)
    b = a2[..., None] * b1 + a1[..., None] * b2 + np.cross(b2, b1)
    return np.concatenate((a[..., None], b), axis=-1)


def _kick_quaternion(phase: float) -> np.ndarray:
    return np.array([0.0, math.cos(phase), math.sin(phase), 0.0])


def _rotation_quaternions(h: np.ndarray, duration: np.ndarray) -> np.ndarray:
    h = np.atleast_2d(h)
    rate = np.linalg.norm(h, axis=-1)
    half = 0.5 * rate * duration
    q = np.zeros(h.shape[:-1] + (4,))
    q[..., 0] = np.cos(half)
    nz = rate > 0
    q[nz, 1:] = (np.sin(half[nz]) / rate[nz])[:, None] * h[nz]
    return q


def segment_propagator(seg: ControlSegment) -> Su2Element:
    """``exp(-i * duration * h . sigma / 2)``, followed by the segment's kick if any."""
    q = _rotation_quaternions(np.asarray(seg.h, dtype=float), np.array([float(seg.duration)]))[0]
    if seg.kick is not None:
        q = compose(_kick_quaternion(seg.kick), q)
    return Su2Element.from_array(q)


def segment_quaternions(tl: Timeline) -> np.ndarray:
    """(K, 4) array of per-segment propagators, kicks included."""
    if not tl.segments:
        return np.zeros((0, 4))
    h = np.array([s.h for s in tl.segments], dtype=float)
    d = np.array([s.duration for s in tl.segments], dtype=float)
    q = _rotation_quaternions(h, d)
    for k, s in enumerate(tl.segments):
        if s.kick is not None:
            q[k] = compose(_kick_quaternion(s.kick), q[k])
    return q


def cumulative_quaternions(tl: Timeline) -> np.ndarray:
    """(K + 1, 4) array of ``U_p`` at every segment boundary, starting at identity."""
    seg = segment_quaternions(tl)
    out = np.empty((len(seg) + 1, 4))
    out[0] = (1.0, 0.0, 0.0, 0.0)
    a, bx, by, bz = 1.0, 0.0, 0.0, 0.0
    for k, (sa, sx, sy, sz) in enumerate(seg.tolist(), start=1):
        # (sa, s) * (a, b), written out: this loop dominates long sweeps
        a, bx, by, bz = (
            sa * a - (sx * bx + sy * by + sz * bz),
            sa * bx + a * sx + (sy * bz - sz * by),
            sa * by + a * sy + (sz * bx - sx * bz),
            sa * bz + a * sz + (sx * by - sy * bx),
        )
        if k % RENORM_EVERY == 0:
            nrm = math.sqrt(a * a + bx * bx + by * by + bz * bz)
            a, bx, by, bz = a / nrm, bx / nrm, by / nrm, bz / nrm
        out[k] = (a, bx, by, bz)
    return out


def cumulative_propagators(tl: Timeline) -> list[Su2Element]:
    return [Su2Element.from_array(q) for q in cumulative_quaternions(tl)]


def total_propagator(tl: Timeline) -> Su2Element:
    return Su2Element.from_array(cumulative_quaternions(tl)[-1])


def rotation_axis_angle(u) -> tuple[np.ndarray, float]:
    """Bloch-sphere rotation of ``u`` as ``(unit axis, angle in [0, pi])``.

    Angles below 1e-12 report the z axis.
    """
    q = u.as_array() if isinstance(u, Su2Element) else np.asarray(u, dtype=float)
    a, b = q[0], q[1:]
    if a < 0:
        a, b = -a, -b
    nb = np.linalg.norm(b)
    angle = 2.0 * math.atan2(nb, a)
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), angle
    return b / nb, angle


def rotation_matrix(q) -> np.ndarray:
    """SO(3) matrix ``R`` with ``U (v . sigma) U^dagger = (R v) . sigma``.

    Accepts a single quaternion or an (..., 4) stack.
    """
    q = np.asarray(q.as_array() if isinstance(q, Su2Element) else q, dtype=float)
    a, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    # U = a - i b.sigma rotates by +theta about b
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = a * a + x * x - y * y - z * z
    r[..., 0, 1] = 2 * (x * y - a * z)
    r[..., 0, 2] = 2 * (x * z + a * y)
    r[..., 1, 0] = 2 * (x * y + a * z)
    r[..., 1, 1] = a * a - x * x + y * y - z * z
    r[..., 1, 2] = 2 * (y * z - a * x)
    r[..., 2, 0] = 2 * (x * z - a * y)
    r[..., 2, 1] = 2 * (y * z + a * x)
    r[..., 2, 2] = a * a - x * x - y * y + z * z
    return r
