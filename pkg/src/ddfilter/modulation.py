"""Toggling-frame modulation functions.

The vector ``f(t)`` is defined by ``sum_i f_i(t) sigma_i = U_p(t)^dagger sigma_z U_p(t)``.
Inside one control segment the pulse propagator advances by a fixed rotation,
so ``f`` rotates uniformly about a fixed axis. Each segment is stored as
``f(t0 + s) = rot(axis, rate * s) f0``, which expands to
``A + B cos(rate s) + C sin(rate s)`` and is what the closed-form spectra use.

Sign convention: during an x pulse at zero detuning, ``f`` turns from +z
towards +y (``f = (0, 1, 0)`` half-way through the first pulse).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .propagation import cumulative_quaternions, compose, rotation_matrix, _rotation_quaternions
from .sequence import Timeline

__all__ = [
    "ModulationTrace",
    "modulation_trace",
    "modulation_at",
    "dense_times",
    "DEFAULT_SAMPLES_PER_SEGMENT",
]

DEFAULT_SAMPLES_PER_SEGMENT = 20


def _bloch_z_image(q: np.ndarray) -> np.ndarray:
    """Third row of the rotation matrix of ``q``: the vector ``R^T z``."""
    r = rotation_matrix(q)
    return r[..., 2, :]


@dataclass(frozen=True)
class ModulationTrace:
    """Piecewise-analytic modulation vector over a timeline.

    Arrays are indexed by segment: ``start`` and ``duration`` (s), ``f0``
    (initial vector, shape (K, 3)), ``axis`` (unit, (K, 3)) and ``rate``
    (rad/s, >= 0).
    """

    start: np.ndarray
    duration: np.ndarray
    f0: np.ndarray
    axis: np.ndarray
    rate: np.ndarray
    t_total: float
    timeline: Timeline

    def __len__(self):
        return len(self.start)

    def coefficients(self):
        """Return ``(A, B, C)`` with ``f(t0 + s) = A + B cos(rate s) + C sin(rate s)``."""
        par = np.sum(self.axis * self.f0, axis=1)[:, None] * self.axis
        return par, self.f0 - par, np.cross(self.axis, self.f0)

    def segment_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.start, t, side="right") - 1
        return np.clip(idx, 0, len(self.start) - 1)

    def __call__(self, t) -> np.ndarray:
        """Evaluate ``f`` at times ``t``; returns shape ``t.shape + (3,)``."""
        t = np.asarray(t, dtype=float)
        if len(self.start) == 0:
            return np.broadcast_to(np.array([0.0, 0.0, 1.0]), t.shape + (3,)).copy()
        k = self.segment_index(t)
        s = t - self.start[k]
        a, b, c = self.coefficients()
        ph = (self.rate[k] * s)[..., None]
        return a[k] + b[k] * np.cos(ph) + c[k] * np.sin(ph)

    def end_values(self) -> np.ndarray:
        """``f`` at the end of every segment, before any instantaneous kick."""
        a, b, c = self.coefficients()
        ph = (self.rate * self.duration)[:, None]
        return a + b * np.cos(ph) + c * np.sin(ph)

    def derivatives(self, t, order: int) -> np.ndarray:
        """``order``-th time derivative of ``f`` inside the segment containing ``t``."""
        t = np.asarray(t, dtype=float)
        k = self.segment_index(t)
        return self._segment_derivative(k, t - self.start[k], order)

    def _segment_derivative(self, k, s, order: int) -> np.ndarray:
        a, b, c = self.coefficients()
        w = self.rate[k]
        ph = w * s
        # d^n/ds^n of cos and sin, by quarter-turn phase shifts
        shift = 0.5 * np.pi * order
        val = (b[k] * np.cos(ph + shift)[..., None] + c[k] * np.sin(ph + shift)[..., None])
        val = val * (w ** order)[..., None]
        if order == 0:
            val = val + a[k]
        return val


def modulation_trace(tl: Timeline) -> ModulationTrace:
    """Build the piecewise representation of ``f`` for a timeline."""
    segs = tl.segments
    k = len(segs)
    cum = cumulative_quaternions(tl)
    dur = np.array([s.duration for s in segs], dtype=float)
    start = np.concatenate(([0.0], np.cumsum(dur)[:-1])) if k else np.zeros(0)
    if k:
        start[-1] = tl.total_time - dur[-1]
    h = np.array([s.h for s in segs], dtype=float).reshape(k, 3)
    rate = np.linalg.norm(h, axis=1)

    # f0 comes from U_p at the segment start; that is after the previous kick
    r = rotation_matrix(cum[:-1])
    f0 = r[:, 2, :]
    n = np.zeros((k, 3))
    nz = rate > 0
    n[nz] = h[nz] / rate[nz, None]
    n[~nz] = (0.0, 0.0, 1.0)
    # f(s) = R_k^T R(n, -rate s) z = rot(-R_k^T n, rate s) f0
    axis = -np.einsum("kji,kj->ki", r, n)
    return ModulationTrace(start, dur, f0, axis, rate, float(tl.total_time), tl)


def modulation_at(tl: Timeline, t: float) -> np.ndarray:
    """Evaluate ``f(t)`` by direct conjugation ``U_p^dagger(t) sigma_z U_p(t)``.

    Independent of :func:`modulation_trace`: the propagator is advanced to
    ``t`` and the z image is read off its rotation matrix.
    """
    t = float(t)
    if not (0.0 <= t <= tl.total_time):
        raise ValueError(f"t={t!r} outside [0, {tl.total_time!r}]")
    if not tl.segments:
        return np.array([0.0, 0.0, 1.0])
    cum = cumulative_quaternions(tl)
    edges = tl.boundaries()
    k = int(np.searchsorted(edges, t, side="right") - 1)
    if k >= len(tl.segments):
        return _bloch_z_image(cum[-1])
    seg = tl.segments[k]
    partial = _rotation_quaternions(np.asarray(seg.h, dtype=float), np.array([t - edges[k]]))[0]
    return _bloch_z_image(compose(partial, cum[k]))


def dense_times(tl: Timeline, per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT) -> np.ndarray:
    """Sample times with ``per_segment`` points in every segment plus the end point."""
    if per_segment < 1:
        raise ValueError("per_segment must be >= 1")
    edges = tl.boundaries()
    if len(edges) < 2:
        return np.array([0.0])
    frac = np.arange(per_segment) / per_segment
    t = (edges[:-1, None] + np.diff(edges)[:, None] * frac).ravel()
    return np.append(t, tl.total_time)
