"""Spectra of the modulation functions and the filter function ``|f~(w)|^2``.

``f~_i(w) = (1/T) int_0^T f_i(t) exp(-i w t) dt``. Two routes are provided:
an exact per-segment closed form and a sampled (trapezoid + end-correction)
transform that serves as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .modulation import ModulationTrace

__all__ = [
    "FilterSpectrum",
    "Peak",
    "default_omega_grid",
    "filter_spectrum_closed",
    "filter_spectrum_dft",
    "find_peaks",
    "window_integral",
]

_CHUNK = 1 << 22  # complex elements per work block


@dataclass(frozen=True)
class FilterSpectrum:
    omega: np.ndarray
    components: np.ndarray  # (3, M) complex
    t_total: float
    meta: dict = field(default_factory=dict)

    @property
    def filter(self) -> np.ndarray:
        c = self.components
        return (c.real ** 2 + c.imag ** 2).sum(axis=0)

    @property
    def freq_hz(self) -> np.ndarray:
        return self.omega / (2 * math.pi)


@dataclass(frozen=True)
class Peak:
    position: float  # rad/s
    height: float
    fwhm: float  # rad/s, nan if a half-height crossing lies off the grid


def default_omega_grid(t_total: float, omega_center: float, half_width: float = 0.15,
                       bins_per_fourier: int = 20) -> np.ndarray:
    """Uniform grid ``omega_center * (1 +- half_width)`` at ``(2 pi / T) / bins_per_fourier``."""
    step = 2 * math.pi / t_total / bins_per_fourier
    lo = omega_center * (1 - half_width)
    hi = omega_center * (1 + half_width)
    n = int(math.floor((hi - lo) / step)) + 1
    # keep omega_center exactly on the grid
    k0 = int(round((omega_center - lo) / step))
    return omega_center + (np.arange(n) - k0) * step


def window_integral(x: np.ndarray, d) -> np.ndarray:
    """``int_0^d exp(-i x s) ds`` without cancellation near ``x = 0``.

    Uses ``1 - exp(-iu) = 2 sin^2(u/2) + i sin(u)`` so no resonant
    denominator appears; exact at ``x = 0`` as well.
    """
    u = x * d
    return d * (np.sinc(u / np.pi) - 1j * np.sin(0.5 * u) * np.sinc(u / (2 * np.pi)))


def filter_spectrum_closed(trace: ModulationTrace, omega, meta: Optional[dict] = None) -> FilterSpectrum:
    """Exact component spectra from the piecewise-rotation form of ``f``."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.size == 0:
        raise ValueError("omega grid is empty")
    T = trace.t_total
    out = np.zeros((3, omega.size), dtype=complex)
    if len(trace) == 0 or T <= 0:
        return FilterSpectrum(omega, out, T, dict(meta or {}))

    a, b, c = trace.coefficients()
    keys = np.stack((trace.duration, trace.rate), axis=1)
    groups, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    for g, (d, nu) in enumerate(groups):
        sel = np.flatnonzero(inverse == g)
        t0 = trace.start[sel]
        ag, bg, cg = a[sel].T, b[sel].T, c[sel].T
        step = max(1, _CHUNK // max(1, len(sel)))
        for lo in range(0, omega.size, step):
            w = omega[lo:lo + step]
            e0 = window_integral(w, d)
            if nu > 0:
                em = window_integral(w - nu, d)
                ep = window_integral(w + nu, d)
                ecos = 0.5 * (em + ep)
                esin = -0.5j * (em - ep)
            phase = np.exp(-1j * np.outer(t0, w))
            acc = (ag @ phase) * e0
            if nu > 0:
                acc += (bg @ phase) * ecos + (cg @ phase) * esin
            else:
                acc += (bg @ phase) * e0
            out[:, lo:lo + step] += acc
    out /= T
    return FilterSpectrum(omega, out, T, dict(meta or {}))


def _sample_plan(trace: ModulationTrace, oversampling: int):
    dmin = trace.duration[trace.duration > 0].min()
    counts = np.maximum(oversampling, np.ceil(oversampling * trace.duration / dmin - 1e-9)).astype(int)
    return counts


def filter_spectrum_dft(trace: ModulationTrace, oversampling: int = 64, omega=None,
                        meta: Optional[dict] = None) -> FilterSpectrum:
    """Component spectra by direct summation over uniform samples of ``f``.

    Every segment is sampled on its own uniform grid with at least
    ``oversampling`` intervals (the shortest segment gets exactly that many).
    The trapezoid sum is corrected with the Euler-Maclaurin end terms up to
    fourth order in the step, using one-sided derivatives of ``f`` inside
    each segment.
    """
    if oversampling < 4:
        raise ValueError(f"oversampling must be >= 4 samples per shortest segment, got {oversampling}")
    T = trace.t_total
    if omega is None:
        raise ValueError("an omega grid is required")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.zeros((3, omega.size), dtype=complex)
    if len(trace) == 0 or T <= 0:
        return FilterSpectrum(omega, out, T, dict(meta or {}))

    keep = np.flatnonzero(trace.duration > 0)
    counts = _sample_plan(trace, oversampling)[keep]
    h = trace.duration[keep] / counts
    seg_of = np.repeat(keep, counts + 1)
    j = np.concatenate([np.arange(n + 1) for n in counts])
    hs = np.repeat(h, counts + 1)
    s = j * hs
    t = trace.start[seg_of] + s
    wts = hs.copy()
    ends = (j == 0) | (j == np.repeat(counts, counts + 1))
    wts[ends] *= 0.5
    samples = trace._segment_derivative(seg_of, s, 0) * wts[:, None]

    # end-point derivatives of f, orders 0..3, at both ends of each segment
    starts, stops = trace.start[keep], trace.start[keep] + trace.duration[keep]
    dl = [trace._segment_derivative(keep, np.zeros(len(keep)), n) for n in range(4)]
    dr = [trace._segment_derivative(keep, trace.duration[keep], n) for n in range(4)]

    step = max(1, _CHUNK // max(1, len(t)))
    for lo in range(0, omega.size, step):
        w = omega[lo:lo + step]
        acc = samples.T @ np.exp(-1j * np.outer(t, w))
        iw = -1j * w
        for side, (tt, der) in ((+1, (stops, dr)), (-1, (starts, dl))):
            ph = np.exp(-1j * np.outer(tt, w))  # (K, Mc)
            # g' and g''' of g = f(t) exp(-i w t) via Leibniz
            g1 = der[1][:, :, None] + der[0][:, :, None] * iw
            g3 = (der[3][:, :, None] + 3 * der[2][:, :, None] * iw
                  + 3 * der[1][:, :, None] * iw ** 2 + der[0][:, :, None] * iw ** 3)
            corr = (-(h ** 2) / 12)[:, None, None] * g1 + (h ** 4 / 720)[:, None, None] * g3
            acc += side * np.einsum("kim,km->im", corr, ph)
        out[:, lo:lo + step] = acc
    out /= T
    return FilterSpectrum(omega, out, T, dict(meta or {}))


def find_peaks(fs: FilterSpectrum, min_height_fraction: float = 0.2, values=None) -> list[Peak]:
    """Local maxima above ``min_height_fraction * max``.

    Positions and heights are refined by a three-point parabola; the FWHM
    comes from linear interpolation of the half-height crossings.
    """
    y = np.asarray(fs.filter if values is None else values, dtype=float)
    return peaks_1d(np.asarray(fs.omega, dtype=float), y, min_height_fraction)


def peaks_1d(x: np.ndarray, y: np.ndarray, min_height_fraction: float = 0.2) -> list[Peak]:
    if y.size < 3:
        return []
    ymax = y.max()
    if not ymax > 0:
        return []
    thr = min_height_fraction * ymax
    inner = np.arange(1, y.size - 1)
    is_max = (y[inner] > y[inner - 1]) & (y[inner] >= y[inner + 1]) & (y[inner] >= thr)
    peaks = []
    dx = np.diff(x)
    for i in inner[is_max]:
        ym, y0, yp = y[i - 1], y[i], y[i + 1]
        den = ym - 2 * y0 + yp
        p = 0.5 * (ym - yp) / den if den != 0 else 0.0
        pos = x[i] + p * (dx[i] if p > 0 else dx[i - 1])
        height = y0 - 0.25 * (ym - yp) * p
        half = 0.5 * height
        left = _crossing(x, y, i, half, -1)
        right = _crossing(x, y, i, half, +1)
        fwhm = right - left if left is not None and right is not None else float("nan")
        peaks.append(Peak(float(pos), float(height), float(fwhm)))
    return peaks


def _crossing(x, y, i, level, direction):
    j = i
    while 0 <= j + direction < y.size:
        k = j + direction
        if y[k] < level:
            # linear interpolation between j (above) and k (below)
            frac = (y[j] - level) / (y[j] - y[k])
            return x[j] + frac * (x[k] - x[j])
        j = k
    return None
