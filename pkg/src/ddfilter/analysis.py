"""Quantitative analysis: dip fitting, filter sweeps and noise-model fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .modulation import modulation_trace
from .response import (
    CoherenceTrace,
    LineShape,
    NoiseLine,
    NoiseModel,
    QuadratureWarning,
    coherence_trace,
    integration_window,
)
from .sequence import SequenceSpec, build_timeline
from .spectrum import Peak, default_omega_grid, filter_spectrum_closed, peaks_1d

__all__ = [
    "Dip",
    "DipFit",
    "SweepMap",
    "DipPositions",
    "NoiseFit",
    "lorentzian_dips",
    "fit_double_lorentzian",
    "sweep_detuning",
    "sweep_pulse_width",
    "theory_dip_positions",
    "dip_positions_vs_detuning",
    "fit_noise_model",
    "central_jacobian",
]


@dataclass(frozen=True)
class Dip:
    center: float
    fwhm: float
    amplitude: float


@dataclass(frozen=True)
class DipFit:
    baseline: float
    dips: tuple
    residual_norm: float
    stderr: dict
    converged: bool = True
    significant: bool = True
    message: str = ""

    @property
    def centers(self) -> list[float]:
        return [d.center for d in self.dips]


def lorentzian_dips(tau, baseline, dips) -> np.ndarray:
    """``c - sum A (w/2)^2 / ((tau - tau_i)^2 + (w/2)^2)``."""
    tau = np.asarray(tau, dtype=float)
    out = np.full(tau.shape, float(baseline))
    for d in dips:
        hw2 = (0.5 * d.fwhm) ** 2
        out -= d.amplitude * hw2 / ((tau - d.center) ** 2 + hw2)
    return out


def central_jacobian(fun, p, rel_step=1e-6):
    """Central-difference Jacobian with per-parameter step ``rel_step * max(|p|, 1)``."""
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(fun(p))
    jac = np.empty((f0.size, p.size))
    for k in range(p.size):
        h = rel_step * max(abs(p[k]), 1.0)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        jac[:, k] = (np.asarray(fun(up)) - np.asarray(fun(dn))) / (2 * h)
    return jac


def _stderr(jac, resid, n_params):
    m = resid.size
    dof = max(m - n_params, 1)
    s2 = float(resid @ resid) / dof
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return np.full(n_params, np.nan)
    return np.sqrt(np.clip(np.diag(cov), 0, None))


def _noise_level(y):
    if y.size < 4:
        return 0.0
    d2 = np.diff(y, 2)
    return float(np.median(np.abs(d2 - np.median(d2))) / 0.6745 / math.sqrt(6.0))


def fit_double_lorentzian(trace, coherence=None, max_nfev: int = 2000) -> DipFit:
    """Fit one or two Lorentzian dips to a coherence trace.

    ``trace`` is a :class:`CoherenceTrace` or a tau array (then pass
    ``coherence``). Initial centres come from the two deepest local minima
    (a single minimum is split inside its half-depth width). A one-dip fit
    is always run as well; the two-dip result is kept only when it fits
    better and its dips are resolved: centres in range, separated by at
    least half their mean width, neither a spike far below the sampling
    step nor under a tenth of the other's depth.
    """
    if isinstance(trace, CoherenceTrace):
        tau, y = np.asarray(trace.tau, float), np.asarray(trace.coherence, float)
    else:
        tau, y = np.asarray(trace, float), np.asarray(coherence, float)
    if tau.size < 12:
        raise ValueError(f"need at least 12 trace points, got {tau.size}")
    order = np.argsort(tau)
    tau, y = tau[order], y[order]

    base0 = float(np.percentile(y, 90))
    depth = base0 - float(y.min())
    noise = _noise_level(y)
    # the deepest of n pure-noise samples sits about sqrt(2 ln n) sigma low
    if depth <= max((3.0 + math.sqrt(2.0 * math.log(y.size))) * noise, 1e-9):
        return DipFit(base0, (), 0.0, {}, True, False, "no significant dip")

    # work in normalised tau for conditioning
    t0, span = tau[0], tau[-1] - tau[0]
    u = (tau - t0) / span

    inner = np.arange(1, y.size - 1)
    minima = inner[(y[inner] < y[inner - 1]) & (y[inner] <= y[inner + 1])]
    if minima.size == 0:
        minima = np.array([int(np.argmin(y))])
    minima = minima[np.argsort(y[minima])][:2]
    if minima.size == 2 and base0 - y[minima[1]] < 0.15 * (base0 - y[minima[0]]):
        # a shallow secondary minimum is a side lobe or noise, not a second dip
        minima = minima[:1]
    i0 = int(minima[0])
    w0 = _half_depth_width(u, y, i0, base0)
    if minima.size == 2:
        starts = [(u[i], base0 - y[i]) for i in sorted(minima)]
    else:
        # straddle the single minimum inside its half-depth width
        starts = [(u[i0] - 0.25 * w0, base0 - y[i0]), (u[i0] + 0.25 * w0, base0 - y[i0])]

    def model(p, n):
        out = np.full(u.shape, p[0])
        for k in range(n):
            a, c, w = p[1 + 3 * k: 4 + 3 * k]
            hw2 = (0.5 * w) ** 2
            out = out - abs(a) * hw2 / ((u - c) ** 2 + hw2)
        return out

    def run(p0, n):
        fun = lambda p: model(p, n) - y
        res = optimize.least_squares(fun, p0, jac=lambda p: central_jacobian(fun, p),
                                     method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                                     max_nfev=max_nfev)
        return res, fun

    du = float(np.median(np.diff(u)))

    def plausible(p, n):
        c = p[2::3][:n]
        w = np.abs(p[3::3][:n])
        a = np.abs(p[1::3][:n])
        if np.any(c < 0) or np.any(c > 1) or np.any(w < 0.1 * du) or np.any(w > 2):
            return False
        if n == 2:
            # overlapping dips, or one far weaker than its partner, are not resolved
            if abs(c[0] - c[1]) < 0.5 * w.mean() or a.min() < 0.1 * a.max():
                return False
        return True

    res1, fun1 = run(np.array([base0, base0 - y[i0], u[i0], w0]), 1)
    p0 = [base0]
    for c, a in starts:
        p0 += [a, c, w0]
    res2, fun2 = run(np.array(p0), 2)
    cost1 = float(res1.fun @ res1.fun)
    cost2 = float(res2.fun @ res2.fun)
    if plausible(res2.x, 2) and (cost2 < cost1 or not plausible(res1.x, 1)):
        res, fun, n = res2, fun2, 2
    else:
        res, fun, n = res1, fun1, 1
    p = res.x
    jac = central_jacobian(fun, p)
    err = _stderr(jac, fun(p), p.size)

    dips, errs = [], {"baseline": float(err[0])}
    for k in range(n):
        a, c, w = p[1 + 3 * k: 4 + 3 * k]
        dips.append(Dip(float(t0 + c * span), float(abs(w) * span), float(abs(a))))
    idx = np.argsort([d.center for d in dips])
    dips = [dips[i] for i in idx]
    for rank, i in enumerate(idx, start=1):
        e = err[1 + 3 * i: 4 + 3 * i]
        errs[f"amplitude{rank}"] = float(e[0])
        errs[f"center{rank}"] = float(e[1] * span)
        errs[f"fwhm{rank}"] = float(e[2] * span)
    converged = bool(res.success)
    msg = "" if converged else f"least squares did not converge: {res.message}"
    if any(not (tau[0] <= d.center <= tau[-1]) for d in dips):
        converged = False
        msg = (msg + "; " if msg else "") + "dip centre outside the fitted range"
    return DipFit(float(p[0]), tuple(dips), float(np.linalg.norm(res.fun)), errs, converged, True, msg)


def _half_depth_width(u, y, i, base):
    half = base - 0.5 * (base - y[i])
    lo = i
    while lo > 0 and y[lo] < half:
        lo -= 1
    hi = i
    while hi < y.size - 1 and y[hi] < half:
        hi += 1
    return max(float(u[hi] - u[lo]), 2.0 / y.size)


# --- filter sweeps ---------------------------------------------------------

@dataclass(frozen=True)
class SweepMap:
    """Filter function over ``axis2`` (omega, rad/s) for every ``axis1`` value."""

    parameter: str
    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray
    peaks: tuple

    def splitting(self) -> np.ndarray:
        """Separation of the two strongest peaks per row (0 for a single peak)."""
        out = np.full(self.axis1.size, np.nan)
        for i, row in enumerate(self.peaks):
            if len(row) == 1:
                out[i] = 0.0
            elif len(row) >= 2:
                top = sorted(row, key=lambda p: p.height)[-2:]
                out[i] = abs(top[1].position - top[0].position)
        return out

    def peak_pair(self, i):
        """(lower, upper) peaks of row ``i`` among the two strongest; None if unsplit."""
        row = self.peaks[i]
        if len(row) < 2:
            return None
        top = sorted(row, key=lambda p: p.height)[-2:]
        return tuple(sorted(top, key=lambda p: p.position))


def _sweep(spec, name, values, omega, min_height_fraction):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError(f"empty {name} list")
    if omega is None:
        omega = default_omega_grid(spec.total_time, spec.omega_dd)
    omega = np.asarray(omega, dtype=float)
    rows, peaks = [], []
    for v in values:
        tl = build_timeline(spec.with_(**{name: float(v)}))
        fs = filter_spectrum_closed(modulation_trace(tl), omega)
        f = fs.filter
        rows.append(f)
        peaks.append(tuple(peaks_1d(omega, f, min_height_fraction)))
    return SweepMap(name, values, omega, np.vstack(rows), tuple(peaks))


def sweep_detuning(spec: SequenceSpec, detunings, omega=None, min_height_fraction: float = 0.2) -> SweepMap:
    """Filter function for each detuning (rad/s) on a shared omega grid."""
    return _sweep(spec, "detuning", detunings, omega, min_height_fraction)


def sweep_pulse_width(spec: SequenceSpec, widths, omega=None, min_height_fraction: float = 0.2) -> SweepMap:
    """Filter function for each pulse width (s); the Rabi rate follows ``pi / t_p``."""
    widths = np.asarray(widths, dtype=float)
    if np.any(widths >= spec.tau):
        raise ValueError("every pulse width must be shorter than tau")
    return _sweep(spec, "t_p", widths, omega, min_height_fraction)


# --- dip positions ---------------------------------------------------------

@dataclass(frozen=True)
class DipPositions:
    detuning: float
    tau1: float
    tau2: float
    fit: Optional[DipFit] = None
    theory_tau1: float = float("nan")
    theory_tau2: float = float("nan")


def theory_dip_positions(spec: SequenceSpec, omega_c: float, taus, half_width: float = 0.4,
                         min_height_fraction: float = 0.2):
    """Map the filter peaks onto pulse spacings.

    For every ``tau`` the two strongest filter peaks ``w1 <= w2`` are
    located; a dip is expected where a peak crosses the line centre
    ``omega_c``. The lower branch ``w1(tau) = omega_c`` gives the shorter
    spacing ``tau1``, the upper branch gives ``tau2``. Returns ``(tau1,
    tau2)`` by linear interpolation, nan where no crossing is found.
    """
    taus = np.sort(np.asarray(taus, dtype=float))
    w1 = np.full(taus.size, np.nan)
    w2 = np.full(taus.size, np.nan)
    for i, tau in enumerate(taus):
        s = spec.with_(tau=float(tau))
        tl = build_timeline(s)
        om = default_omega_grid(tl.total_time, s.omega_dd, half_width)
        f = filter_spectrum_closed(modulation_trace(tl), om).filter
        pk = peaks_1d(om, f, min_height_fraction)
        if not pk:
            continue
        top = sorted(sorted(pk, key=lambda p: p.height)[-2:], key=lambda p: p.position)
        w1[i], w2[i] = top[0].position, top[-1].position
    return _crossing(taus, w1 - omega_c), _crossing(taus, w2 - omega_c)


def _crossing(x, g):
    ok = np.isfinite(g)
    x, g = x[ok], g[ok]
    idx = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)
    if idx.size == 0:
        return float("nan")
    i = idx[0]
    if g[i] == g[i + 1]:
        return float(x[i])
    return float(x[i] - g[i] * (x[i + 1] - x[i]) / (g[i + 1] - g[i]))


def dip_positions_vs_detuning(spec: SequenceSpec, detunings, noise: NoiseModel, taus,
                              theory: bool = True) -> list[DipPositions]:
    """Fit the dips of simulated coherence traces for every detuning.

    ``tau1 == tau2`` when only one dip is resolved. The theory columns use
    :func:`theory_dip_positions` with the first noise line as ``omega_c``.
    """
    out = []
    omega_c = noise.lines[0].center if noise.lines else float("nan")
    for d in np.asarray(detunings, dtype=float):
        s = spec.with_(detuning=float(d))
        tr = coherence_trace(s, taus, noise)
        fit = fit_double_lorentzian(tr)
        c = fit.centers
        t1, t2 = (c[0], c[-1]) if c else (float("nan"), float("nan"))
        th = theory_dip_positions(s, omega_c, taus) if theory else (float("nan"), float("nan"))
        out.append(DipPositions(float(d), t1, t2, fit, *th))
    return out


# --- noise-model fitting ---------------------------------------------------

@dataclass(frozen=True)
class NoiseFit:
    model: NoiseModel
    stderr: dict
    residual_norm: float
    converged: bool
    nfev: int = 0

    @property
    def line(self) -> NoiseLine:
        return self.model.lines[0]


class _CachedForward:
    """Filter-function forward model on fixed per-tau frequency grids.

    The filter of each timeline does not depend on the noise, so it is
    tabulated once and the spectral overlap becomes a Simpson sum. Grids
    cover the filter main lobe and a wide band around the initial line.
    """

    def __init__(self, spec, taus, noise, line_index, bins_per_fourier=10, line_widths=20.0):
        self.taus = np.asarray(taus, dtype=float)
        self.noise = noise
        self.line_index = line_index
        ln = noise.lines[line_index]
        self.grids, self.filters, self.t_totals = [], [], []
        for tau in self.taus:
            s = spec.with_(tau=float(tau))
            tl = build_timeline(s)
            T = tl.total_time
            wide = NoiseModel((replace(ln, fwhm=ln.fwhm * line_widths / 6.0),), noise.gamma_e)
            iv = integration_window(tl, wide)
            step = 2 * math.pi / T / bins_per_fourier
            pts = []
            for a, b in iv:
                n = int(math.ceil((b - a) / step))
                n += n % 2  # even panel count for Simpson
                pts.append(np.linspace(a, b, n + 1))
            tr = modulation_trace(tl)
            filt = [filter_spectrum_closed(tr, p).filter for p in pts]
            self.grids.append(pts)
            self.filters.append(filt)
            self.t_totals.append(T)

    def exponent(self, line: NoiseLine) -> np.ndarray:
        model = NoiseModel((line,), self.noise.gamma_e)
        g2 = self.noise.gamma_e ** 2
        out = np.empty(self.taus.size)
        for i, (pts, filt, T) in enumerate(zip(self.grids, self.filters, self.t_totals)):
            acc = 0.0
            for p, f in zip(pts, filt):
                y = model.spectrum(p) * f
                h = p[1] - p[0]
                acc += h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
            out[i] = 0.5 * g2 / (2 * math.pi) * 2.0 * acc * T * T
        return out

    def coherence(self, line: NoiseLine) -> np.ndarray:
        return np.exp(-self.exponent(line))


def fit_noise_model(trace: CoherenceTrace, initial: NoiseModel, spec: Optional[SequenceSpec] = None,
                    line_index: int = 0, max_nfev: int = 200) -> NoiseFit:
    """Least-squares fit of ``(b_rms, centre, fwhm)`` of one broadened line.

    The forward model is the finite-pulse filter-function coherence for
    ``spec`` (by default the sequence stored on the trace), so fitting with
    a wrong detuning yields biased parameters rather than a failed fit.
    Standard errors come from the Jacobian at convergence; ``t2star`` is
    reported alongside ``fwhm``.
    """
    spec = spec or trace.spec
    if spec is None:
        raise ValueError("a sequence spec is required")
    tau = np.asarray(trace.tau, dtype=float)
    y = np.asarray(trace.coherence, dtype=float)
    depth = 1.0 - float(y.min())
    if depth <= max(3 * _noise_level(y), 1e-9):
        raise ValueError(f"no resolvable dip in the trace (depth {depth:.3g})")
    line0 = initial.lines[line_index]
    if line0.shape is LineShape.DELTA:
        raise ValueError("cannot fit the width of a delta line")
    fwd = _CachedForward(spec, tau, initial, line_index)
    scale = np.array([line0.b_rms, line0.center, line0.fwhm])

    def line_of(p):
        b, c, w = p * scale
        return replace(line0, center=float(c), fwhm=float(abs(w)), b_rms=float(abs(b)))

    def resid(p):
        return fwd.coherence(line_of(p)) - y

    res = optimize.least_squares(resid, np.ones(3), jac=lambda p: central_jacobian(resid, p),
                                 method="lm", xtol=1e-13, ftol=1e-13, gtol=1e-13, max_nfev=max_nfev)
    p = res.x
    jac = central_jacobian(resid, p)
    err = _stderr(jac, resid(p), 3) * scale
    ln = line_of(p)
    stderr = {
        "b_rms": float(err[0]),
        "center": float(err[1]),
        "fwhm": float(err[2]),
        "t2star": float(2.0 / ln.fwhm ** 2 * err[2]),
    }
    lines = list(initial.lines)
    lines[line_index] = ln
    return NoiseFit(initial.with_lines(lines), stderr, float(np.linalg.norm(res.fun)),
                    bool(res.success), int(res.nfev))
