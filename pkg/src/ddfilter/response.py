"""Coherence response of the sensor qubit to classical noise.

Three routes are provided:

* :func:`coherence_point` gives the Gaussian filter-function result
  ``L = exp(-1/2 * gamma^2/(2 pi) * int S(w) |f~(w)|^2 dw * T^2)``;
* :func:`baseline_coherence` gives the exact noise-free signal left by pulse
  errors, ``<+x| U_p^dagger sigma_x U_p |+x>``;
* :func:`mc_coherence` gives a Monte-Carlo average over synthesised fields
  ``B_z(t)`` using the first-order Magnus rotation ``beta``.

The spectrum is two-sided with ``(1/2 pi) int S dw = b_rms^2`` per line.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .modulation import ModulationTrace, modulation_trace
from .propagation import cumulative_quaternions, rotation_matrix
from .sequence import SequenceSpec, Timeline, build_timeline
from .spectrum import filter_spectrum_closed

__all__ = [
    "GAMMA_E",
    "LineShape",
    "NoiseLine",
    "NoiseModel",
    "CoherenceTrace",
    "CoherenceResult",
    "MCResult",
    "QuadratureWarning",
    "coherence_point",
    "coherence_trace",
    "baseline_coherence",
    "mc_coherence",
    "beta_from_tones",
    "coherence_from_beta",
    "integration_window",
    "gauss_kronrod",
]

GAMMA_E = -2 * math.pi * 28e9  # rad/(s T)
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class QuadratureWarning(RuntimeWarning):
    pass


class LineShape(str, enum.Enum):
    LORENTZIAN = "lorentzian"
    GAUSSIAN = "gaussian"
    DELTA = "delta"


@dataclass(frozen=True)
class NoiseLine:
    """One spectral line: centre and FWHM in rad/s, rms field in tesla.

    A Lorentzian of FWHM ``G`` has correlation ``exp(-G |t| / 2)``, so the
    nuclear dephasing time is ``T2n* = 2 / G``.
    """

    center: float
    fwhm: float
    b_rms: float
    shape: LineShape = LineShape.LORENTZIAN

    def __post_init__(self):
        shape = self.shape if isinstance(self.shape, LineShape) else LineShape(str(self.shape).lower())
        object.__setattr__(self, "shape", shape)
        if self.b_rms < 0:
            raise ValueError("b_rms must be >= 0")
        if shape is not LineShape.DELTA and not self.fwhm > 0:
            raise ValueError("fwhm must be > 0 for broadened lines")

    @classmethod
    def from_t2star(cls, center: float, t2star: float, b_rms: float) -> "NoiseLine":
        return cls(center, 2.0 / t2star, b_rms, LineShape.LORENTZIAN)

    @property
    def t2star(self) -> float:
        return 2.0 / self.fwhm

    def density(self, x) -> np.ndarray:
        """Unit-area line profile evaluated at offset ``x`` from the centre."""
        x = np.asarray(x, dtype=float)
        if self.shape is LineShape.LORENTZIAN:
            hw = 0.5 * self.fwhm
            return hw / math.pi / (x * x + hw * hw)
        if self.shape is LineShape.GAUSSIAN:
            s = self.fwhm * _FWHM_TO_SIGMA
            return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return np.zeros_like(x)

    def quantile(self, u) -> np.ndarray:
        """Offset from the centre at cumulative probability ``u``."""
        u = np.asarray(u, dtype=float)
        if self.shape is LineShape.LORENTZIAN:
            return 0.5 * self.fwhm * np.tan(math.pi * (u - 0.5))
        if self.shape is LineShape.GAUSSIAN:
            return self.fwhm * _FWHM_TO_SIGMA * special.ndtri(u)
        return np.zeros_like(u)


@dataclass(frozen=True)
class NoiseModel:
    lines: tuple = ()
    gamma_e: float = GAMMA_E

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))

    def spectrum(self, omega) -> np.ndarray:
        """Two-sided ``S(w)`` in T^2 s for the broadened lines (delta lines excluded)."""
        omega = np.asarray(omega, dtype=float)
        s = np.zeros_like(omega)
        for ln in self.lines:
            if ln.shape is LineShape.DELTA:
                continue
            s = s + math.pi * ln.b_rms ** 2 * (ln.density(omega - ln.center) + ln.density(omega + ln.center))
        return s

    @property
    def b_rms_total(self) -> float:
        return math.sqrt(sum(ln.b_rms ** 2 for ln in self.lines))

    def with_lines(self, lines) -> "NoiseModel":
        return NoiseModel(tuple(lines), self.gamma_e)


@dataclass(frozen=True)
class CoherenceResult:
    value: float
    exponent: float
    abserr: float
    converged: bool


@dataclass(frozen=True)
class CoherenceTrace:
    tau: np.ndarray
    coherence: np.ndarray
    baseline: Optional[np.ndarray] = None
    flags: Optional[np.ndarray] = None
    spec: Optional[SequenceSpec] = None
    noise: Optional[NoiseModel] = None

    @property
    def combined(self) -> Optional[np.ndarray]:
        """Baseline times filter-function coherence.

        A heuristic product only; there is no derivation behind combining
        the two factors this way.
        """
        if self.baseline is None:
            return None
        return self.baseline * self.coherence


@dataclass(frozen=True)
class MCResult:
    mean: float
    stderr: float
    mean_cos: float
    stderr_cos: float
    beta: np.ndarray = field(repr=False)


# --- adaptive Gauss-Kronrod (7/15), vectorised over panels -----------------

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate((-_XGK[:-1], _XGK[::-1]))            # 15 nodes, ascending
_KW = np.concatenate((_WGK[:-1], _WGK[::-1]))
_GW = np.zeros(15)
_GW[1:7:2] = _WG[:3]
_GW[7] = _WG[3]
_GW[9:15:2] = _WG[2::-1]


def gauss_kronrod(func, edges, rtol=1e-6, atol=0.0, max_iter=40, max_panels=200_000):
    """Integrate a vectorised ``func`` over the panels delimited by ``edges``.

    ``edges`` is a list of (lo, hi) intervals. Panels whose Kronrod-Gauss
    difference exceeds their share of the tolerance are bisected until the
    summed estimate meets ``max(atol, rtol * |I|)``.

    Returns ``(integral, abserr, converged)``.
    """
    lo = np.concatenate([np.asarray(e[0], dtype=float).ravel() for e in edges])
    hi = np.concatenate([np.asarray(e[1], dtype=float).ravel() for e in edges])
    done_val = 0.0
    done_err = 0.0
    for _ in range(max_iter):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        x = mid[:, None] + half[:, None] * _NODES
        fx = np.asarray(func(x.ravel()), dtype=float).reshape(x.shape)
        k = half * (fx @ _KW)
        g = half * (fx @ _GW)
        err = np.abs(k - g)
        total = done_val + k.sum()
        tol = max(atol, rtol * abs(total))
        total_err = done_err + err.sum()
        if total_err <= tol:
            return total, total_err, True
        # panels below their proportional share are frozen
        share = tol * (hi - lo) / max(np.sum(hi - lo), 1e-300)
        bad = err > 0.5 * share
        done_val += k[~bad].sum()
        done_err += err[~bad].sum()
        lo, hi = lo[bad], hi[bad]
        if 2 * lo.size > max_panels:
            break
        m = 0.5 * (lo + hi)
        lo, hi = np.concatenate((lo, m)), np.concatenate((m, hi))
    return total, total_err, False


def integration_window(tl: Timeline, noise: NoiseModel, lobe: float = 0.15, n_widths: float = 6.0):
    """Positive-frequency intervals covering each broadened line (+- n_widths FWHM)
    and the filter main lobe ``omega_dd * (1 +- lobe)``."""
    iv = []
    for ln in noise.lines:
        if ln.shape is LineShape.DELTA or ln.b_rms == 0:
            continue
        iv.append((max(0.0, ln.center - n_widths * ln.fwhm), ln.center + n_widths * ln.fwhm))
    if tl.spec is not None and iv:
        w = tl.spec.omega_dd
        iv.append((w * (1 - lobe), w * (1 + lobe)))
    iv.sort()
    merged = []
    for a, b in iv:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def _panels(intervals, width):
    out_lo, out_hi = [], []
    for a, b in intervals:
        n = max(1, int(math.ceil((b - a) / width)))
        e = np.linspace(a, b, n + 1)
        out_lo.append(e[:-1])
        out_hi.append(e[1:])
    return list(zip(out_lo, out_hi))


def noise_exponent(trace: ModulationTrace, noise: NoiseModel, rtol: float = 1e-6):
    """Exponent ``chi`` with ``L = exp(-chi)``; returns ``(chi, abserr, converged)``."""
    T = trace.t_total
    g2 = noise.gamma_e ** 2
    chi, err, ok = 0.0, 0.0, True
    if T <= 0:
        return chi, err, ok

    def filt(w):
        return filter_spectrum_closed(trace, w).filter

    for ln in noise.lines:
        if ln.shape is LineShape.DELTA and ln.b_rms > 0:
            chi += 0.5 * g2 * ln.b_rms ** 2 * float(filt(np.array([ln.center]))[0]) * T * T
    intervals = integration_window(trace.timeline, noise)
    if intervals:
        panel = 2 * math.pi / T
        edges = _panels(intervals, panel)
        # S and |f~|^2 are both even: integrate w > 0 and double
        val, err, ok = gauss_kronrod(lambda w: noise.spectrum(w) * filt(w), edges, rtol=rtol)
        pref = 0.5 * g2 / (2 * math.pi) * 2.0 * T * T
        chi += pref * val
        err *= pref
    return chi, err, ok


def coherence_point(tl: Timeline, noise: NoiseModel, rtol: float = 1e-6, full_output: bool = False):
    """Filter-function coherence for one timeline.

    A non-converged quadrature raises :class:`QuadratureWarning` and is
    flagged in the full output.
    """
    trace = modulation_trace(tl)
    chi, err, ok = noise_exponent(trace, noise, rtol=rtol)
    if not ok:
        warnings.warn(f"quadrature did not reach rtol={rtol:g} (abserr {err:.3g})", QuadratureWarning)
    value = math.exp(-chi)
    if full_output:
        return CoherenceResult(value, chi, err, ok)
    return value


def coherence_trace(spec: SequenceSpec, taus, noise: NoiseModel, with_baseline: bool = False,
                    rtol: float = 1e-6) -> CoherenceTrace:
    """Coherence versus pulse spacing with ``N`` fixed; the timeline is rebuilt per ``tau``."""
    taus = np.asarray(taus, dtype=float)
    vals = np.empty(taus.size)
    base = np.empty(taus.size) if with_baseline else None
    flags = np.zeros(taus.size, dtype=bool)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        for i, tau in enumerate(taus):
            tl = build_timeline(spec.with_(tau=float(tau)))
            r = coherence_point(tl, noise, rtol=rtol, full_output=True)
            vals[i] = r.value
            flags[i] = not r.converged
            if with_baseline:
                base[i] = baseline_coherence(tl)
    if flags.any():
        warnings.warn(f"{flags.sum()} trace point(s) with unconverged quadrature", QuadratureWarning)
    return CoherenceTrace(taus, vals, base, flags, spec, noise)


def baseline_coherence(tl: Timeline) -> float:
    """Exact noise-free coherence ``<+x| U^dagger sigma_x U |+x>`` after the whole sequence."""
    q = cumulative_quaternions(tl)[-1]
    return float(rotation_matrix(q)[0, 0])


# --- Monte Carlo -----------------------------------------------------------

def coherence_from_beta(beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coherence of ``|+x>`` after ``exp(-i beta.sigma/2)``: the exact form and ``cos|beta|``."""
    beta = np.atleast_2d(beta)
    b2 = np.sum(beta ** 2, axis=-1)
    nb = np.sqrt(b2)
    perp = beta[..., 1] ** 2 + beta[..., 2] ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = 1.0 - 2.0 * np.where(b2 > 0, perp / b2, 0.0) * np.sin(0.5 * nb) ** 2
    return exact, np.cos(nb)


def beta_from_tones(trace: ModulationTrace, omegas, cos_amps, sin_amps, gamma_e: float = GAMMA_E) -> np.ndarray:
    """First-order rotation vector for ``B_z(t) = sum a cos(w t) + b sin(w t)``.

    ``beta_i = -gamma_e int_0^T f_i(t) B_z(t) dt``, evaluated in closed form
    through the segment spectra. The leading axes of ``omegas`` index
    independent fields; the last axis is summed.
    """
    omegas = np.asarray(omegas, dtype=float)
    a = np.broadcast_to(np.asarray(cos_amps, dtype=float), omegas.shape)
    b = np.broadcast_to(np.asarray(sin_amps, dtype=float), omegas.shape)
    T = trace.t_total
    comp = filter_spectrum_closed(trace, omegas.ravel()).components.reshape((3,) + omegas.shape)
    # int f cos(wt) = T Re f~(w); int f sin(wt) = -T Im f~(w)
    integral = T * (a * comp.real - b * comp.imag).sum(axis=-1)
    return -gamma_e * np.moveaxis(integral, 0, -1)


def _realization_tones(noise: NoiseModel, rng: np.random.Generator, tones: int):
    om, amp_c, amp_s = [], [], []
    for ln in noise.lines:
        if ln.b_rms == 0:
            continue
        # one frequency per stratum of the line's cumulative distribution
        u = (np.arange(tones) + rng.random(tones)) / tones
        om.append(ln.center + ln.quantile(u))
        sd = ln.b_rms / math.sqrt(tones)
        amp_c.append(rng.normal(0.0, sd, tones))
        amp_s.append(rng.normal(0.0, sd, tones))
    if not om:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return np.concatenate(om), np.concatenate(amp_c), np.concatenate(amp_s)


def mc_coherence(tl: Timeline, noise: NoiseModel, n_realizations: int, seed: int = 0,
                 tones_per_line: int = 64) -> MCResult:
    """Monte-Carlo coherence over synthesised classical fields.

    Each realization draws ``tones_per_line`` stratified frequencies from
    every line profile and independent Gaussian quadrature amplitudes of
    variance ``b_rms^2 / tones_per_line``, so the ensemble reproduces the
    line's correlation function. Realization ``k`` uses the ``k``-th child
    of ``SeedSequence(seed)``, which makes results independent of batching.
    """
    if isinstance(n_realizations, bool) or int(n_realizations) != n_realizations or n_realizations < 2:
        raise ValueError(f"n_realizations must be an integer >= 2, got {n_realizations!r}")
    n = int(n_realizations)
    trace = modulation_trace(tl)
    children = np.random.SeedSequence(seed).spawn(n)
    draws = [_realization_tones(noise, np.random.default_rng(c), tones_per_line) for c in children]
    if draws[0][0].size == 0:
        beta = np.zeros((n, 3))
    else:
        om = np.stack([d[0] for d in draws])
        ac = np.stack([d[1] for d in draws])
        asn = np.stack([d[2] for d in draws])
        beta = beta_from_tones(trace, om, ac, asn, noise.gamma_e)
    exact, cosb = coherence_from_beta(beta)
    root_n = math.sqrt(n)
    return MCResult(
        float(exact.mean()), float(exact.std(ddof=1) / root_n),
        float(cosb.mean()), float(cosb.std(ddof=1) / root_n), beta,
    )
