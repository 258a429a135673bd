import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ddfilter.modulation import modulation_trace
from ddfilter.response import (
    GAMMA_E, LineShape, NoiseLine, NoiseModel, QuadratureWarning, baseline_coherence,
    beta_from_tones, coherence_from_beta, coherence_point, coherence_trace, gauss_kronrod,
    integration_window, mc_coherence,
)
from ddfilter.sequence import SequenceSpec, build_timeline
from ddfilter.spectrum import filter_spectrum_closed

from conftest import MHZ, NS
from oracles import SX, brute_propagator

UT = 1e-6


def _tl(kind="CPMG", n=64, tau=240, tp=40, det=0.0):
    return build_timeline(SequenceSpec(kind, n, tau * NS, tp * NS, det * MHZ))


def _lorentz(center_mhz=2.1, t2star_us=12.0, b_ut=0.1):
    return NoiseModel((NoiseLine.from_t2star(center_mhz * MHZ, t2star_us * 1e-6, b_ut * UT),))


# --- noise lines -------------------------------------------------------------

@pytest.mark.parametrize("shape", ["lorentzian", "gaussian"])
def test_spectrum_normalisation(shape):
    ln = NoiseLine(2.1 * MHZ, 0.2 * MHZ, 0.3 * UT, shape)
    nm = NoiseModel((ln,))
    c, w = ln.center, ln.fwhm
    pts = [c - 5 * w, c + 5 * w]
    total = 2 * (integrate.quad(nm.spectrum, 0, pts[0], limit=500)[0]
                 + integrate.quad(nm.spectrum, pts[0], pts[1], limit=500)[0]
                 + integrate.quad(nm.spectrum, pts[1], np.inf, limit=500)[0])
    assert total / (2 * math.pi) == pytest.approx(ln.b_rms ** 2, rel=1e-7)


@pytest.mark.parametrize("shape", ["lorentzian", "gaussian"])
def test_quantile_inverts_cdf(shape):
    ln = NoiseLine(0.0, 1.3, 1.0, shape)
    u = np.array([0.01, 0.2, 0.5, 0.77, 0.999])
    x = ln.quantile(u)
    cdf = [integrate.quad(ln.density, -np.inf, xi)[0] for xi in x]
    assert np.allclose(cdf, u, atol=1e-8)


def test_t2star_convention():
    ln = NoiseLine.from_t2star(1.0, 12e-6, 1.0)
    assert ln.fwhm == pytest.approx(2 / 12e-6)
    assert ln.t2star == pytest.approx(12e-6)


def test_line_validation():
    with pytest.raises(ValueError):
        NoiseLine(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        NoiseLine(1.0, 1.0, -1.0)
    assert NoiseLine(1.0, 0.0, 1.0, "DELTA").shape is LineShape.DELTA


# --- quadrature ----------------------------------------------------------------

def test_gauss_kronrod_known_integrals():
    val, err, ok = gauss_kronrod(np.sin, [(np.array([0.0]), np.array([math.pi]))], rtol=1e-12)
    assert ok and val == pytest.approx(2.0, rel=1e-12)
    f = lambda x: 1.0 / (1e-4 + x ** 2)
    val, _, ok = gauss_kronrod(f, [(np.array([-1.0]), np.array([1.0]))], rtol=1e-9)
    assert ok and val == pytest.approx(2 * math.atan(1e2) / 1e-2, rel=1e-8)


def test_gauss_kronrod_reports_failure():
    val, err, ok = gauss_kronrod(lambda x: np.sign(x - 0.1234567),
                                 [(np.array([-1.0]), np.array([1.0]))], rtol=1e-14, max_iter=5)
    assert not ok and err > 0
    assert val == pytest.approx(-2 * 0.1234567, abs=1e-2)


def test_unconverged_point_warns(monkeypatch):
    import functools
    from ddfilter import response
    monkeypatch.setattr(response, "gauss_kronrod", functools.partial(gauss_kronrod, max_iter=1))
    tl = _tl()
    with pytest.warns(QuadratureWarning):
        r = coherence_point(tl, _lorentz(b_ut=0.2), rtol=1e-14, full_output=True)
    assert not r.converged


def test_integration_window_merges():
    tl = _tl()
    iv = integration_window(tl, _lorentz(2.08, 12.0))
    assert len(iv) == 1
    lo, hi = iv[0]
    assert lo <= tl.spec.omega_dd * 0.85 and hi >= tl.spec.omega_dd * 1.15


# --- filter-function coherence ---------------------------------------------------

def test_zero_field_gives_unity():
    assert coherence_point(_tl(), _lorentz(b_ut=0.0)) == 1.0
    assert coherence_point(_tl(), NoiseModel()) == 1.0


def test_delta_line_matches_instantaneous_textbook_value():
    n, tau = 64, 240 * NS
    tl = _tl("CPMG", n, 240, 0.0)
    nm = NoiseModel((NoiseLine(math.pi / tau, 0.0, 0.05 * UT, "delta"),))
    chi = -math.log(coherence_point(tl, nm))
    T = n * tau
    expect = 0.5 * GAMMA_E ** 2 * (0.05 * UT) ** 2 * (4 / math.pi ** 2) * T ** 2
    assert chi == pytest.approx(expect, rel=1e-12)


def test_narrow_lorentzian_tends_to_delta_line():
    tl = _tl()
    T = tl.total_time
    delta = coherence_point(tl, NoiseModel((NoiseLine(2.05 * MHZ, 0, 0.1 * UT, "delta"),)), full_output=True)
    prev = None
    for frac in (1e-2, 1e-3):
        nm = NoiseModel((NoiseLine(2.05 * MHZ, frac * 2 * math.pi / T, 0.1 * UT),))
        r = coherence_point(tl, nm, full_output=True)
        gap = abs(r.exponent - delta.exponent) / delta.exponent
        assert gap < 20 * frac
        if prev is not None:
            assert gap < prev
        prev = gap


def test_exponent_against_scipy_quad():
    tl = _tl("XY8", 64, 235, 40, 1.0)
    nm = _lorentz(2.1, 3.0, 0.1)
    r = coherence_point(tl, nm, rtol=1e-8, full_output=True)
    tr = modulation_trace(tl)
    T = tl.total_time
    g = lambda w: nm.spectrum(w) * filter_spectrum_closed(tr, [w]).filter[0]
    ln = nm.lines[0]
    edges = np.linspace(max(0.0, ln.center - 40 * ln.fwhm), ln.center + 40 * ln.fwhm, 81)
    val = sum(integrate.quad(g, a, b, epsrel=1e-10, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    ref = 0.5 * GAMMA_E ** 2 / (2 * math.pi) * 2 * val * T ** 2
    # the package window is +-6 FWHM plus the main lobe; the far tails are below 1e-3
    assert r.exponent == pytest.approx(ref, rel=1e-3)


def test_coherence_decreases_with_field():
    tl = _tl()
    vals = [coherence_point(tl, _lorentz(2.08, 12, b)) for b in (0.05, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_exponent_scales_with_field_squared():
    tl = _tl()
    chi = [-math.log(coherence_point(tl, _lorentz(2.08, 12, b), rtol=1e-9)) for b in (0.1, 0.3)]
    assert chi[1] / chi[0] == pytest.approx(9.0, rel=1e-6)


def test_trace_shape_and_flags():
    spec = SequenceSpec("CPMG", 64, 240 * NS, 40 * NS)
    taus = np.linspace(230, 250, 5) * NS
    tr = coherence_trace(spec, taus, _lorentz(2.08), with_baseline=True)
    assert tr.coherence.shape == (5,) and not tr.flags.any()
    assert np.allclose(tr.baseline, 1.0)
    assert np.allclose(tr.combined, tr.coherence)
    assert coherence_trace(spec, taus, _lorentz()).combined is None


# --- baseline -----------------------------------------------------------------

@pytest.mark.parametrize("kind,n,tau,det,expect", [
    ("CPMG", 128, 240, 0.0, 1.0),
    ("CPMG", 128, 240, 3.0, 0.9729459603633),
    ("XY8", 376, 235, 1.5, 0.9719888856294),
    ("XY8", 376, 235, 3.0, 0.2120914367636),
])
def test_baseline_values(kind, n, tau, det, expect):
    tl = _tl(kind, n, tau, 40, det)
    assert baseline_coherence(tl) == pytest.approx(expect, abs=1e-10)
    U = brute_propagator(tl)
    psi = np.array([1, 1]) / math.sqrt(2)
    assert baseline_coherence(tl) == pytest.approx((psi.conj() @ U.conj().T @ SX @ U @ psi).real, abs=1e-10)


# --- Monte Carlo --------------------------------------------------------------

def test_beta_from_tones_against_quadrature():
    tl = _tl("XY8", 8, 235, 40, 2.0)
    tr = modulation_trace(tl)
    om = np.array([1.9, 2.2]) * MHZ
    a = np.array([0.1, -0.05]) * UT
    b = np.array([0.02, 0.07]) * UT
    beta = beta_from_tones(tr, om, a, b)
    field = lambda t: a @ np.cos(om * t) + b @ np.sin(om * t)
    edges = tl.boundaries()
    for i in range(3):
        ref = sum(integrate.quad(lambda t: tr(t)[i] * field(t), lo, hi, epsabs=1e-20, epsrel=1e-12)[0]
                  for lo, hi in zip(edges[:-1], edges[1:]))
        assert beta[i] == pytest.approx(-GAMMA_E * ref, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)))
def test_coherence_from_beta_against_matrices(beta):
    beta = np.asarray(beta)
    exact, _ = coherence_from_beta(beta)
    nb = np.linalg.norm(beta)
    from scipy.linalg import expm
    from oracles import SY, SZ
    U = expm(-0.5j * (beta[0] * SX + beta[1] * SY + beta[2] * SZ)) if nb > 0 else np.eye(2)
    psi = np.array([1, 1]) / math.sqrt(2)
    assert exact[0] == pytest.approx((psi.conj() @ U.conj().T @ SX @ U @ psi).real, abs=1e-12)


def test_exact_and_cos_agree_for_weak_noise():
    tl = _tl()
    r = mc_coherence(tl, _lorentz(2.08, 12, 0.03), 200, seed=5)
    assert abs(r.mean - r.mean_cos) < 1e-3


def test_mc_reproducible_and_batch_independent():
    tl = _tl("CPMG", 16)
    nm = _lorentz(2.08, 12, 0.2)
    a = mc_coherence(tl, nm, 10, seed=42)
    b = mc_coherence(tl, nm, 10, seed=42)
    c = mc_coherence(tl, nm, 5, seed=42)
    assert a.mean == b.mean and np.array_equal(a.beta, b.beta)
    assert np.array_equal(a.beta[:5], c.beta)
    assert mc_coherence(tl, nm, 10, seed=43).mean != a.mean


def test_mc_second_moment_matches_filter_integral():
    """<|beta|^2> equals twice the filter-function exponent for a Gaussian field."""
    tl = _tl("CPMG", 64)
    nm = _lorentz(2.08, 12, 0.1)
    chi = coherence_point(tl, nm, full_output=True).exponent
    r = mc_coherence(tl, nm, 4000, seed=7)
    b2 = np.sum(r.beta ** 2, axis=1)
    se = b2.std(ddof=1) / math.sqrt(b2.size)
    assert abs(b2.mean() - 2 * chi) < 4 * se


@pytest.mark.parametrize("bad", [1, 0, 2.5, True])
def test_mc_rejects_bad_count(bad):
    with pytest.raises(ValueError):
        mc_coherence(_tl(), _lorentz(), bad)


def test_mc_zero_field():
    r = mc_coherence(_tl("CPMG", 8), _lorentz(b_ut=0.0), 4)
    assert r.mean == 1.0 and r.stderr == 0.0
