import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddfilter.propagation import (
    IDENTITY, Su2Element, compose, cumulative_quaternions, rotation_axis_angle,
    rotation_matrix, segment_propagator, total_propagator,
)
from ddfilter.sequence import ControlSegment, SequenceSpec, build_timeline

from conftest import MHZ, NS
from oracles import PAULI, bloch_of_unitary, brute_propagator, expm_segment


def _same_up_to_sign(u, v, atol):
    return min(np.abs(u - v).max(), np.abs(u + v).max()) < atol


unit = st.floats(-1, 1)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1).map(
    lambda q: Su2Element.from_array(np.asarray(q) / np.linalg.norm(q)))


def test_detuned_pulse_matches_expm():
    om = math.pi / (40 * NS)
    seg = ControlSegment(40 * NS, (om, 0.0, 1.5 * MHZ), True)
    u = segment_propagator(seg)
    assert np.allclose(u.matrix(), expm_segment(seg.h, seg.duration), atol=1e-13)
    axis, angle = rotation_axis_angle(u)
    # theta = pi sqrt(1 + (Delta/Omega)^2) exceeds pi, so the
    # read-out reports 2 pi - theta about the reversed tilted axis
    assert 2 * math.pi - angle == pytest.approx(math.pi * math.hypot(1, 0.12), abs=1e-12)
    assert math.degrees(math.atan2(-axis[2], -axis[0])) == pytest.approx(math.degrees(math.atan(0.12)), abs=1e-9)


def test_long_composition_against_matrices():
    spec = SequenceSpec("XY8", 5000, 235 * NS, 40 * NS, 1.3 * MHZ)
    tl = build_timeline(spec)
    assert len(tl.segments) == 10001
    u = total_propagator(tl)
    assert abs(u.norm() - 1) < 1e-12
    ref = brute_propagator(tl)
    assert _same_up_to_sign(u.matrix(), ref, 1e-10)


def test_cumulative_matches_boundaries():
    tl = build_timeline(SequenceSpec("CPMG", 6, 240 * NS, 40 * NS, 2 * MHZ))
    cum = cumulative_quaternions(tl)
    for k, t in enumerate(tl.boundaries()):
        assert _same_up_to_sign(Su2Element.from_array(cum[k]).matrix(), brute_propagator(tl, t), 1e-12)


def test_delta_kicks_are_pi_rotations():
    tl = build_timeline(SequenceSpec("XY4", 4, 240 * NS, 0.0))
    u = total_propagator(tl)
    assert _same_up_to_sign(u.matrix(), brute_propagator(tl), 1e-13)


@settings(max_examples=100, deadline=None)
@given(quats, quats, quats)
def test_group_axioms(p, q, r):
    assert np.allclose(((p * q) * r).as_array(), (p * (q * r)).as_array(), atol=1e-13)
    assert np.allclose((p * p.dagger()).as_array(), IDENTITY.as_array(), atol=1e-13)
    assert np.allclose((p * q).matrix(), p.matrix() @ q.matrix(), atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(quats, st.tuples(unit, unit, unit))
def test_rotation_matrix_conjugation(q, v):
    v = np.asarray(v)
    U = q.matrix()
    lhs = U @ sum(c * s for c, s in zip(v, PAULI)) @ U.conj().T
    rv = rotation_matrix(q) @ v
    assert np.allclose(lhs, sum(c * s for c, s in zip(rv, PAULI)), atol=1e-13)
    assert np.allclose(rotation_matrix(q), bloch_of_unitary(U), atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.tuples(unit, unit, unit).filter(lambda n: np.linalg.norm(n) > 0.1), st.floats(1e-6, math.pi))
def test_axis_angle_roundtrip(n, angle):
    u = Su2Element.from_axis_angle(n, angle)
    axis, got = rotation_axis_angle(u)
    assert got == pytest.approx(angle, abs=1e-9)
    assert np.allclose(axis, np.asarray(n) / np.linalg.norm(n), atol=1e-7)
    # the overall sign is irrelevant
    axis2, got2 = rotation_axis_angle(-u.as_array())
    assert got2 == pytest.approx(got) and np.allclose(axis2, axis)


def test_identity_axis_is_z():
    axis, angle = rotation_axis_angle(IDENTITY)
    assert angle == 0.0 and tuple(axis) == (0.0, 0.0, 1.0)


def test_compose_vectorised():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(7, 4))
    b = rng.normal(size=(7, 4))
    c = compose(a, b)
    for i in range(7):
        assert np.allclose(c[i], compose(a[i], b[i]))


def test_cpmg_ideal_is_identity():
    tl = build_timeline(SequenceSpec("CPMG", 8, 240 * NS, 40 * NS))
    _, angle = rotation_axis_angle(total_propagator(tl))
    assert angle < 1e-10


def test_cpmg_detuned_axis_stays_in_xz_plane():
    tl = build_timeline(SequenceSpec("CPMG", 16, 240 * NS, 40 * NS, 1.5 * MHZ))
    axis, angle = rotation_axis_angle(total_propagator(tl))
    assert angle > 1e-3
    assert abs(axis[1]) < 1e-10


def test_xy8_error_grows_linearly():
    """For a fixed detuning the per-block rotation is a fixed rotation; N blocks rotate N times it."""
    one = total_propagator(build_timeline(SequenceSpec("XY8", 8, 235 * NS, 40 * NS, 2 * MHZ)))
    axis1, ang1 = rotation_axis_angle(one)
    for blocks in (2, 5, 11):
        u = total_propagator(build_timeline(SequenceSpec("XY8", 8 * blocks, 235 * NS, 40 * NS, 2 * MHZ)))
        axis, ang = rotation_axis_angle(u)
        expect = math.remainder(blocks * ang1, 2 * math.pi)
        assert ang == pytest.approx(abs(expect), abs=1e-9)
        assert np.allclose(axis, math.copysign(1, expect) * axis1, atol=1e-8)


@pytest.mark.parametrize("kind,n,slope", [("XY8", 8, 4.0), ("XY4", 4, 2.0), ("CPMG", 2, 2.0)])
def test_block_error_order(kind, n, slope):
    """Small-detuning order of the net block rotation: XY8 cancels up to third order."""
    dets = np.array([0.01, 0.02, 0.04]) * MHZ
    ang = [rotation_axis_angle(total_propagator(build_timeline(SequenceSpec(kind, n, 235 * NS, 40 * NS, d))))[1]
           for d in dets]
    fitted = np.polyfit(np.log(dets), np.log(ang), 1)[0]
    assert fitted == pytest.approx(slope, abs=0.02)


def test_xy8_block_axis_is_diagonal():
    u = total_propagator(build_timeline(SequenceSpec("XY8", 8, 235 * NS, 40 * NS, 0.05 * MHZ)))
    axis, _ = rotation_axis_angle(u)
    assert abs(abs(axis[0]) - math.sqrt(0.5)) < 1e-2 and abs(abs(axis[1]) - math.sqrt(0.5)) < 1e-2
