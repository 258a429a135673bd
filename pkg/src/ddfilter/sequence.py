"""Dynamical-decoupling pulse sequences and their piecewise-constant timelines.

All quantities are SI with angular frequencies in rad/s. A sequence of ``N``
pi pulses with spacing ``tau`` places pulse ``m`` (1-based) at
``t_m = (m - 1/2) * tau`` so the total duration is exactly ``N * tau``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SequenceKind",
    "SequenceSpec",
    "ControlSegment",
    "Timeline",
    "pulse_phases",
    "build_timeline",
    "XY8_BLOCK",
    "XY4_BLOCK",
]

HALF_PI = 0.5 * math.pi

XY4_BLOCK = (0.0, HALF_PI, 0.0, HALF_PI)
XY8_BLOCK = (0.0, HALF_PI, 0.0, HALF_PI, HALF_PI, 0.0, HALF_PI, 0.0)


class SequenceKind(str, enum.Enum):
    CPMG = "CPMG"
    XY4 = "XY4"
    XY8 = "XY8"
    CUSTOM = "CUSTOM"


def _as_kind(kind) -> SequenceKind:
    if isinstance(kind, SequenceKind):
        return kind
    return SequenceKind(str(kind).upper())


def pulse_phases(kind, n_pulses: int, custom: Optional[Sequence[float]] = None) -> list[float]:
    """Return the drive phase (radians) of every pulse in the train.

    Parameters
    ----------
    kind : SequenceKind or str
        Sequence family.
    n_pulses : int
        Number of pi pulses. Must be a multiple of the block length for
        XY4 (4) and XY8 (8).
    custom : sequence of float, optional
        Phase list for ``CUSTOM`` sequences. It is tiled (cyclically) to
        ``n_pulses`` entries.

    Raises
    ------
    ValueError
        If ``n_pulses`` does not fit the sequence family.
    """
    kind = _as_kind(kind)
    if isinstance(n_pulses, bool) or int(n_pulses) != n_pulses or n_pulses < 0:
        raise ValueError(f"n_pulses must be a non-negative integer, got {n_pulses!r}")
    n_pulses = int(n_pulses)
    if kind is SequenceKind.CPMG:
        return [0.0] * n_pulses
    if kind is SequenceKind.CUSTOM:
        if not custom:
            raise ValueError("CUSTOM sequences need a non-empty phase list")
        block = tuple(float(p) for p in custom)
    else:
        block = XY4_BLOCK if kind is SequenceKind.XY4 else XY8_BLOCK
        if n_pulses % len(block):
            raise ValueError(
                f"{kind.value} needs a multiple of {len(block)} pulses, got {n_pulses}"
            )
    return [block[m % len(block)] for m in range(n_pulses)]


@dataclass(frozen=True)
class SequenceSpec:
    """Declarative description of a DD sequence.

    ``rabi`` defaults to ``pi / t_p`` (exact pi rotations). ``detuning`` is
    the static drive offset Delta in rad/s and is present during both free
    evolution and pulses.
    """

    kind: SequenceKind
    n_pulses: int
    tau: float
    t_p: float = 0.0
    detuning: float = 0.0
    rabi: Optional[float] = None
    phases: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _as_kind(self.kind))
        if self.phases is not None:
            object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau!r}")
        if not (self.t_p >= 0 and math.isfinite(self.t_p)):
            raise ValueError(f"t_p must be >= 0, got {self.t_p!r}")
        if self.t_p >= self.tau:
            raise ValueError(
                f"pulse duration t_p={self.t_p:g} s must be shorter than tau={self.tau:g} s"
            )
        if self.rabi is None and self.t_p > 0:
            object.__setattr__(self, "rabi", math.pi / self.t_p)
        if self.rabi is not None and not math.isfinite(self.rabi):
            raise ValueError(
                f"Rabi rate must be finite (t_p={self.t_p!r} is too short); use t_p=0 for ideal pulses"
            )
        if not math.isfinite(self.detuning):
            raise ValueError(f"detuning must be finite, got {self.detuning!r}")
        # validates n_pulses against the family
        pulse_phases(self.kind, self.n_pulses, self.phases)

    @property
    def total_time(self) -> float:
        return self.n_pulses * self.tau

    @property
    def omega_dd(self) -> float:
        """Nominal resonance pi/tau in rad/s."""
        return math.pi / self.tau

    def with_(self, **changes) -> "SequenceSpec":
        """Copy with some fields replaced; ``rabi`` is re-derived when ``t_p`` changes."""
        if "t_p" in changes and "rabi" not in changes:
            changes["rabi"] = None
        params = dict(
            kind=self.kind, n_pulses=self.n_pulses, tau=self.tau, t_p=self.t_p,
            detuning=self.detuning, rabi=self.rabi, phases=self.phases,
        )
        params.update(changes)
        return SequenceSpec(**params)


@dataclass(frozen=True)
class ControlSegment:
    """Constant control over ``duration`` seconds.

    The Hamiltonian is ``h . sigma / 2`` with ``h`` in rad/s. ``kick`` is the
    phase of an instantaneous pi pulse applied at the end of the segment
    (only used for zero-width pulses), or ``None``.
    """

    duration: float
    h: tuple
    is_pulse: bool = False
    kick: Optional[float] = None


@dataclass(frozen=True)
class Timeline:
    segments: tuple
    total_time: float
    pulse_centers: tuple
    delta_pulses: bool = False
    spec: Optional[SequenceSpec] = field(default=None, compare=False)

    def boundaries(self) -> np.ndarray:
        """Segment start times followed by the final end time."""
        d = np.array([s.duration for s in self.segments], dtype=float)
        return np.concatenate(([0.0], np.cumsum(d)))

    def __len__(self):
        return len(self.segments)


def build_timeline(spec: SequenceSpec) -> Timeline:
    """Render a sequence as piecewise-constant control segments.

    For ``t_p > 0`` the layout is ``free(tau/2 - t_p/2)``, then alternating
    ``pulse(t_p)`` / ``free(tau - t_p)``, ending with ``free(tau/2 - t_p/2)``
    (``2N + 1`` segments). For ``t_p == 0`` only the ``N + 1`` free segments
    are produced and every pulse is carried as an instantaneous kick.
    """
    n = spec.n_pulses
    tau, t_p, delta = spec.tau, spec.t_p, spec.detuning
    phases = pulse_phases(spec.kind, n, spec.phases)
    centers = tuple((m + 0.5) * tau for m in range(n))
    total = n * tau
    free_h = (0.0, 0.0, float(delta))

    if n == 0:
        return Timeline((), 0.0, (), t_p == 0, spec)

    segs: list[ControlSegment] = []
    edge = 0.5 * (tau - t_p)
    inner = tau - t_p
    if t_p == 0:
        for m, phi in enumerate(phases):
            segs.append(ControlSegment(edge if m == 0 else inner, free_h, kick=phi))
        segs.append(ControlSegment(edge, free_h))
    else:
        rabi = spec.rabi
        segs.append(ControlSegment(edge, free_h))
        for m, phi in enumerate(phases):
            h = (rabi * math.cos(phi), rabi * math.sin(phi), float(delta))
            segs.append(ControlSegment(t_p, h, is_pulse=True))
            segs.append(ControlSegment(inner if m < n - 1 else edge, free_h))

    # absorb rounding into the last segment so the durations sum to N*tau
    last = segs[-1]
    rest = math.fsum(s.duration for s in segs[:-1])
    segs[-1] = ControlSegment(total - rest, last.h, last.is_pulse, last.kick)
    return Timeline(tuple(segs), total, centers, t_p == 0, spec)
