"""Filter functions and coherence of dynamically decoupled qubits with
finite-width pulses and static detuning."""

__version__ = "0.1.0"

from .sequence import SequenceKind, SequenceSpec, ControlSegment, Timeline, pulse_phases, build_timeline
from .propagation import (
    Su2Element,
    segment_propagator,
    cumulative_propagators,
    rotation_axis_angle,
)
from .modulation import ModulationTrace, modulation_trace, modulation_at
from .spectrum import FilterSpectrum, Peak, filter_spectrum_closed, filter_spectrum_dft, find_peaks
from .response import (
    LineShape,
    NoiseLine,
    NoiseModel,
    CoherenceTrace,
    coherence_point,
    coherence_trace,
    baseline_coherence,
    mc_coherence,
)
from .analysis import (
    DipFit,
    SweepMap,
    fit_double_lorentzian,
    sweep_detuning,
    sweep_pulse_width,
    dip_positions_vs_detuning,
    fit_noise_model,
)
