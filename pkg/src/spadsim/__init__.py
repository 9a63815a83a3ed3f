"""Simulation and statistical characterization of sine-wave-gated SPADs."""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DegenerateSpanError,
    InsufficientDataError,
    MemoryBudgetError,
    ParameterError,
    SpadSimError,
    UnitMismatchError,
)
from .model import (
    AfterpulseProfile,
    DetectorParams,
    OperatingPoint,
    SourceParams,
    TailFit,
    app_from_amplitude,
    dead_time_rate,
    detection_prob,
    expected_count_rate,
    first_count_distribution,
    qe_from_p,
    tail_amplitude,
)
from .montecarlo import EventStream, cascade_oracle, coincidence_filter, simulate, window_counts
from .intervals import (
    CharacterizationResult,
    IntervalHistogram,
    build_histogram,
    characterize,
    dcr_report,
    fit_tail,
)
from .ratecurve import RateCurve, RateFitResult, dead_time_verdict, fit_ideal, fit_with_dead_time
from .waveform import StubParams, TraceParams, discriminate, notch_response, stub_impedance, synthesize_trace
