"""Seeded gate-by-gate simulation of a sine-wave-gated SPAD.

The detector is gated at twice the source repetition rate.  Gate ``g`` with
``g`` even coincides with a laser pulse; odd gates see no light.  Each gate
draws a single uniform from a PCG64 stream (NumPy's ``Generator.random``),
so the event list depends only on ``(params, n_gates, seed)`` and not on the
chunk size used to walk the gates.

Afterpulse bins are source periods: ``p_a(n)`` fires ``2n`` gates after the
avalanche that filled the traps.  Every avalanche replaces the trap state,
which is what makes consecutive intervals independent renewals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import MemoryBudgetError, ParameterError
from .model import AfterpulseProfile, DetectorParams, SourceParams, app_from_amplitude, detection_prob, tail_amplitude

RNG_ALGORITHM = "numpy.random.PCG64"
DEFAULT_CHUNK_GATES = 1 << 22
DEFAULT_MAX_EVENTS = 1 << 28  # 2 GiB of int64 gate indices

_NO_EVENT = np.iinfo(np.int64).min // 2


@dataclass(frozen=True, eq=False)
class EventStream:
    """Registered detection events in gate units (one gate = ``1 / (2 rep_rate)``)."""

    events: np.ndarray
    n_gates: int
    seed: int | None
    detector: DetectorParams | None = None
    source: SourceParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ev = np.ascontiguousarray(self.events, dtype=np.int64)
        if ev.ndim != 1:
            raise ParameterError("events must be one-dimensional")
        if ev.size:
            if ev[0] < 0 or ev[-1] >= self.n_gates:
                raise ParameterError("event index outside [0, n_gates)")
            if np.any(np.diff(ev) <= 0):
                raise ParameterError("event indices must be strictly increasing")
        ev.flags.writeable = False
        object.__setattr__(self, "events", ev)
        object.__setattr__(self, "n_gates", int(self.n_gates))

    def __len__(self):
        return int(self.events.size)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.n_gates == other.n_gates
            and self.seed == other.seed
            and self.detector == other.detector
            and self.source == other.source
            and np.array_equal(self.events, other.events)
        )

    @property
    def gate_rate(self) -> float | None:
        return None if self.source is None else self.source.gate_rate

    @property
    def duration(self) -> float:
        if self.source is None:
            raise ParameterError("stream has no source parameters; duration is undefined")
        return self.n_gates / self.source.gate_rate

    def with_events(self, events) -> "EventStream":
        return EventStream(events, self.n_gates, self.seed, self.detector, self.source, dict(self.meta))


@numba.njit(cache=True)
def _gate_kernel(u, start, p_photon, p_dark, q_by_offset, dead_gates, state, out):
    # state = [last avalanche gate, last dead gate]
    last = state[0]
    dead_until = state[1]
    n_ap = q_by_offset.size - 1
    k = 0
    for i in range(u.size):
        g = start + i
        if g <= dead_until:
            continue
        miss = 1.0 - p_dark
        if (g & 1) == 0:
            miss *= 1.0 - p_photon
        off = g - last
        if off <= n_ap:
            miss *= 1.0 - q_by_offset[off]
        if u[i] < 1.0 - miss:
            out[k] = g
            k += 1
            last = g
            dead_until = g + dead_gates
    state[0] = last
    state[1] = dead_until
    return k


def _offset_table(ap: AfterpulseProfile) -> np.ndarray:
    # afterpulse probability indexed by gate offset; non-zero only at even offsets
    table = np.zeros(2 * ap.n_a + 1)
    table[2::2] = ap.probs
    return table


def expected_event_rate(det: DetectorParams, src: SourceParams) -> float:
    """Rough mean number of events per gate, used for the memory check."""
    p = detection_prob(src.mu, det.qe)
    primary = 0.5 * p + det.dark_prob
    rate = primary * (1.0 + app_from_amplitude(tail_amplitude(det.afterpulse)))
    if det.dead_pulses:
        rate = rate / (1.0 + rate * 2 * det.dead_pulses)
    return min(rate, 1.0)


def simulate(
    det: DetectorParams,
    src: SourceParams,
    n_gates: int,
    seed: int,
    *,
    max_events: int = DEFAULT_MAX_EVENTS,
    chunk_gates: int = DEFAULT_CHUNK_GATES,
) -> EventStream:
    """Walk ``n_gates`` gates and return the registered avalanches.

    Per gate the avalanche probability is ``1 - (1-p)(1-d)(1-q)`` where ``p``
    is the photon click probability (even gates only), ``d`` the dark-count
    probability and ``q`` the afterpulse probability left by the most recent
    avalanche.  For ``dead_pulses = n_d`` the ``2 n_d`` gates after an event
    are blind to all three mechanisms.
    """
    n_gates = int(n_gates)
    if n_gates < 1:
        raise ParameterError("n_gates must be >= 1")
    seed = int(seed)
    if seed < 0:
        raise ParameterError("seed must be non-negative")
    expected = expected_event_rate(det, src) * n_gates
    if expected > max_events:
        raise MemoryBudgetError(
            f"about {expected:.3g} events expected for {n_gates} gates, budget is {max_events}"
        )

    rng = np.random.Generator(np.random.PCG64(seed))
    p_photon = detection_prob(src.mu, det.qe)
    q = _offset_table(det.afterpulse)
    state = np.array([_NO_EVENT, _NO_EVENT], dtype=np.int64)
    pieces = []
    total = 0
    buf = np.empty(min(chunk_gates, n_gates), dtype=np.int64)
    for start in range(0, n_gates, chunk_gates):
        n = min(chunk_gates, n_gates - start)
        u = rng.random(n)
        k = _gate_kernel(u, start, p_photon, det.dark_prob, q, 2 * det.dead_pulses, state, buf)
        total += k
        if total > max_events:
            raise MemoryBudgetError(f"event count exceeded budget of {max_events} after {start + n} gates")
        pieces.append(buf[:k].copy())
    events = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    return EventStream(events, n_gates, seed, det, src, {"rng": RNG_ALGORITHM})


@numba.njit(cache=True)
def _cascade_kernel(rng, probs, n_primaries, out):
    n_a = probs.size
    for i in range(n_primaries):
        count = 0
        n = 0
        while n < n_a:
            if rng.random() < probs[n]:
                count += 1
                n = 0  # fresh traps after the afterpulse
            else:
                n += 1
        out[i] = count


@dataclass(frozen=True)
class CascadeResult:
    mean: float
    stderr: float
    n_primaries: int
    seed: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_primaries": self.n_primaries, "seed": self.seed}


def cascade_oracle(ap: AfterpulseProfile, n_primaries: int, seed: int) -> CascadeResult:
    """Count afterpulses that follow one primary avalanche, by direct simulation.

    No light and no dark counts: after the primary, each bin is a Bernoulli
    trial with ``p_a(n)``; a success is an afterpulse that restarts the profile,
    and the cascade ends once ``n_a`` bins pass without one.
    """
    n_primaries = int(n_primaries)
    if n_primaries < 1:
        raise ParameterError("n_primaries must be >= 1")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    counts = np.empty(n_primaries, dtype=np.int64)
    _cascade_kernel(rng, np.asarray(ap.probs, dtype=float), n_primaries, counts)
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / math.sqrt(n_primaries)) if n_primaries > 1 else float("inf")
    return CascadeResult(mean, stderr, n_primaries, int(seed))


def gates_per_window(window_s: float, gate_rate: float) -> int:
    exact = window_s * gate_rate
    n = int(round(exact))
    if n < 1:
        raise ParameterError(f"window of {window_s} s is shorter than one gate")
    if abs(exact - n) > 1e-6 * max(1.0, exact):
        raise ParameterError(f"window of {window_s} s is not a whole number of gates ({exact})")
    return n


def window_counts(stream: EventStream, window_s: float) -> np.ndarray:
    """Events per consecutive window of ``window_s`` seconds.

    A trailing partial window is dropped.
    """
    if stream.source is None:
        raise ParameterError("stream has no source parameters; window length cannot be converted to gates")
    w = gates_per_window(window_s, stream.source.gate_rate)
    n_windows = stream.n_gates // w
    ev = stream.events[stream.events < n_windows * w]
    return np.bincount(ev // w, minlength=n_windows).astype(np.int64)


def coincidence_filter(stream: EventStream) -> EventStream:
    """Keep only events on source-aligned (even) gates."""
    return stream.with_events(stream.events[stream.events % 2 == 0])
