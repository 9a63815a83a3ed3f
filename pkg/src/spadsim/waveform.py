"""Shorted-stub delay line at the detector output, synthetic traces and a Schmitt discriminator.

The stub hangs in parallel with the load at the output node.  A shorted
line is a short at every half-wave resonance, so the gate frequency is
notched out when the round-trip delay equals one gate period.  An avalanche
pulse travels down the same line and returns inverted one delay later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import constants, optimize

from .errors import ParameterError

C0 = constants.c
NEPER_PER_DB = math.log(10.0) / 20.0
DEFAULT_CAP_DB = 120.0


@dataclass(frozen=True)
class StubParams:
    z0: float = 50.0
    length: float = 0.50
    velocity_factor: float = 0.70
    loss_db_per_m_at_ref: float = 0.0
    loss_ref_freq: float = 200e6
    load: float = 50.0
    source_impedance: Optional[float] = None

    def __post_init__(self):
        if not (self.z0 > 0 and self.length > 0 and self.load > 0):
            raise ParameterError("z0, length and load must be positive")
        if not (0 < self.velocity_factor <= 1):
            raise ParameterError("velocity_factor must lie in (0, 1]")
        if self.loss_db_per_m_at_ref < 0 or not self.loss_ref_freq > 0:
            raise ParameterError("loss must be >= 0 with a positive reference frequency")
        if self.source_impedance is not None and not self.source_impedance > 0:
            raise ParameterError("source_impedance must be positive")

    @classmethod
    def matched(cls, gate_freq: float, velocity_factor: float = 0.70, **kw) -> "StubParams":
        """Stub whose round-trip delay is exactly one gate period."""
        length = velocity_factor * C0 / (2.0 * gate_freq)
        return cls(length=length, velocity_factor=velocity_factor, **kw)

    @property
    def velocity(self) -> float:
        return self.velocity_factor * C0

    @property
    def round_trip_delay(self) -> float:
        return 2.0 * self.length / self.velocity

    @property
    def first_notch(self) -> float:
        return self.velocity / (2.0 * self.length)

    @property
    def zs(self) -> float:
        return self.z0 if self.source_impedance is None else self.source_impedance

    def with_loss(self, loss_db_per_m: float) -> "StubParams":
        d = dict(self.__dict__)
        d["loss_db_per_m_at_ref"] = loss_db_per_m
        return StubParams(**d)

    def to_dict(self) -> dict:
        return {
            "z0_ohm": self.z0,
            "length_m": self.length,
            "velocity_factor": self.velocity_factor,
            "loss_db_per_m_at_ref": self.loss_db_per_m_at_ref,
            "loss_ref_freq_hz": self.loss_ref_freq,
            "load_ohm": self.load,
            "source_impedance_ohm": self.zs,
        }


def attenuation_constant(f, stub: StubParams):
    """Cable loss in Np/m, scaled as sqrt(f) from the reference point."""
    f = np.asarray(f, dtype=float)
    return stub.loss_db_per_m_at_ref * NEPER_PER_DB * np.sqrt(f / stub.loss_ref_freq)


def stub_impedance(f, stub: StubParams):
    """Input impedance ``Z0 tanh(gamma l)`` of the short-circuited line."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ParameterError("frequency must be positive")
    gamma = attenuation_constant(f, stub) + 1j * 2.0 * np.pi * f / stub.velocity
    z = stub.z0 * np.tanh(gamma * stub.length)
    return z if z.ndim else complex(z)


def transfer_ratio(f, stub: StubParams):
    """Output voltage with the stub relative to the bare load (complex)."""
    z = np.asarray(stub_impedance(f, stub))
    zl = stub.load
    with np.errstate(divide="ignore", invalid="ignore"):
        zp = np.where(z == 0, 0.0, zl * z / (zl + z))
    h_stub = zp / (stub.zs + zp)
    h_bare = zl / (stub.zs + zl)
    out = h_stub / h_bare
    return out if out.ndim else complex(out)


def notch_response(f, stub: StubParams, cap_db: float = DEFAULT_CAP_DB):
    """Attenuation in dB caused by adding the stub, capped at ``cap_db``."""
    mag = np.abs(np.asarray(transfer_ratio(f, stub)))
    with np.errstate(divide="ignore"):
        att = -20.0 * np.log10(mag)
    att = np.minimum(att, cap_db)
    return float(att) if att.ndim == 0 else att


def frequency_response(stub: StubParams, f_min: float, f_max: float, n: int = 2001, cap_db: float = DEFAULT_CAP_DB):
    f = np.linspace(f_min, f_max, int(n))
    return f, notch_response(f, stub, cap_db)


def peak_notch_depth(stub: StubParams, k: int = 1, cap_db: float = DEFAULT_CAP_DB) -> tuple:
    """Frequency and depth of the k-th notch, located by bounded search."""
    fk = k * stub.first_notch
    res = optimize.minimize_scalar(
        lambda f: -notch_response(f, stub, cap_db),
        bounds=(0.9 * fk, 1.1 * fk),
        method="bounded",
        options={"xatol": 1e-6 * fk},
    )
    return float(res.x), float(-res.fun)


def loss_for_peak_depth(target_db: float, stub: StubParams) -> float:
    """Cable loss (dB/m at the reference frequency) that gives a first notch ``target_db`` deep."""
    if not 0 < target_db < DEFAULT_CAP_DB:
        raise ParameterError("target depth must be positive and below the reporting cap")

    def depth_minus_target(loss):
        return peak_notch_depth(stub.with_loss(loss))[1] - target_db

    hi = 1.0
    while depth_minus_target(hi) > 0:
        hi *= 4.0
        if hi > 1e4:
            raise ParameterError("could not bracket the requested notch depth")
    return float(optimize.brentq(depth_minus_target, 1e-9, hi, xtol=1e-12))


def reflection_gain(stub: StubParams, f: float) -> float:
    """Signed round-trip amplitude of a pulse reflected by the short (always <= 0)."""
    return -math.exp(-2.0 * float(attenuation_constant(f, stub)) * stub.length)


@dataclass(frozen=True)
class TraceParams:
    gate_freq: float = 200e6
    gate_leak_amplitude: float = 1.0
    avalanche_amplitude: float = 1.0
    avalanche_width: float = 1e-9
    sample_rate: float = 20e9
    duration: float = 1e-6
    avalanche_times: tuple = ()
    noise_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sample_rate >= 10 * self.gate_freq:
            raise ParameterError("sample_rate must be at least 10x the gate frequency")
        if not (self.duration > 0 and self.avalanche_width > 0):
            raise ParameterError("duration and avalanche_width must be positive")
        if self.noise_rms < 0:
            raise ParameterError("noise_rms must be non-negative")
        times = tuple(float(t) for t in self.avalanche_times)
        if any(t < 0 or t > self.duration for t in times):
            raise ParameterError("avalanche times must lie inside the trace")
        object.__setattr__(self, "avalanche_times", times)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def to_dict(self) -> dict:
        return {
            "gate_freq_hz": self.gate_freq,
            "gate_leak_amplitude_v": self.gate_leak_amplitude,
            "avalanche_amplitude_v": self.avalanche_amplitude,
            "avalanche_width_s": self.avalanche_width,
            "sample_rate_hz": self.sample_rate,
            "duration_s": self.duration,
            "noise_rms_v": self.noise_rms,
            "seed": self.seed,
            "n_avalanches": len(self.avalanche_times),
        }


@dataclass(frozen=True, eq=False)
class Trace:
    t: np.ndarray
    v: np.ndarray
    sample_rate: float


def _pulse(t, t0, amplitude, width, tol):
    # samples within ``tol`` of the onset count as on it (round-off in t0 + delay)
    dt = t - t0
    out = np.zeros_like(t)
    on = dt >= -tol
    out[on] = amplitude * np.exp(-np.maximum(dt[on], 0.0) / width)
    return out


def synthesize_trace(tp: TraceParams, stub: StubParams) -> Trace:
    """Sampled output: attenuated gate leakage, avalanche pulses with their echoes, noise.

    The leakage leads the gate (whose peaks sit at ``t = k / gate_freq``) by
    a quarter period.  Each avalanche is a one-sided exponential followed by
    an inverted copy one stub round trip later.
    """
    n = tp.n_samples
    t = np.arange(n) / tp.sample_rate
    leak = tp.gate_leak_amplitude * abs(transfer_ratio(tp.gate_freq, stub))
    v = leak * np.cos(2.0 * np.pi * tp.gate_freq * t + np.pi / 2.0)
    delay = stub.round_trip_delay
    echo = reflection_gain(stub, tp.gate_freq)
    # each pulse is negligible after ~40 widths; only touch that span
    span = int(math.ceil(40 * tp.avalanche_width * tp.sample_rate)) + 2
    tol = 1e-9 / tp.sample_rate
    for t0 in tp.avalanche_times:
        for start, amp in ((t0, tp.avalanche_amplitude), (t0 + delay, echo * tp.avalanche_amplitude)):
            i0 = int(math.ceil(start * tp.sample_rate - 1e-9))
            if i0 >= n:
                continue
            sl = slice(max(i0, 0), min(i0 + span, n))
            v[sl] += _pulse(t[sl], start, amp, tp.avalanche_width, tol)
    if tp.noise_rms > 0:
        rng = np.random.Generator(np.random.PCG64(int(tp.seed)))
        v = v + rng.normal(0.0, tp.noise_rms, n)
    return Trace(t, v, tp.sample_rate)


@dataclass(frozen=True, eq=False)
class Discriminated:
    """Schmitt-trigger output pulses.  ``complete`` is False for a pulse still open at the trace end."""

    times: np.ndarray
    widths: np.ndarray
    complete: np.ndarray

    def __len__(self):
        return int(self.times.size)


def _crossing_time(v, i, level, sample_rate):
    if i == 0:
        return 0.0
    a, b = v[i - 1], v[i]
    frac = (level - a) / (b - a) if b != a else 1.0
    return (i - 1 + min(max(frac, 0.0), 1.0)) / sample_rate


def discriminate(v, upper: float, lower: float, sample_rate: float) -> Discriminated:
    """Dual-threshold trigger: opens on reaching ``upper``, closes on reaching ``lower``.

    Crossing times are linearly interpolated between samples.
    """
    if not (upper > lower and upper > 0 > lower):
        raise ParameterError("need upper > 0 > lower")
    v = np.asarray(v, dtype=float)
    above = np.flatnonzero(v >= upper)
    below = np.flatnonzero(v <= lower)
    times, widths, complete = [], [], []
    pos = 0
    while True:
        k = np.searchsorted(above, pos)
        if k >= above.size:
            break
        i_open = above[k]
        t_open = _crossing_time(v, i_open, upper, sample_rate)
        j = np.searchsorted(below, i_open)
        if j >= below.size:
            times.append(t_open)
            widths.append((v.size - 1) / sample_rate - t_open)
            complete.append(False)
            break
        i_close = below[j]
        times.append(t_open)
        widths.append(_crossing_time(v, i_close, lower, sample_rate) - t_open)
        complete.append(True)
        pos = i_close + 1
    return Discriminated(np.asarray(times), np.asarray(widths), np.asarray(complete, dtype=bool))


def random_avalanche_times(n: int, gate_freq: float, duration: float, seed: int, min_gap_gates: int = 2) -> np.ndarray:
    """``n`` sorted avalanche times on distinct gate peaks at least ``min_gap_gates`` apart.

    A sub-sample offset of up to a tenth of a gate period is added so the
    times do not sit on the sampling grid.
    """
    period = 1.0 / gate_freq
    # leave room for the echo and pulse tail at the end
    n_slots = int((duration - 4 * period) // (min_gap_gates * period))
    if n > n_slots:
        raise ParameterError(f"{n} avalanches do not fit in {n_slots} slots")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    slots = np.sort(rng.choice(n_slots, size=int(n), replace=False))
    return slots * min_gap_gates * period + rng.uniform(0.0, 0.1 * period, int(n))
