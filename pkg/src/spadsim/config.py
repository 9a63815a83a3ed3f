"""Run configuration: one flat YAML mapping with dotted keys.

Physical quantities carry their SI unit in the key name.  A resolved config
(defaults, then file, then command-line overrides) is written next to every
output so that re-running it reproduces the files byte for byte.
"""
from __future__ import annotations

from pathlib import Path

import yaml

from . import __version__
from .errors import ParameterError
from .model import AfterpulseProfile, DetectorParams, OperatingPoint, SourceParams
from .waveform import StubParams, TraceParams

DEFAULTS = {
    "seed": 0,
    "sim.n_gates": 10_000,
    "sim.max_events": 1 << 28,
    "source.rep_rate_hz": 100e6,
    "source.mu": 0.59,
    "detector.qe": 0.189,
    "detector.dark_prob": 0.0,
    "detector.afterpulse_probs": [0.0],
    "detector.dead_pulses": 0,
    "analysis.n_a": 5,
    "analysis.n_bins": 100,
    "rate.rep_rate_hz": 100e6,
    "rate.n_d_max": 3,
    "rate.window_s": 1.0,
    "rate.grid_points": 200,
    "stub.z0_ohm": 50.0,
    "stub.length_m": 0.50,
    "stub.velocity_factor": 0.70,
    "stub.loss_db_per_m": 0.0,
    "stub.loss_ref_freq_hz": 200e6,
    "stub.load_ohm": 50.0,
    "stub.source_ohm": 50.0,
    "stub.cap_db": 120.0,
    "sweep.f_min_hz": 1e6,
    "sweep.f_max_hz": 1e9,
    "sweep.n_points": 1000,
    "trace.gate_freq_hz": 200e6,
    "trace.gate_leak_amplitude_v": 1.0,
    "trace.avalanche_amplitude_v": 1.0,
    "trace.avalanche_width_s": 1e-9,
    "trace.sample_rate_hz": 20e9,
    "trace.duration_s": 1e-6,
    "trace.noise_rms_v": 0.0,
    "trace.avalanche_times_s": [],
    "trace.n_random_avalanches": 0,
    "discriminator.upper_v": 0.5,
    "discriminator.lower_v": -0.5,
    "cascade.n_primaries": 1_000_000,
}

_INT_KEYS = {
    "seed",
    "sim.n_gates",
    "sim.max_events",
    "detector.dead_pulses",
    "analysis.n_a",
    "analysis.n_bins",
    "rate.n_d_max",
    "rate.grid_points",
    "sweep.n_points",
    "trace.n_random_avalanches",
    "cascade.n_primaries",
}
_LIST_KEYS = {"detector.afterpulse_probs", "trace.avalanche_times_s"}
# keys that may be absent or null
_OPTIONAL = {"analysis.mu", "op.temperature_c", "op.overvoltage_v", "stub.target_depth_db", "stub.matched_gate_freq_hz"}


class ConfigError(ParameterError):
    pass


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value):
    if value is None:
        if key in _OPTIONAL:
            return None
        raise ConfigError(f"{key} may not be null")
    try:
        if key in _LIST_KEYS:
            if isinstance(value, str):
                value = [x for x in value.split(",") if x.strip()]
            return [float(x) for x in value]
        if key in _INT_KEYS:
            f = float(value)
            if f != int(f):
                raise ValueError("not an integer")
            return int(f)
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


class RunConfig:
    """Resolved flat configuration."""

    def __init__(self, values: dict | None = None):
        merged = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS and k not in _OPTIONAL:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = v
        self.values = {k: _coerce(k, v) for k, v in merged.items()}

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a key-value mapping")
        raw.pop("tool_version", None)
        return cls(_flatten(raw))

    def updated(self, **overrides) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(vals)

    def __getitem__(self, key):
        return self.values.get(key)

    def dump(self) -> str:
        doc = {"tool_version": __version__}
        doc.update({k: self.values[k] for k in sorted(self.values)})
        return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)

    def write(self, path) -> None:
        Path(path).write_text(self.dump())

    def detector(self) -> DetectorParams:
        return DetectorParams(
            qe=self["detector.qe"],
            dark_prob=self["detector.dark_prob"],
            afterpulse=AfterpulseProfile(self["detector.afterpulse_probs"]),
            dead_pulses=self["detector.dead_pulses"],
        )

    def source(self) -> SourceParams:
        return SourceParams(self["source.rep_rate_hz"], self["source.mu"])

    def operating_point(self):
        t, ov = self["op.temperature_c"], self["op.overvoltage_v"]
        if t is None and ov is None:
            return None
        if t is None or ov is None:
            raise ConfigError("op.temperature_c and op.overvoltage_v must be given together")
        return OperatingPoint(t, ov)

    def stub(self) -> StubParams:
        kw = dict(
            z0=self["stub.z0_ohm"],
            velocity_factor=self["stub.velocity_factor"],
            loss_db_per_m_at_ref=self["stub.loss_db_per_m"],
            loss_ref_freq=self["stub.loss_ref_freq_hz"],
            load=self["stub.load_ohm"],
            source_impedance=self["stub.source_ohm"],
        )
        if self["stub.matched_gate_freq_hz"] is not None:
            kw.pop("velocity_factor")
            return StubParams.matched(self["stub.matched_gate_freq_hz"], self["stub.velocity_factor"], **kw)
        return StubParams(length=self["stub.length_m"], **kw)

    def trace(self, times) -> TraceParams:
        return TraceParams(
            gate_freq=self["trace.gate_freq_hz"],
            gate_leak_amplitude=self["trace.gate_leak_amplitude_v"],
            avalanche_amplitude=self["trace.avalanche_amplitude_v"],
            avalanche_width=self["trace.avalanche_width_s"],
            sample_rate=self["trace.sample_rate_hz"],
            duration=self["trace.duration_s"],
            avalanche_times=tuple(times),
            noise_rms=self["trace.noise_rms_v"],
            seed=self["seed"],
        )
