"""Closed-form detector statistics for a gated SPAD under pulsed light.

Everything here is deterministic.  Intervals are counted in source periods
(``n = 1`` is the next laser pulse after a registered count) and the
afterpulse profile ``p_a(n)`` is indexed the same way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError

# below this, (1 - x) products are accumulated as sums of logs
_LOG_SPACE_THRESHOLD = 1e-8


def _check_prob(name, value, *, upper_open=False, lower_open=False):
    value = float(value)
    lo_ok = value > 0.0 if lower_open else value >= 0.0
    hi_ok = value < 1.0 if upper_open else value <= 1.0
    if not (lo_ok and hi_ok) or math.isnan(value):
        lo = "(0" if lower_open else "[0"
        hi = "1)" if upper_open else "1]"
        raise ParameterError(f"{name}={value!r} outside {lo}, {hi}")
    return value


@dataclass(frozen=True)
class AfterpulseProfile:
    """Per-bin probability of the first afterpulse, ``p_a(1) .. p_a(n_a)``.

    Bins beyond ``n_a`` carry exactly zero afterpulse probability.
    """

    probs: tuple

    def __post_init__(self):
        probs = tuple(float(x) for x in self.probs)
        if len(probs) == 0:
            raise ParameterError("afterpulse profile needs at least one bin")
        for i, x in enumerate(probs, start=1):
            _check_prob(f"p_a({i})", x, upper_open=True)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def zeros(cls, n_a: int = 1) -> "AfterpulseProfile":
        return cls((0.0,) * int(n_a))

    @property
    def n_a(self) -> int:
        return len(self.probs)

    def at(self, n: int) -> float:
        """``p_a(n)`` with the zero extension past the cutoff."""
        if n < 1:
            raise ParameterError("afterpulse bins start at n = 1")
        return self.probs[n - 1] if n <= self.n_a else 0.0

    def padded(self, n_max: int) -> np.ndarray:
        out = np.zeros(n_max)
        k = min(n_max, self.n_a)
        out[:k] = self.probs[:k]
        return out

    def to_list(self) -> list:
        return list(self.probs)


@dataclass(frozen=True)
class DetectorParams:
    qe: float
    dark_prob: float = 0.0
    afterpulse: AfterpulseProfile = field(default_factory=AfterpulseProfile.zeros)
    dead_pulses: int = 0

    def __post_init__(self):
        object.__setattr__(self, "qe", _check_prob("qe", self.qe))
        object.__setattr__(self, "dark_prob", _check_prob("dark_prob", self.dark_prob, upper_open=True))
        if not isinstance(self.afterpulse, AfterpulseProfile):
            object.__setattr__(self, "afterpulse", AfterpulseProfile(self.afterpulse))
        if int(self.dead_pulses) != self.dead_pulses or self.dead_pulses < 0:
            raise ParameterError(f"dead_pulses must be a non-negative integer, got {self.dead_pulses!r}")
        object.__setattr__(self, "dead_pulses", int(self.dead_pulses))

    def to_dict(self) -> dict:
        return {
            "qe": self.qe,
            "dark_prob": self.dark_prob,
            "afterpulse_probs": self.afterpulse.to_list(),
            "dead_pulses": self.dead_pulses,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorParams":
        return cls(
            qe=d["qe"],
            dark_prob=d.get("dark_prob", 0.0),
            afterpulse=AfterpulseProfile(d.get("afterpulse_probs", [0.0])),
            dead_pulses=d.get("dead_pulses", 0),
        )


@dataclass(frozen=True)
class SourceParams:
    """Pulsed source; the detector is gated at twice the repetition rate."""

    rep_rate: float
    mu: float = 0.0

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ParameterError(f"rep_rate must be positive, got {self.rep_rate!r}")
        if not self.mu >= 0:
            raise ParameterError(f"mu must be non-negative, got {self.mu!r}")
        object.__setattr__(self, "rep_rate", float(self.rep_rate))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def gate_rate(self) -> float:
        return 2.0 * self.rep_rate

    @property
    def photon_rate(self) -> float:
        return self.mu * self.rep_rate

    def to_dict(self) -> dict:
        return {"rep_rate_hz": self.rep_rate, "mu": self.mu}

    @classmethod
    def from_dict(cls, d: dict) -> "SourceParams":
        return cls(rep_rate=d["rep_rate_hz"], mu=d.get("mu", 0.0))


@dataclass(frozen=True)
class OperatingPoint:
    """Diode temperature and overvoltage.  Carried as metadata only."""

    temperature: float
    overvoltage: float

    def __post_init__(self):
        if not self.overvoltage > 0:
            raise ParameterError(f"overvoltage must be positive, got {self.overvoltage!r}")

    def to_dict(self) -> dict:
        return {"temperature_c": self.temperature, "overvoltage_v": self.overvoltage}


@dataclass(frozen=True)
class TailFit:
    """Fitted amplitude ``A`` and per-pulse probability ``p`` of the interval tail."""

    amplitude_A: float
    p: float
    cov: np.ndarray
    chi2: float = float("nan")
    dof: int = 0
    iterations: int = 0
    mu: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.p <= 1):
            raise ParameterError(f"fitted p={self.p!r} outside (0, 1]")
        if not (0 < self.amplitude_A <= 1):
            raise ParameterError(f"fitted A={self.amplitude_A!r} outside (0, 1]")
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(2, 2))

    @property
    def sigma_A(self) -> float:
        return math.sqrt(self.cov[0, 0])

    @property
    def sigma_p(self) -> float:
        return math.sqrt(self.cov[1, 1])

    @property
    def app(self) -> float:
        return app_from_amplitude(self.amplitude_A)

    @property
    def qe(self) -> Optional[float]:
        if self.mu is None:
            return None
        return qe_from_p(self.p, self.mu)


def first_count_distribution(p: float, ap: AfterpulseProfile, n_max: int) -> np.ndarray:
    """Probability that the first count after a registered one falls in bin n.

    Returns ``p(1) .. p(n_max)`` where ``p(n) = (1 - Q_n) * prod_{k<n} Q_k``
    and ``Q_n = (1 - p)(1 - p_a(n))``.
    """
    p = _check_prob("p", p, lower_open=True)
    n_max = int(n_max)
    if n_max < 1:
        raise ParameterError("n_max must be >= 1")
    q = (1.0 - p) * (1.0 - ap.padded(n_max))
    # survival before bin n: prod_{k<n} Q_k
    survive = np.empty(n_max)
    survive[0] = 1.0
    if n_max > 1:
        head = q[:-1]
        if np.any((head > 0) & (head < _LOG_SPACE_THRESHOLD)):
            with np.errstate(divide="ignore"):
                survive[1:] = np.exp(np.cumsum(np.log(head)))
        else:
            survive[1:] = np.cumprod(head)
    return (1.0 - q) * survive


def tail_amplitude(ap: AfterpulseProfile) -> float:
    """``A = prod_{n<=n_a} (1 - p_a(n))``, the weight of the afterpulse-free tail."""
    factors = 1.0 - np.asarray(ap.probs)
    if np.any(factors < _LOG_SPACE_THRESHOLD):
        return float(np.exp(np.sum(np.log(factors))))
    return float(np.prod(factors))


def app_from_amplitude(A: float) -> float:
    """Mean number of afterpulses per primary count, ``(1 - A) / A``."""
    A = float(A)
    if not (0.0 < A <= 1.0):
        raise ParameterError(f"tail amplitude A={A!r} outside (0, 1]")
    return (1.0 - A) / A


def detection_prob(mu: float, qe: float) -> float:
    """Click probability of an on/off detector for a coherent pulse."""
    if not mu >= 0:
        raise ParameterError(f"mu must be non-negative, got {mu!r}")
    qe = _check_prob("qe", qe)
    return -math.expm1(-mu * qe)


def qe_from_p(p: float, mu: float) -> float:
    """Invert :func:`detection_prob` for the quantum efficiency."""
    p = _check_prob("p", p, upper_open=True)
    if not mu > 0:
        raise ParameterError(f"mu must be positive to infer QE, got {mu!r}")
    return -math.log1p(-p) / mu


def expected_count_rate(n_ph, qe: float, rep_rate: float):
    """Count rate of a dead-time-free gated detector at photon rate ``n_ph``.

    Accepts scalars or arrays for ``n_ph``.
    """
    if not rep_rate > 0:
        raise ParameterError("rep_rate must be positive")
    n_ph = np.asarray(n_ph, dtype=float)
    if np.any(n_ph < 0):
        raise ParameterError("photon rate must be non-negative")
    out = -rep_rate * np.expm1(-n_ph * qe / rep_rate)
    return float(out) if out.ndim == 0 else out


def dead_time_rate(n_c, n_d: int, rep_rate: float):
    """Count rate when the detector is blind for ``n_d`` pulses after each count."""
    if not rep_rate > 0:
        raise ParameterError("rep_rate must be positive")
    if n_d < 0:
        raise ParameterError("n_d must be non-negative")
    n_c = np.asarray(n_c, dtype=float)
    if np.any(n_c < 0):
        raise ParameterError("count rate must be non-negative")
    out = n_c / (1.0 + n_c * n_d / rep_rate)
    return float(out) if out.ndim == 0 else out


def survival_products(p: float, ap: AfterpulseProfile, n_max: int) -> np.ndarray:
    """``prod_{k<=n} Q_k`` for ``n = 1 .. n_max``; the unnormalized mass left after bin n."""
    q = (1.0 - _check_prob("p", p, lower_open=True)) * (1.0 - ap.padded(int(n_max)))
    return np.cumprod(q)


def first_afterpulse_prob(ap: AfterpulseProfile) -> float:
    """``p_1 = p_a(1) + (1 - p_a(1)) p_a(2) + ...``, summed term by term."""
    total = 0.0
    none_yet = 1.0
    for x in ap.probs:
        total += none_yet * x
        none_yet *= 1.0 - x
    return total


