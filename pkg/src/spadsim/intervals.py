"""Interval-histogram characterization: QE and afterpulse probability from event data.

A window opens at a detection and closes at the next one if it arrives
within ``n_bins`` source periods.  Separations are measured in gates; odd
separations are not source-coincident and the window is discarded.  The
next window opens at the first event after the one that closed the
previous window, so windows never share an event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .errors import InsufficientDataError, ParameterError, UnitMismatchError
from .fitting import levenberg_marquardt
from .model import OperatingPoint, SourceParams, TailFit, app_from_amplitude, qe_from_p
from .montecarlo import EventStream

MIN_TAIL_BINS = 5


@dataclass(frozen=True, eq=False)
class IntervalHistogram:
    """First-interval counts for ``n = 1 .. n_bins`` source periods.

    ``counts[n - 1]`` holds bin ``n``.  ``no_second`` counts windows that
    closed without a second event.
    """

    counts: np.ndarray
    discarded_odd: int = 0
    no_second: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ParameterError("histogram needs at least 2 bins")
        if np.any(counts < 0):
            raise ParameterError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, self.n_bins + 1)

    @property
    def accepted(self):
        return self.counts.sum()

    @property
    def total_windows(self):
        return self.accepted + self.discarded_odd + self.no_second

    def normalized(self) -> np.ndarray:
        total = self.accepted
        if total == 0:
            raise InsufficientDataError("histogram is empty")
        return self.counts / total

    def __add__(self, other: "IntervalHistogram") -> "IntervalHistogram":
        if self.n_bins != other.n_bins:
            raise ParameterError("cannot merge histograms with different bin counts")
        return IntervalHistogram(
            self.counts + other.counts,
            self.discarded_odd + other.discarded_odd,
            self.no_second + other.no_second,
        )

    def __eq__(self, other):
        if not isinstance(other, IntervalHistogram):
            return NotImplemented
        return (
            np.array_equal(self.counts, other.counts)
            and self.discarded_odd == other.discarded_odd
            and self.no_second == other.no_second
        )


@numba.njit(cache=True)
def _histogram_kernel(ev, n_gates, max_sep, counts):
    odd = 0
    none = 0
    i = 0
    n = ev.size
    while i < n:
        start = ev[i]
        if i + 1 < n and ev[i + 1] - start <= max_sep:
            sep = ev[i + 1] - start
            if sep & 1:
                odd += 1
            else:
                counts[sep // 2 - 1] += 1
            i += 2
        else:
            if start + max_sep >= n_gates:
                break  # window runs past the end of the record
            none += 1
            i += 1
    return odd, none


def build_histogram(stream: EventStream, src: SourceParams, n_bins: int = 100) -> IntervalHistogram:
    n_bins = int(n_bins)
    if n_bins < 2:
        raise ParameterError("n_bins must be >= 2")
    if stream.source is not None and not math.isclose(stream.source.rep_rate, src.rep_rate, rel_tol=1e-12):
        raise UnitMismatchError(
            f"stream recorded at rep_rate {stream.source.rep_rate} Hz, analysis assumes {src.rep_rate} Hz"
        )
    counts = np.zeros(n_bins, dtype=np.int64)
    odd, none = _histogram_kernel(stream.events, stream.n_gates, 2 * n_bins, counts)
    return IntervalHistogram(counts, int(odd), int(none))


def gates_from_times(times, gate_rate: float, t0: float = 0.0) -> np.ndarray:
    """Round analog event times to the nearest gate index, ties away from zero."""
    x = (np.asarray(times, dtype=float) - t0) * gate_rate
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _tail_model(n, A, p):
    return A * p * (1.0 - p) ** (n - 1)


def _initial_p(n, counts):
    # ratio of adjacent bins, smoothed by summing over the tail
    c = counts.astype(float)
    num = c[1:].sum()
    den = c[:-1].sum()
    if den <= 0 or num <= 0:
        return 0.5
    return float(np.clip(1.0 - num / den, 1e-6, 1.0 - 1e-6))


def fit_tail(hist: IntervalHistogram, n_a: int, mu: Optional[float] = None) -> TailFit:
    """Weighted least-squares fit of ``A p (1-p)^(n-1)`` to bins ``n > n_a``.

    The histogram is normalized by all accepted counts, including the
    afterpulse region that is left out of the fit.  Bin uncertainties are
    Poisson, ``sqrt(count)``, with empty bins given an uncertainty of one
    count.
    """
    n_a = int(n_a)
    if n_a < 0 or n_a >= hist.n_bins:
        raise ParameterError(f"n_a={n_a} must lie in [0, n_bins)")
    total = float(hist.accepted)
    counts = np.asarray(hist.counts, dtype=float)[n_a:]
    n = hist.n[n_a:].astype(float)
    nonzero = int(np.count_nonzero(counts))
    if total <= 0 or nonzero < MIN_TAIL_BINS:
        raise InsufficientDataError(
            f"need at least {MIN_TAIL_BINS} non-empty bins beyond n_a={n_a}, found {nonzero}"
        )
    y = counts / total
    sigma = np.where(counts > 0, np.sqrt(counts), 1.0) / total

    def residuals(x):
        return (_tail_model(n, x[0], x[1]) - y) / sigma

    def jacobian(x):
        A, p = x
        q = 1.0 - p
        dA = p * q ** (n - 1)
        dp = A * (q ** (n - 1) - p * (n - 1) * q ** np.maximum(n - 2, 0))
        return np.column_stack([dA, dp]) / sigma[:, None]

    p0 = _initial_p(n, counts)
    res = levenberg_marquardt(
        residuals,
        jacobian,
        [1.0, p0],
        bounds=([1e-12, 1e-12], [1.0, 1.0]),
    )
    A, p = res.params
    return TailFit(
        amplitude_A=float(A),
        p=float(p),
        cov=res.cov,
        chi2=res.chi2,
        dof=int(n.size - 2),
        iterations=res.iterations,
        mu=mu,
    )


@dataclass(frozen=True)
class CharacterizationResult:
    fit: TailFit
    mu_assumed: float
    n_a_used: int
    qe: float
    app: float
    qe_sigma: float
    app_sigma: float
    histogram: IntervalHistogram
    operating_point: Optional[OperatingPoint] = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        h = self.histogram
        return {
            "qe": self.qe,
            "qe_sigma": self.qe_sigma,
            "app": self.app,
            "app_sigma": self.app_sigma,
            "amplitude_A": self.fit.amplitude_A,
            "amplitude_A_sigma": self.fit.sigma_A,
            "p": self.fit.p,
            "p_sigma": self.fit.sigma_p,
            "cov_A_p": self.fit.cov.tolist(),
            "mu_assumed": self.mu_assumed,
            "n_a_used": self.n_a_used,
            "n_bins": h.n_bins,
            "fit": {
                "chi2": self.fit.chi2,
                "dof": self.fit.dof,
                "iterations": self.fit.iterations,
            },
            "histogram": {
                "accepted": int(h.accepted),
                "discarded_odd": int(h.discarded_odd),
                "no_second": int(h.no_second),
                "total_windows": int(h.total_windows),
            },
            "operating_point": None if self.operating_point is None else self.operating_point.to_dict(),
            "provenance": self.provenance,
        }


def characterize_histogram(
    hist: IntervalHistogram,
    mu: float,
    n_a: int = 5,
    op_point: Optional[OperatingPoint] = None,
    provenance: Optional[dict] = None,
) -> CharacterizationResult:
    fit = fit_tail(hist, n_a, mu=mu)
    A, p = fit.amplitude_A, fit.p
    qe = qe_from_p(p, mu) if p < 1 else float("inf")
    qe_sigma = fit.sigma_p / (mu * (1.0 - p)) if p < 1 else float("inf")
    return CharacterizationResult(
        fit=fit,
        mu_assumed=float(mu),
        n_a_used=int(n_a),
        qe=qe,
        app=app_from_amplitude(A),
        qe_sigma=float(qe_sigma),
        app_sigma=float(fit.sigma_A / A**2),
        histogram=hist,
        operating_point=op_point,
        provenance=dict(provenance or {}),
    )


def characterize(
    stream: EventStream,
    src: SourceParams,
    n_a: int = 5,
    n_bins: int = 100,
    op_point: Optional[OperatingPoint] = None,
) -> CharacterizationResult:
    """Histogram the stream, fit the tail and convert ``(A, p)`` to ``(APP, QE)``.

    ``src.mu`` is the assumed mean photon number per pulse.
    """
    if not src.mu > 0:
        raise ParameterError("characterization needs mu > 0 to infer QE")
    hist = build_histogram(stream, src, n_bins)
    provenance = {"seed": stream.seed, "n_gates": stream.n_gates, "n_events": len(stream)}
    if stream.detector is not None:
        provenance["detector"] = stream.detector.to_dict()
    if stream.source is not None:
        provenance["source"] = stream.source.to_dict()
    return characterize_histogram(hist, src.mu, n_a, op_point, provenance)


@dataclass(frozen=True)
class DcrReport:
    mean: float
    std: float
    n_windows: int
    window_s: float

    def to_dict(self) -> dict:
        return {"dcr_mean_hz": self.mean, "dcr_std_hz": self.std, "n_windows": self.n_windows, "window_s": self.window_s}


def dcr_report(counts, window_s: float = 1.0) -> DcrReport:
    """Mean and sample standard deviation of per-window counts, in counts per second."""
    c = np.asarray(counts, dtype=float)
    if c.size < 2:
        raise InsufficientDataError("need at least 2 acquisition windows")
    return DcrReport(float(c.mean() / window_s), float(c.std(ddof=1) / window_s), int(c.size), float(window_s))
