"""Count rate versus photon rate: ideal and pulse-quantized dead-time models.

The dead time ``n_d`` is a discrete model index.  Each candidate is fitted
for QE alone and judged by the upper-tail chi-square probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import DegenerateSpanError, ParameterError
from .fitting import levenberg_marquardt
from .model import DetectorParams, OperatingPoint, SourceParams, dead_time_rate, expected_count_rate
from .montecarlo import simulate

SIGNIFICANCE = 0.001
COMPATIBLE = "compatible"
INCOMPATIBLE = "incompatible"


@dataclass(frozen=True, eq=False)
class RateCurve:
    """Measured ``(n_ph, n_c, sigma)`` points in photons/s and counts/s.

    When ``sigma`` is omitted it defaults to the Poisson error of the counts
    collected in one acquisition window of ``window_s`` seconds.
    """

    n_ph: np.ndarray
    n_c: np.ndarray
    rep_rate: float
    sigma: Optional[np.ndarray] = None
    window_s: float = 1.0
    operating_point: Optional[OperatingPoint] = None

    def __post_init__(self):
        n_ph = np.asarray(self.n_ph, dtype=float)
        n_c = np.asarray(self.n_c, dtype=float)
        if n_ph.shape != n_c.shape or n_ph.ndim != 1:
            raise ParameterError("n_ph and n_c must be 1-D arrays of equal length")
        if not self.rep_rate > 0:
            raise ParameterError("rep_rate must be positive")
        if np.any(n_ph < 0) or np.any(n_c < 0):
            raise ParameterError("rates must be non-negative")
        if np.any(n_c >= self.rep_rate):
            raise ParameterError("a count rate reaches the repetition rate")
        if self.sigma is None:
            counts = n_c * self.window_s
            sigma = np.where(counts > 0, np.sqrt(counts), 1.0) / self.window_s
        else:
            sigma = np.asarray(self.sigma, dtype=float)
            if sigma.shape != n_c.shape or np.any(sigma <= 0):
                raise ParameterError("sigma must be positive and match n_c")
        object.__setattr__(self, "n_ph", n_ph)
        object.__setattr__(self, "n_c", n_c)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rep_rate", float(self.rep_rate))

    def __len__(self):
        return int(self.n_ph.size)

    def spans_decade(self) -> bool:
        pos = self.n_ph[self.n_ph > 0]
        return pos.size >= 2 and pos.max() >= 10.0 * pos.min()


@dataclass(frozen=True)
class RateFitResult:
    qe: float
    qe_sigma: float
    n_d_tested: int
    chi2: float
    dof: int
    p_value: float
    verdict: str
    indeterminate: bool = False
    degenerate: bool = False

    @property
    def qe_rel_sigma(self) -> float:
        return self.qe_sigma / self.qe if self.qe > 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "n_d": self.n_d_tested,
            "qe": self.qe,
            "qe_sigma": self.qe_sigma,
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "verdict": self.verdict,
            "indeterminate": self.indeterminate,
            "degenerate": self.degenerate,
        }


def model_rate(n_ph, qe: float, rep_rate: float, n_d: int = 0):
    """Expected counts/s for a detector blind for ``n_d`` pulses after each count."""
    return dead_time_rate(expected_count_rate(n_ph, qe, rep_rate), n_d, rep_rate)


def _initial_qe(curve: RateCurve, n_d: int) -> float:
    nu = curve.rep_rate
    ok = (curve.n_ph > 0) & (curve.n_c > 0)
    if not np.any(ok):
        return 0.1
    i = np.flatnonzero(ok)[np.argmin(curve.n_ph[ok])]
    dt = curve.n_c[i]
    ideal = dt / (1.0 - dt * n_d / nu) if dt * n_d < nu else 0.99 * nu
    ideal = min(ideal, 0.99 * nu)
    qe = -nu * math.log1p(-ideal / nu) / curve.n_ph[i]
    return float(np.clip(qe, 1e-9, 1.0))


def _fit(curve: RateCurve, n_d: int, check_span: bool) -> RateFitResult:
    if n_d < 0 or int(n_d) != n_d:
        raise ParameterError("n_d must be a non-negative integer")
    n_d = int(n_d)
    if check_span and (len(curve) < 3 or not curve.spans_decade()):
        raise DegenerateSpanError("rate fit needs >= 3 points spanning at least one decade of photon rate")
    if len(curve) < 1:
        raise DegenerateSpanError("rate curve is empty")
    nu = curve.rep_rate
    x, y, s = curve.n_ph, curve.n_c, curve.sigma

    def residuals(v):
        return (model_rate(x, v[0], nu, n_d) - y) / s

    def jacobian(v):
        qe = v[0]
        e = np.exp(-x * qe / nu)
        nc = nu * (1.0 - e)
        dnc = x * e
        # d/dNc of Nc / (1 + Nc n_d / nu)
        dmodel = dnc / (1.0 + nc * n_d / nu) ** 2
        return (dmodel / s)[:, None]

    res = levenberg_marquardt(residuals, jacobian, [_initial_qe(curve, n_d)], bounds=([0.0], [1.0]))
    qe = float(res.params[0])
    dof = len(curve) - 1
    p_value = float(stats.chi2.sf(res.chi2, dof)) if dof > 0 else float("nan")
    verdict = COMPATIBLE if not (p_value < SIGNIFICANCE) else INCOMPATIBLE
    return RateFitResult(
        qe=qe,
        qe_sigma=float(math.sqrt(res.cov[0, 0])),
        n_d_tested=n_d,
        chi2=float(res.chi2),
        dof=dof,
        p_value=p_value,
        verdict=verdict,
        degenerate=not np.any(y > 0),
    )


def fit_ideal(curve: RateCurve) -> RateFitResult:
    """Fit QE with the dead-time-free model."""
    return _fit(curve, 0, check_span=True)


def fit_with_dead_time(curve: RateCurve, n_d: int) -> RateFitResult:
    """Fit QE with the ideal rate passed through an ``n_d``-pulse dead time."""
    if n_d < 1:
        raise ParameterError("fit_with_dead_time needs n_d >= 1; use fit_ideal for n_d = 0")
    return _fit(curve, n_d, check_span=True)


def dead_time_verdict(curve: RateCurve, n_d_max: int) -> list:
    """Fit ``n_d = 0 .. n_d_max`` and label each model compatible or not.

    Curves too short or too narrow for a conclusive test are still fitted,
    and every result is flagged ``indeterminate``; the same flag is set
    when no candidate is rejected.
    """
    n_d_max = int(n_d_max)
    if n_d_max < 1:
        raise ParameterError("n_d_max must be >= 1")
    weak = len(curve) < 3 or not curve.spans_decade()
    results = [_fit(curve, n_d, check_span=False) for n_d in range(n_d_max + 1)]
    indeterminate = weak or all(r.verdict == COMPATIBLE for r in results)
    if indeterminate:
        results = [_replace_flag(r) for r in results]
    return results


def _replace_flag(r: RateFitResult) -> RateFitResult:
    d = dict(r.__dict__)
    d["indeterminate"] = True
    return RateFitResult(**d)


def prediction_table(results, rep_rate: float, n_ph_min: float, n_ph_max: float, n_points: int = 200) -> np.ndarray:
    """Model rates over a log-spaced photon-rate grid, one column per fitted model.

    Column 0 is ``n_ph``; column ``k + 1`` is the prediction of ``results[k]``.
    """
    grid = np.logspace(math.log10(n_ph_min), math.log10(n_ph_max), int(n_points))
    cols = [grid] + [model_rate(grid, r.qe, rep_rate, r.n_d_tested) for r in results]
    return np.column_stack(cols)


def point_seeds(seed: int, n: int) -> list:
    """Independent 63-bit seeds for ``n`` sweep points derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(int(n))
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def simulated_curve(
    det: DetectorParams,
    rep_rate: float,
    photon_rates,
    n_gates: int,
    seed: int,
) -> RateCurve:
    """Run one simulation per photon rate and collect counts/s with Poisson errors."""
    photon_rates = np.asarray(photon_rates, dtype=float)
    duration = n_gates / (2.0 * rep_rate)
    counts = []
    for n_ph, s in zip(photon_rates, point_seeds(seed, photon_rates.size)):
        stream = simulate(det, SourceParams(rep_rate, n_ph / rep_rate), n_gates, s)
        counts.append(len(stream))
    return RateCurve(photon_rates, np.asarray(counts, dtype=float) / duration, rep_rate, window_s=duration)
