"""Small damped Gauss-Newton (Levenberg-Marquardt) solver for weighted fits.

Only a handful of parameters are ever fitted here, so the normal equations
are solved directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError


@dataclass
class LMResult:
    params: np.ndarray
    cov: np.ndarray
    chi2: float
    iterations: int
    trace: list


def levenberg_marquardt(
    residuals,
    jacobian,
    x0,
    *,
    xtol: float = 1e-10,
    max_iter: int = 200,
    lam0: float = 1e-3,
    bounds=None,
) -> LMResult:
    """Minimize ``sum(residuals(x)**2)``.

    ``residuals`` must already be divided by the data uncertainties and
    ``jacobian`` must return ``d residuals / d x`` of shape ``(m, n)``.
    ``bounds`` is an optional ``(lo, hi)`` pair of arrays; trial points are
    projected back into the box.

    The returned covariance is ``(J^T J)^-1`` at the solution, i.e. it
    assumes the supplied uncertainties are absolute.
    """
    x = np.array(x0, dtype=float)
    r = residuals(x)
    chi2 = float(r @ r)
    lam = lam0
    trace = [(0, chi2, x.copy())]
    lo, hi = (None, None) if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))

    for it in range(1, max_iter + 1):
        J = jacobian(x)
        g = J.T @ r
        H = J.T @ J
        diag = np.diag(H).copy()
        diag[diag == 0] = 1.0
        while True:
            trial = x + np.linalg.solve(H + lam * np.diag(diag), -g)
            if bounds is not None:
                trial = np.clip(trial, lo, hi)
            step = trial - x
            r_trial = residuals(trial)
            chi2_trial = float(r_trial @ r_trial)
            if np.isfinite(chi2_trial) and chi2_trial <= chi2:
                break
            lam *= 10.0
            if lam > 1e16:
                # no downhill step exists at machine precision: treat as converged
                # if the gradient has vanished, otherwise give up
                if np.all(np.abs(step) <= xtol * np.maximum(np.abs(x), 1e-300)):
                    return _finish(x, jacobian, chi2, it, trace)
                raise ConvergenceError(f"damping diverged at iteration {it}", trace)
        x = trial
        r = r_trial
        chi2 = chi2_trial
        lam = max(lam / 10.0, 1e-12)
        trace.append((it, chi2, x.copy()))
        if np.all(np.abs(step) <= xtol * np.maximum(np.abs(x), 1e-300)):
            return _finish(x, jacobian, chi2, it, trace)
    raise ConvergenceError(f"no convergence after {max_iter} iterations", trace)


def _finish(x, jacobian, chi2, it, trace):
    J = jacobian(x)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((x.size, x.size), np.inf)
    return LMResult(x, cov, chi2, it, trace)
