"""Square-root-law and decay-exponent fits on binned curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .curves import DecayCurve, ImpactCurve

DEFAULT_FIT_RANGE = (5e-6, 1e-1)


class FitError(RuntimeError):
    """A fit could not be produced; ``diagnostics`` says why."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _weights(se: np.ndarray) -> np.ndarray:
    # exact (noise-free) input carries no usable error bars
    if np.all(np.isfinite(se)) and np.all(se > 0):
        return 1.0 / se**2
    return np.ones_like(se)


def _wls(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted least squares; covariance scaled by the residual variance."""
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    dof = len(y) - X.shape[1]
    s2 = float(np.sum(w * resid**2) / dof) if dof > 0 else 0.0
    cov = np.linalg.inv((X * w[:, None]).T @ X) * s2
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0))


@dataclass
class SqrtFit:
    Y: float
    Y_se: float
    delta: float
    delta_se: float
    prefactor_free: float  # exp(intercept) of the free log-log fit
    x_lo: float
    x_hi: float
    n_bins: int
    n_bins_loglog: int

    def as_dict(self) -> dict:
        return {
            "Y": self.Y, "Y_se": self.Y_se, "delta": self.delta, "delta_se": self.delta_se,
            "prefactor_free": self.prefactor_free, "fit_range": [self.x_lo, self.x_hi],
            "n_bins": self.n_bins, "n_bins_loglog": self.n_bins_loglog,
        }


def fit_sqrt_law(curve: ImpactCurve, x_range: tuple[float, float] = DEFAULT_FIT_RANGE,
                 min_bins: int = 5) -> SqrtFit:
    """Fit mean impact = Y sqrt(x) through the origin, and a free log-log slope.

    Both fits weight bins by 1/SE^2 (propagated to log space for the slope).
    Only retained bins inside ``x_range`` are used; the log-log fit also
    needs positive means.
    """
    lo, hi = x_range
    if not lo < hi:
        raise ValueError("fit range needs x_lo < x_hi")
    sel = curve.retained & (curve.x >= lo) & (curve.x <= hi) & np.isfinite(curve.mean)
    if sel.sum() < min_bins:
        raise FitError(f"only {int(sel.sum())} retained bins in range, need {min_bins}",
                       n_bins=int(sel.sum()))
    x, m, se = curve.x[sel], curve.mean[sel], curve.se[sel]
    w = _weights(se)
    (Y,), (Y_se,) = _wls(np.sqrt(x)[:, None], m, w)

    pos = m > 0
    if pos.sum() < min_bins:
        raise FitError(f"only {int(pos.sum())} bins with positive impact, need {min_bins}",
                       n_bins=int(sel.sum()), n_positive=int(pos.sum()), Y=float(Y))
    lx, lm = np.log(x[pos]), np.log(m[pos])
    wl = _weights(se[pos] / m[pos])
    (a, delta), (_, delta_se) = _wls(np.column_stack([np.ones_like(lx), lx]), lm, wl)
    return SqrtFit(float(Y), float(Y_se), float(delta), float(delta_se), float(np.exp(a)),
                   float(lo), float(hi), int(sel.sum()), int(pos.sum()))


def decay_shape(z: np.ndarray, beta: float) -> np.ndarray:
    """Post-execution impact relative to peak for a power-law propagator."""
    z = np.asarray(z, dtype=np.float64)
    return z ** (1 - beta) - np.maximum(z - 1, 0.0) ** (1 - beta)


@dataclass
class DecayFit:
    beta: float
    beta_se: float
    n_points: int
    rms_residual: float
    gamma: float | None = None

    @property
    def beta_from_gamma(self) -> float | None:
        """Diffusive propagator exponent (1 - gamma)/2, when gamma is known."""
        return None if self.gamma is None else beta_from_gamma(self.gamma)

    def as_dict(self) -> dict:
        return {"beta": self.beta, "beta_se": self.beta_se, "n_points": self.n_points,
                "rms_residual": self.rms_residual, "gamma": self.gamma,
                "beta_from_gamma": self.beta_from_gamma}


def beta_from_gamma(gamma: float) -> float:
    return (1.0 - gamma) / 2.0


def fit_decay_beta(curve: DecayCurve, gamma: float | None = None, min_points: int = 8) -> DecayFit:
    """Least-squares fit of the propagator decay shape, beta in (0, 1)."""
    pop = curve.populated & np.isfinite(curve.mean)
    if pop.sum() < min_points:
        raise FitError(f"only {int(pop.sum())} populated z points, need {min_points}",
                       n_points=int(pop.sum()))
    z, m, se = curve.z[pop], curve.mean[pop], curve.se[pop]
    # the z = 1 point is 1 for every beta and carries no error bar
    inner = z > 1
    if np.all(np.isfinite(se[inner])) and np.all(se[inner] > 0):
        z, m, se = z[inner], m[inner], se[inner]
        sigma = se
    else:
        sigma = np.ones_like(m)

    def resid(b):
        return (decay_shape(z, b[0]) - m) / sigma

    res = least_squares(resid, x0=[0.3], bounds=([1e-9], [1 - 1e-9]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    beta = float(res.x[0])
    rms = float(np.sqrt(np.mean((decay_shape(z, beta) - m) ** 2)))
    if not res.success or not (1e-6 < beta < 1 - 1e-6):
        raise FitError("decay fit did not converge to beta in (0, 1)", beta=beta,
                       status=int(res.status), solver_message=res.message, rms_residual=rms)
    J = res.jac
    dof = max(len(m) - 1, 1)
    s2 = float(np.sum(res.fun**2) / dof)
    jtj = float((J.T @ J)[0, 0])
    beta_se = float(np.sqrt(s2 / jtj)) if jtj > 0 else float("nan")
    return DecayFit(beta, beta_se, int(len(m)), rms, gamma)
