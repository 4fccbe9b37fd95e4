"""Maximum-likelihood power-law tail exponents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import zeta

from .fits import FitError

# 1 + mu quoted for the child-count tail of real-tape metaorders
REFERENCE_CHILD_COUNT_EXPONENT = 4.5


@dataclass
class PowerLawFit:
    exponent: float  # density exponent, P(x) ~ x^-exponent
    exponent_se: float
    x_min: float
    n: int
    discrete: bool

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "exponent_se": self.exponent_se,
                "x_min": self.x_min, "n": self.n, "discrete": self.discrete}


def fit_power_law(samples, x_min: float, discrete: bool = False,
                  min_samples: int = 1000) -> PowerLawFit:
    """Tail exponent of ``samples >= x_min``.

    Continuous data use the Hill estimator 1 + n / sum(log(x / x_min)).
    Discrete data maximise the Hurwitz-zeta likelihood. The standard error is
    (exponent - 1) / sqrt(n) in both cases.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x_min <= 0:
        raise ValueError("x_min must be positive")
    tail = x[x >= x_min]
    n = len(tail)
    if n < min_samples:
        raise FitError(f"{n} samples above x_min, need {min_samples}", n=n)
    if np.ptp(tail) == 0:
        raise FitError("degenerate tail: all samples equal", n=n)
    log_sum = float(np.sum(np.log(tail / x_min)))
    hill = 1.0 + n / log_sum
    if not discrete:
        alpha = hill
    else:
        s = float(np.sum(np.log(tail)))

        def nll(a):
            return n * np.log(zeta(a, x_min)) + a * s

        res = minimize_scalar(nll, bounds=(1.0 + 1e-6, max(2 * hill, 20.0)), method="bounded",
                              options={"xatol": 1e-10})
        if not res.success:
            raise FitError("discrete likelihood maximisation failed", n=n)
        alpha = float(res.x)
    return PowerLawFit(float(alpha), float((alpha - 1.0) / np.sqrt(n)), float(x_min), n, discrete)
