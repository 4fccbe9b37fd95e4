"""Synthetic tapes: random volumes and signs turned into prices.

Two price mechanisms are provided. ``instantaneous`` adds a permanent
return eps_t q_t^chi per trade. ``propagator`` lets each trade's impact decay
as l^-beta. Signs are either i.i.d. fair coins or long-memory signs from a
pool of hidden orders (Lillo-Mike-Farmer splitting).

Trade prices are pre-trade: the price recorded for trade t reflects the
impact of trades 0..t-1 only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

import numpy as np
from scipy.signal import fftconvolve

from .tape import DailyTape, SessionFilter

SIGN_MODELS = ("iid", "correlated")
IMPACT_MODELS = ("instantaneous", "propagator")

# Hidden-order size tail exponent that gives a measured sign-ACF exponent
# gamma over lags 2..100 (n = 10^6, pool of 5, mean of 8 seeds).
# Regenerate with ``calibrate_lmf``.
LMF_POOL = 5
LMF_CALIBRATION = np.array([
    # (tail exponent, measured gamma)
    (1.15, 0.1520),
    (1.20, 0.1832),
    (1.25, 0.2134),
    (1.30, 0.2500),
    (1.35, 0.2770),
    (1.40, 0.3037),
    (1.45, 0.3384),
    (1.50, 0.3706),
    (1.55, 0.4133),
    (1.60, 0.4525),
    (1.65, 0.4879),
    (1.70, 0.5308),
    (1.75, 0.5692),
    (1.80, 0.6083),
    (1.85, 0.6529),
    (1.90, 0.6943),
    (1.95, 0.7331),
    (2.00, 0.7664),
    (2.05, 0.8209),
    (2.10, 0.8776),
    (2.15, 0.9092),
])


def _default_session() -> SessionFilter:
    return SessionFilter()


@dataclass(frozen=True)
class SyntheticTapeConfig:
    n_trades: int = 1_000_000
    chi: float = 0.5
    q_min: float = 1.0
    q_max: float = 100.0
    sign_model: str = "iid"
    gamma: float = 0.5
    impact_model: str = "instantaneous"
    beta: float | None = None  # None: (1 - gamma) / 2
    seed: int = 0
    sigma_target: float = 0.02
    memory: int | None = None  # propagator kernel length, None = whole tape
    pool: int = LMF_POOL
    p0: float = 100.0
    symbol: str = "SYN"
    day: date = date(2024, 1, 2)
    session: SessionFilter = field(default_factory=_default_session)

    def __post_init__(self):
        if self.n_trades < 2:
            raise ValueError("need at least two trades")
        if not 0 < self.q_min <= self.q_max:
            raise ValueError("volumes need 0 < q_min <= q_max")
        if self.chi < 0:
            raise ValueError("chi must be non-negative")
        if self.sign_model not in SIGN_MODELS:
            raise ValueError(f"sign_model must be one of {SIGN_MODELS}")
        if self.impact_model not in IMPACT_MODELS:
            raise ValueError(f"impact_model must be one of {IMPACT_MODELS}")
        if self.sign_model == "correlated" and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def effective_beta(self) -> float:
        return (1.0 - self.gamma) / 2.0 if self.beta is None else self.beta


# --- signs ----------------------------------------------------------------------

def iid_signs(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)


def lmf_tail_for_gamma(gamma: float) -> float:
    """Interpolate the calibration table for the pool size ``LMF_POOL``."""
    tails, gammas = LMF_CALIBRATION[:, 0], LMF_CALIBRATION[:, 1]
    if not gammas[0] <= gamma <= gammas[-1]:
        raise ValueError(f"gamma={gamma} outside calibrated range [{gammas[0]}, {gammas[-1]}]")
    return float(np.interp(gamma, gammas, tails))


def lmf_signs(n: int, tail: float, pool: int, rng: np.random.Generator) -> np.ndarray:
    """Signs from ``pool`` hidden orders with Pareto(tail) sizes.

    Each step one active order is picked uniformly, its sign emitted and its
    remaining size decremented; exhausted orders are replaced by a fresh one
    with a random sign.
    """
    picks = rng.integers(0, pool, size=n).tolist()
    # every emission consumes at most one replacement order
    sizes = np.floor((1.0 - rng.random(n + pool)) ** (-1.0 / tail)).astype(np.int64).tolist()
    fresh = np.where(rng.random(n + pool) < 0.5, -1, 1).tolist()
    remaining = sizes[:pool]
    sign = fresh[:pool]
    nxt = pool
    out = [0] * n
    for t, k in enumerate(picks):
        out[t] = sign[k]
        r = remaining[k] - 1
        if r <= 0:
            remaining[k] = sizes[nxt]
            sign[k] = fresh[nxt]
            nxt += 1
        else:
            remaining[k] = r
    return np.array(out, dtype=np.int8)


def gen_correlated_signs(n: int, gamma: float, seed: int, pool: int = LMF_POOL,
                         tail: float | None = None) -> np.ndarray:
    """Long-memory signs whose autocorrelation decays roughly as l^-gamma."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if tail is None:
        if pool != LMF_POOL:
            raise ValueError(f"calibration table is for pool={LMF_POOL}; pass tail explicitly")
        tail = lmf_tail_for_gamma(gamma)
    return lmf_signs(n, tail, pool, np.random.default_rng(seed))


# --- prices ---------------------------------------------------------------------

def propagator_log_mid(signs: np.ndarray, volumes: np.ndarray, chi: float, beta: float,
                       memory: int | None = None) -> np.ndarray:
    """Unscaled log mid after each trade: sum_{u<=t} G(t-u+1) eps_u q_u^chi, G(l) = l^-beta."""
    flow = signs.astype(np.float64) * volumes ** chi
    n = len(flow)
    h = n if memory is None else min(int(memory), n)
    kernel = np.arange(1, h + 1, dtype=np.float64) ** (-beta)
    return fftconvolve(flow, kernel)[:n]


def _grid(config: SyntheticTapeConfig) -> np.ndarray:
    lo, hi = config.session.window_ns(config.day)
    step = (hi - lo) // config.n_trades
    if step < 1:
        raise ValueError("too many trades for a nanosecond grid in the session window")
    return lo + step * np.arange(config.n_trades, dtype=np.int64)


def _to_tape(config: SyntheticTapeConfig, signs, volumes, mid_after) -> DailyTape:
    # pre-trade price of trade t is the mid after trade t-1
    path = np.concatenate([[0.0], mid_after[:-1]])
    span = path.max() - path.min()
    scale = config.sigma_target / span if span > 0 else 1.0
    prices = config.p0 * np.exp(scale * path)
    return DailyTape(symbol=config.symbol, date=config.day, timestamps=_grid(config),
                     prices=prices, volumes=volumes, signs=signs, venue="SIM")


def _draw(config: SyntheticTapeConfig):
    rng = np.random.default_rng(config.seed)
    volumes = rng.uniform(config.q_min, config.q_max, config.n_trades)
    if config.sign_model == "iid":
        signs = iid_signs(config.n_trades, rng)
    else:
        sub = int(rng.integers(0, 2**63 - 1))
        signs = gen_correlated_signs(config.n_trades, config.gamma, sub, config.pool)
    return signs, volumes


def gen_iid_tape(config: SyntheticTapeConfig) -> DailyTape:
    """Fair i.i.d. signs, uniform volumes, permanent returns eps_t q_t^chi."""
    if config.sign_model != "iid" or config.impact_model != "instantaneous":
        raise ValueError("gen_iid_tape needs sign_model='iid' and impact_model='instantaneous'")
    signs, volumes = _draw(config)
    mid = np.cumsum(signs * volumes ** config.chi)
    return _to_tape(config, signs, volumes, mid)


def gen_propagator_tape(config: SyntheticTapeConfig) -> DailyTape:
    """Transient power-law impact; beta defaults to (1 - gamma) / 2."""
    if config.impact_model != "propagator":
        raise ValueError("gen_propagator_tape needs impact_model='propagator'")
    signs, volumes = _draw(config)
    mid = propagator_log_mid(signs, volumes, config.chi, config.effective_beta, config.memory)
    return _to_tape(config, signs, volumes, mid)


def generate_tape(config: SyntheticTapeConfig) -> DailyTape:
    if config.impact_model == "propagator":
        return gen_propagator_tape(config)
    if config.sign_model != "iid":
        signs, volumes = _draw(config)
        return _to_tape(config, signs, volumes, np.cumsum(signs * volumes ** config.chi))
    return gen_iid_tape(config)


# --- diagnostics ------------------------------------------------------------------

@dataclass
class SignACF:
    lags: np.ndarray
    acf: np.ndarray
    gamma: float  # minus the log-log slope over fit_range
    fit_range: tuple[int, int]


def sign_acf(signs: np.ndarray, max_lag: int) -> np.ndarray:
    """C(l) = mean of eps_t eps_{t+l} over the n - l available pairs, l = 0..max_lag."""
    x = np.asarray(signs, dtype=np.float64)
    n = len(x)
    if max_lag >= n:
        raise ValueError("max_lag must be smaller than the number of signs")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    raw = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return np.rint(raw) / (n - np.arange(max_lag + 1))


def measure_sign_acf(signs, max_lag: int = 100, fit_range: tuple[int, int] = (2, 100)) -> SignACF:
    """Sample sign autocorrelation and its power-law exponent."""
    if isinstance(signs, DailyTape):
        signs = signs.signs
    c = sign_acf(signs, max_lag)
    lags = np.arange(max_lag + 1)
    lo, hi = fit_range[0], min(fit_range[1], max_lag)
    sel = (lags >= lo) & (lags <= hi) & (c > 0)
    if sel.sum() >= 2:
        slope = np.polyfit(np.log(lags[sel]), np.log(c[sel]), 1)[0]
        gamma = float(-slope)
    else:
        gamma = float("nan")
    return SignACF(lags, c, gamma, (lo, hi))


def return_variance_slope(log_prices, lags=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-log slope of Var[log p(t+l) - log p(t)] against l (1 = diffusive)."""
    if isinstance(log_prices, DailyTape):
        log_prices = log_prices.log_prices
    lp = np.asarray(log_prices, dtype=np.float64)
    if lags is None:
        lags = np.unique(np.logspace(1, 3, 15).astype(int))
    lags = np.asarray(lags)
    var = np.array([np.var(lp[l:] - lp[:-l]) for l in lags])
    slope = float(np.polyfit(np.log(lags), np.log(var), 1)[0])
    return slope, lags, var


def calibrate_lmf(tails, n: int = 1_000_000, pool: int = LMF_POOL, seeds=range(8),
                  fit_range: tuple[int, int] = (2, 100)) -> np.ndarray:
    """Measured ACF exponent for each hidden-order tail exponent."""
    rows = []
    for tail in tails:
        g = [measure_sign_acf(lmf_signs(n, tail, pool, np.random.default_rng(s)),
                              fit_range[1], fit_range).gamma for s in seeds]
        rows.append((float(tail), float(np.mean(g))))
    return np.array(rows)
