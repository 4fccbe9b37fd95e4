"""Random assignment of anonymous trades to synthetic traders."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date

import numpy as np

from .tape import DailyTape

LAWS = ("homogeneous", "powerlaw")


@dataclass(frozen=True)
class FrequencyLaw:
    """Distribution F of trader participation frequencies.

    ``powerlaw`` means P(f) ~ f^-alpha on f >= 1, which needs alpha > 1.
    """

    kind: str = "homogeneous"
    alpha: float = 2.0

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ValueError(f"unknown frequency law {self.kind!r}, expected one of {LAWS}")
        if self.kind == "powerlaw" and not self.alpha > 1:
            raise ValueError("power-law frequency exponent must exceed 1")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "homogeneous":
            return np.ones(n)
        # inverse CDF of a scale-1 Pareto density f^-alpha
        u = 1.0 - rng.random(n)  # (0, 1]
        return u ** (-1.0 / (self.alpha - 1.0))

    def label(self) -> str:
        return "homogeneous" if self.kind == "homogeneous" else f"powerlaw(alpha={self.alpha:g})"


@dataclass(frozen=True)
class MappingConfig:
    n_traders: int
    law: FrequencyLaw = FrequencyLaw()
    seed: int = 0

    def __post_init__(self):
        if int(self.n_traders) < 1:
            raise ValueError("need at least one trader")

    def for_day(self, symbol: str, day: date) -> "MappingConfig":
        return MappingConfig(self.n_traders, self.law, derive_seed(self.seed, symbol, day))


def derive_seed(master_seed: int, symbol: str, day: date | str) -> int:
    """Stable 63-bit seed for one (symbol, day) task."""
    key = f"{int(master_seed)}|{symbol}|{day}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


@dataclass
class TraderAssignment:
    labels: np.ndarray  # trader id per trade, int32 in [0, N)
    frequencies: np.ndarray
    probabilities: np.ndarray
    cumulative: np.ndarray  # length N + 1, c[0] = 0, c[N] = 1

    @property
    def n_traders(self) -> int:
        return len(self.probabilities)

    def __len__(self) -> int:
        return len(self.labels)


def _frequency_tables(config: MappingConfig, rng: np.random.Generator):
    f = config.law.sample(int(config.n_traders), rng)
    p = f / f.sum()
    c = np.empty(len(p) + 1)
    c[0] = 0.0
    np.cumsum(p, out=c[1:])
    c[-1] = 1.0  # absorb rounding so U < 1 always finds a trader
    return f, p, c


def draw_frequencies(config: MappingConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frequencies f, probabilities p and cumulative c for ``config``."""
    return _frequency_tables(config, np.random.default_rng(config.seed))


def assign_traders(tape: DailyTape | int, config: MappingConfig) -> TraderAssignment:
    """Label every trade with one trader, independently, in tape order.

    Trader i receives the trade when c[i] <= U < c[i+1]. The same
    ``(tape, config)`` always gives the same labels.
    """
    n = tape if isinstance(tape, (int, np.integer)) else len(tape)
    rng = np.random.default_rng(config.seed)
    f, p, c = _frequency_tables(config, rng)
    u = rng.random(n)
    labels = np.searchsorted(c[1:-1], u, side="right").astype(np.int32)
    return TraderAssignment(labels, f, p, c)
