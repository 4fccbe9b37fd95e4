"""Mergeable per-bin moment accumulators and bin helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def log_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if not 0 < lo < hi:
        raise ValueError("log bins need 0 < lo < hi")
    return np.logspace(np.log10(lo), np.log10(hi), n_bins + 1)


def bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each value, -1 outside [edges[0], edges[-1]] (last edge closed)."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = len(edges) - 2
    idx[(values < edges[0]) | (values > edges[-1]) | ~np.isfinite(values)] = -1
    return idx


@dataclass
class BinStats:
    """Count, sum and sum of squares per bin."""

    count: np.ndarray
    total: np.ndarray
    total_sq: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "BinStats":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros(n))

    def __len__(self) -> int:
        return len(self.count)

    def add(self, idx: np.ndarray, values: np.ndarray) -> None:
        """Accumulate ``values`` into bins ``idx``; negative indices are skipped."""
        ok = idx >= 0
        idx, values = idx[ok], np.asarray(values, dtype=np.float64)[ok]
        n = len(self.count)
        self.count += np.bincount(idx, minlength=n)
        self.total += np.bincount(idx, weights=values, minlength=n)
        self.total_sq += np.bincount(idx, weights=values * values, minlength=n)

    def merge(self, other: "BinStats") -> "BinStats":
        if len(other) != len(self):
            raise ValueError("cannot merge accumulators with different bin counts")
        return BinStats(self.count + other.count, self.total + other.total,
                        self.total_sq + other.total_sq)

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.total / self.count

    @property
    def se(self) -> np.ndarray:
        """Standard error of the mean, sample std (ddof=1) over sqrt(count)."""
        n = self.count.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = (self.total_sq - self.total * self.total / n) / (n - 1)
            return np.sqrt(np.maximum(var, 0.0) / n)
