"""Binned impact estimators.

Every estimator is an accumulator that can be fed one symbol-day at a time
and merged across days before ``finalize``. The module-level functions are
the one-shot versions.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..metaorders import NS, MetaorderTable
from .stats import BinStats, bin_index, log_edges

DEFAULT_X_EDGES = log_edges(1e-6, 1e-1, 30)
DEFAULT_T_EDGES = log_edges(0.1, 1e5, 30)  # seconds
DEFAULT_PHI_EDGES = np.linspace(0.0, 1.0, 11)
DEFAULT_MIN_COUNT = 50


def _tables(metaorders) -> list[MetaorderTable]:
    if isinstance(metaorders, MetaorderTable):
        return [metaorders]
    return list(metaorders)


def _usable(table: MetaorderTable) -> bool:
    return table.sigma > 0 and len(table) > 0


# --- peak impact --------------------------------------------------------------

@dataclass
class ImpactCurve:
    """Mean normalised peak impact per log bin of Q/V_D."""

    edges: np.ndarray
    x: np.ndarray  # mean Q/V_D of the bin's members
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    min_count: int = DEFAULT_MIN_COUNT
    tally: Counter = field(default_factory=Counter)

    @property
    def retained(self) -> np.ndarray:
        return self.count >= self.min_count

    def rows(self):
        for i in np.flatnonzero(self.retained):
            yield float(self.x[i]), float(self.mean[i]), float(self.se[i]), int(self.count[i])


class ImpactAccumulator:
    def __init__(self, edges: np.ndarray = DEFAULT_X_EDGES):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.stats = BinStats.zeros(len(self.edges) - 1)
        self.x_sum = np.zeros(len(self.edges) - 1)
        self.tally: Counter = Counter()

    def add(self, table: MetaorderTable) -> None:
        if len(table) == 0:
            return
        if table.sigma <= 0:
            self.tally["excluded_zero_sigma"] += len(table)
            return
        x = table.x
        y = table.impact / table.sigma
        idx = bin_index(x, self.edges)
        self.tally["outside_x_range"] += int(np.sum(idx < 0))
        self.stats.add(idx, y)
        ok = idx >= 0
        self.x_sum += np.bincount(idx[ok], weights=x[ok], minlength=len(self.x_sum))

    def merge(self, other: "ImpactAccumulator") -> "ImpactAccumulator":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("bin grids differ")
        out = ImpactAccumulator(self.edges)
        out.stats = self.stats.merge(other.stats)
        out.x_sum = self.x_sum + other.x_sum
        out.tally = self.tally + other.tally
        return out

    def finalize(self, min_count: int = DEFAULT_MIN_COUNT) -> ImpactCurve:
        with np.errstate(invalid="ignore", divide="ignore"):
            x = self.x_sum / self.stats.count
        centers = np.sqrt(self.edges[:-1] * self.edges[1:])
        x = np.where(self.stats.count > 0, x, centers)
        return ImpactCurve(self.edges.copy(), x, self.stats.mean, self.stats.se,
                           self.stats.count.copy(), min_count, Counter(self.tally))


def peak_impact_curve(metaorders, edges: np.ndarray = DEFAULT_X_EDGES,
                      min_count: int = DEFAULT_MIN_COUNT) -> ImpactCurve:
    """Average of eps * (log p_e - log p_s) / sigma_D in log bins of Q/V_D.

    Days with sigma_D == 0 are left out and counted in ``tally``.
    """
    acc = ImpactAccumulator(edges)
    for t in _tables(metaorders):
        acc.add(t)
    return acc.finalize(min_count)


# --- duration ------------------------------------------------------------------

@dataclass
class DurationCurve:
    """Mean of I / (sigma_D sqrt(Q/V_D)) per log bin of duration T (seconds)."""

    edges: np.ndarray
    T: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    histogram: np.ndarray  # metaorders per duration bin, before min_count
    min_count: int = DEFAULT_MIN_COUNT
    tally: Counter = field(default_factory=Counter)

    @property
    def retained(self) -> np.ndarray:
        return self.count >= self.min_count

    def rows(self):
        for i in np.flatnonzero(self.retained):
            yield float(self.T[i]), float(self.mean[i]), float(self.se[i]), int(self.count[i])


class DurationAccumulator:
    def __init__(self, edges: np.ndarray = DEFAULT_T_EDGES):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.stats = BinStats.zeros(len(self.edges) - 1)
        self.T_sum = np.zeros(len(self.edges) - 1)
        self.tally: Counter = Counter()

    def add(self, table: MetaorderTable) -> None:
        if len(table) == 0:
            return
        if table.sigma <= 0:
            self.tally["excluded_zero_sigma"] += len(table)
            return
        T = table.duration
        ratio = table.impact / table.sigma / np.sqrt(table.x)
        idx = bin_index(T, self.edges)
        self.tally["zero_duration"] += int(np.sum(T <= 0))
        self.tally["outside_T_range"] += int(np.sum((idx < 0) & (T > 0)))
        self.stats.add(idx, ratio)
        ok = idx >= 0
        self.T_sum += np.bincount(idx[ok], weights=T[ok], minlength=len(self.T_sum))

    def merge(self, other: "DurationAccumulator") -> "DurationAccumulator":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("bin grids differ")
        out = DurationAccumulator(self.edges)
        out.stats = self.stats.merge(other.stats)
        out.T_sum = self.T_sum + other.T_sum
        out.tally = self.tally + other.tally
        return out

    def finalize(self, min_count: int = DEFAULT_MIN_COUNT) -> DurationCurve:
        with np.errstate(invalid="ignore", divide="ignore"):
            T = self.T_sum / self.stats.count
        centers = np.sqrt(self.edges[:-1] * self.edges[1:])
        T = np.where(self.stats.count > 0, T, centers)
        return DurationCurve(self.edges.copy(), T, self.stats.mean, self.stats.se,
                             self.stats.count.copy(), self.stats.count.copy(), min_count,
                             Counter(self.tally))


def duration_ratio(metaorders, edges: np.ndarray = DEFAULT_T_EDGES,
                   min_count: int = DEFAULT_MIN_COUNT) -> DurationCurve:
    """Impact over its square-root-law scale, binned by metaorder duration.

    Zero-duration metaorders cannot sit on a log grid; they are tallied.
    """
    acc = DurationAccumulator(edges)
    for t in _tables(metaorders):
        acc.add(t)
    return acc.finalize(min_count)


# --- execution profile ----------------------------------------------------------

def _child_groups(table: MetaorderTable, rows: np.ndarray):
    """Flat child positions of the selected metaorders, with their row ids."""
    counts = table.n_children[rows]
    group = np.repeat(np.arange(len(rows)), counts)
    starts = table.child_offsets[rows]
    within = np.arange(len(group)) - np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.repeat(starts, counts) + within
    return group, table.child_index[pos], counts


@dataclass
class ProfileCurve:
    """Average impact path versus executed fraction phi, peak-normalised.

    ``slope``/``intercept`` regress the bin means on the bin-mean sqrt(phi);
    a square-root profile gives slope 1 and intercept 0.
    """

    edges: np.ndarray
    phi: np.ndarray
    sqrt_phi: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    slope: float
    intercept: float
    normalization: str = "per-x-bin mean peak impact"
    tally: Counter = field(default_factory=Counter)

    @property
    def populated(self) -> np.ndarray:
        return self.count > 0

    def rows(self):
        for i in np.flatnonzero(self.populated):
            yield float(self.phi[i]), float(self.mean[i]), float(self.se[i]), int(self.count[i])


class ProfileAccumulator:
    """Raw path moments per (Q/V_D bin, phi bin); normalised only at finalize."""

    def __init__(self, x_edges: np.ndarray = DEFAULT_X_EDGES,
                 phi_edges: np.ndarray = DEFAULT_PHI_EDGES, min_children: int = 5):
        self.x_edges = np.asarray(x_edges, dtype=np.float64)
        self.phi_edges = np.asarray(phi_edges, dtype=np.float64)
        self.min_children = int(min_children)
        nx, nphi = len(self.x_edges) - 1, len(self.phi_edges) - 1
        self.path = BinStats.zeros(nx * nphi)
        self.phi_sum = np.zeros(nx * nphi)
        self.sqrt_phi_sum = np.zeros(nx * nphi)
        self.peak = BinStats.zeros(nx)
        self.tally: Counter = Counter()

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x_edges) - 1, len(self.phi_edges) - 1

    def add(self, table: MetaorderTable) -> None:
        if len(table) == 0:
            return
        if table.tape is None:
            raise ValueError("execution profile needs the source tape")
        if table.sigma <= 0:
            self.tally["excluded_zero_sigma"] += len(table)
            return
        few = table.n_children < self.min_children
        self.tally["excluded_few_children"] += int(few.sum())
        xb = bin_index(table.x, self.x_edges)
        self.tally["outside_x_range"] += int(np.sum((xb < 0) & ~few))
        rows = np.flatnonzero(~few & (xb >= 0))
        if len(rows) == 0:
            return
        tape = table.tape
        logp = tape.log_prices
        group, child, counts = _child_groups(table, rows)
        vols = tape.volumes[child]
        csum = np.cumsum(vols)
        base = np.repeat(csum[np.cumsum(counts) - counts] - vols[np.cumsum(counts) - counts], counts)
        phi = (csum - base) / table.Q[rows][group]
        phi[np.cumsum(counts) - 1] = 1.0
        after = np.minimum(child + 1, len(tape) - 1)
        sign = table.sign[rows].astype(np.float64)
        y = sign[group] * (logp[after] - table.log_ps[rows][group]) / table.sigma
        nphi = self.shape[1]
        pb = np.clip(np.searchsorted(self.phi_edges, phi, side="right") - 1, 0, nphi - 1)
        cell = xb[rows][group] * nphi + pb
        self.path.add(cell, y)
        size = len(self.phi_sum)
        self.phi_sum += np.bincount(cell, weights=phi, minlength=size)
        self.sqrt_phi_sum += np.bincount(cell, weights=np.sqrt(phi), minlength=size)
        self.peak.add(xb[rows], table.impact[rows] / table.sigma)

    def merge(self, other: "ProfileAccumulator") -> "ProfileAccumulator":
        if not (np.array_equal(self.x_edges, other.x_edges)
                and np.array_equal(self.phi_edges, other.phi_edges)):
            raise ValueError("bin grids differ")
        out = ProfileAccumulator(self.x_edges, self.phi_edges, self.min_children)
        out.path = self.path.merge(other.path)
        out.phi_sum = self.phi_sum + other.phi_sum
        out.sqrt_phi_sum = self.sqrt_phi_sum + other.sqrt_phi_sum
        out.peak = self.peak.merge(other.peak)
        out.tally = self.tally + other.tally
        return out

    def finalize(self, min_count: int = DEFAULT_MIN_COUNT) -> ProfileCurve:
        nx, nphi = self.shape
        peak_mean = self.peak.mean
        usable = (self.peak.count >= min_count) & (peak_mean > 0)
        tally = Counter(self.tally)
        tally["x_bins_unusable_for_normalization"] = int(np.sum((self.peak.count > 0) & ~usable))
        norm = np.where(usable, peak_mean, np.inf)[:, None]
        w = usable[:, None].astype(np.float64)
        cnt = self.path.count.reshape(nx, nphi)
        n = (cnt * w).sum(axis=0)
        s1 = (self.path.total.reshape(nx, nphi) / norm * w).sum(axis=0)
        s2 = (self.path.total_sq.reshape(nx, nphi) / norm**2 * w).sum(axis=0)
        sp = (self.phi_sum.reshape(nx, nphi) * w).sum(axis=0)
        ssp = (self.sqrt_phi_sum.reshape(nx, nphi) * w).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s1 / n
            var = np.maximum((s2 - s1 * s1 / n) / (n - 1), 0.0)
            se = np.sqrt(var / n)
            phi = sp / n
            sqrt_phi = ssp / n
        centers = 0.5 * (self.phi_edges[:-1] + self.phi_edges[1:])
        phi = np.where(n > 0, phi, centers)
        sqrt_phi = np.where(n > 0, sqrt_phi, np.sqrt(centers))
        pop = n > 0
        if pop.sum() >= 2:
            slope, intercept = np.polyfit(sqrt_phi[pop], mean[pop], 1)
        else:
            slope = intercept = float("nan")
        return ProfileCurve(self.phi_edges.copy(), phi, sqrt_phi, mean, se,
                            n.astype(np.int64), float(slope), float(intercept), tally=tally)


def execution_profile(metaorders, phi_edges: np.ndarray = DEFAULT_PHI_EDGES,
                      min_children: int = 5, x_edges: np.ndarray = DEFAULT_X_EDGES,
                      min_count: int = DEFAULT_MIN_COUNT) -> ProfileCurve:
    """Impact after each child versus executed volume fraction phi.

    The price after child k is read from the next tape trade, so the last
    point of every path equals the metaorder's peak impact. Paths are divided
    by the mean peak impact of their Q/V_D bin before averaging.
    """
    acc = ProfileAccumulator(x_edges, phi_edges, min_children)
    for t in _tables(metaorders):
        acc.add(t)
    return acc.finalize(min_count)


# --- post-execution decay ---------------------------------------------------------

def default_z_points(z_max: float = 10.0, n: int = 19) -> np.ndarray:
    return np.linspace(1.0, z_max, n)


@dataclass
class DecayCurve:
    """Impact at z = t/T after metaorder start, relative to peak impact.

    Each point is a ratio of sums over the metaorders observed at that z, so
    the z = 1 point is exactly 1.
    """

    z: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    tally: Counter = field(default_factory=Counter)

    @property
    def populated(self) -> np.ndarray:
        return self.count > 0

    def rows(self):
        for i in np.flatnonzero(self.populated):
            yield float(self.z[i]), float(self.mean[i]), float(self.se[i]), int(self.count[i])


class DecayAccumulator:
    _FIELDS = ("count", "sy", "syy", "sp", "spp", "syp")

    def __init__(self, z_points: np.ndarray | None = None, min_children: int = 5):
        z = default_z_points() if z_points is None else np.asarray(z_points, dtype=np.float64)
        if z[0] != 1.0 or np.any(np.diff(z) <= 0):
            raise ValueError("z points must start at 1 and increase")
        self.z = z
        self.min_children = int(min_children)
        k = len(z)
        self.count = np.zeros(k, dtype=np.int64)
        for name in self._FIELDS[1:]:
            setattr(self, name, np.zeros(k))
        self.tally: Counter = Counter()

    def add(self, table: MetaorderTable) -> None:
        if len(table) == 0:
            return
        if table.tape is None:
            raise ValueError("decay curve needs the source tape")
        if table.sigma <= 0:
            self.tally["excluded_zero_sigma"] += len(table)
            return
        few = table.n_children < self.min_children
        instant = table.t_end <= table.t_start
        self.tally["excluded_few_children"] += int(few.sum())
        self.tally["excluded_zero_duration"] += int(np.sum(instant & ~few))
        rows = np.flatnonzero(~few & ~instant)
        if len(rows) == 0:
            return
        tape = table.tape
        ts, logp = tape.timestamps, tape.log_prices
        peak = table.impact[rows] / table.sigma
        dur = (table.t_end[rows] - table.t_start[rows]).astype(np.float64)
        t = table.t_start[rows][:, None] + np.round(dur[:, None] * self.z[None, 1:]).astype(np.int64)
        idx = np.searchsorted(ts, t, side="right")
        seen = idx < len(ts)
        idx = np.minimum(idx, len(ts) - 1)
        sign = table.sign[rows].astype(np.float64)[:, None]
        y = sign * (logp[idx] - table.log_ps[rows][:, None]) / table.sigma
        y = np.concatenate([peak[:, None], y], axis=1)
        seen = np.concatenate([np.ones((len(rows), 1), dtype=bool), seen], axis=1)
        self.tally["truncated_at_session_end"] += int(np.sum(~seen.all(axis=1)))
        p = np.broadcast_to(peak[:, None], y.shape)
        ym = np.where(seen, y, 0.0)
        pm = np.where(seen, p, 0.0)
        self.count += seen.sum(axis=0)
        self.sy += ym.sum(axis=0)
        self.syy += (ym * ym).sum(axis=0)
        self.sp += pm.sum(axis=0)
        self.spp += (pm * pm).sum(axis=0)
        self.syp += (ym * pm).sum(axis=0)

    def merge(self, other: "DecayAccumulator") -> "DecayAccumulator":
        if not np.array_equal(self.z, other.z):
            raise ValueError("z grids differ")
        out = DecayAccumulator(self.z, self.min_children)
        for name in self._FIELDS:
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.tally = self.tally + other.tally
        return out

    def finalize(self) -> DecayCurve:
        n = self.count.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = self.sy / self.sp
            ybar, pbar = self.sy / n, self.sp / n
            vy = (self.syy - n * ybar**2) / (n - 1)
            vp = (self.spp - n * pbar**2) / (n - 1)
            cyp = (self.syp - n * ybar * pbar) / (n - 1)
            # delta method for a ratio of means
            var = np.maximum(vy - 2 * ratio * cyp + ratio**2 * vp, 0.0) / (n * pbar**2)
            se = np.sqrt(var)
        ratio[0] = 1.0 if self.count[0] > 0 else np.nan
        return DecayCurve(self.z.copy(), ratio, se, self.count.copy(), Counter(self.tally))


def decay_curve(metaorders, z_max: float = 10.0, min_children: int = 5,
                z_points: np.ndarray | None = None) -> DecayCurve:
    """Post-execution relaxation of impact on a grid of z = t/T in [1, z_max].

    Time is measured from the first child. The price at time t is read from
    the first trade strictly after t; points past the session end are not
    observed and simply drop out of that z.
    """
    acc = DecayAccumulator(default_z_points(z_max) if z_points is None else z_points, min_children)
    for t in _tables(metaorders):
        acc.add(t)
    return acc.finalize()


# --- child counts -------------------------------------------------------------------

@dataclass
class ChildCountHistogram:
    values: np.ndarray  # n_children
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def log_binned(self, base: float = 2.0):
        """Density on log-spaced integer bins [base^k, base^(k+1))."""
        if self.total == 0:
            return np.empty(0), np.empty(0), np.empty(0, dtype=np.int64)
        hi = self.values.max() + 1
        k = int(np.ceil(np.log(hi) / np.log(base))) + 1
        edges = np.unique(np.floor(base ** np.arange(k + 1)).astype(np.int64))
        idx = np.searchsorted(edges, self.values, side="right") - 1
        cnt = np.bincount(idx, weights=self.counts, minlength=len(edges) - 1)[: len(edges) - 1]
        width = np.diff(edges)
        density = cnt / (width * self.total)
        centers = np.sqrt(edges[:-1] * np.maximum(edges[1:] - 1, edges[:-1]))
        return centers, density, cnt.astype(np.int64)


class ChildCountAccumulator:
    def __init__(self):
        self.counts = np.zeros(0, dtype=np.int64)

    def add(self, table: MetaorderTable) -> None:
        if len(table) == 0:
            return
        c = np.bincount(table.n_children)
        self._grow(len(c))
        self.counts[: len(c)] += c

    def _grow(self, n: int) -> None:
        if n > len(self.counts):
            self.counts = np.concatenate([self.counts, np.zeros(n - len(self.counts), dtype=np.int64)])

    def merge(self, other: "ChildCountAccumulator") -> "ChildCountAccumulator":
        out = ChildCountAccumulator()
        out._grow(max(len(self.counts), len(other.counts)))
        out.counts[: len(self.counts)] += self.counts
        out.counts[: len(other.counts)] += other.counts
        return out

    def finalize(self) -> ChildCountHistogram:
        vals = np.flatnonzero(self.counts)
        return ChildCountHistogram(vals, self.counts[vals].copy())

    def samples(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)


def child_count_distribution(metaorders) -> ChildCountHistogram:
    acc = ChildCountAccumulator()
    for t in _tables(metaorders):
        acc.add(t)
    return acc.finalize()
