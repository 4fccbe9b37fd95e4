"""Negative controls: remove information from a tape and compare the impact law."""
from __future__ import annotations

import numpy as np

from .impact.curves import ImpactCurve
from .tape import DailyTape

CHRONOLOGY_CONSTRUCTION = (
    "trades 1..n-1 are permuted within the day, each carrying its sign, volume and "
    "own log-return log p_k - log p_(k-1); prices are rebuilt by cumulating the "
    "permuted returns from p_0; trade 0 and the timestamp grid stay in place"
)


def shuffle_signs(tape: DailyTape, seed: int) -> DailyTape:
    """Randomly permute the day's trade signs; everything else is untouched."""
    rng = np.random.default_rng(seed)
    return tape.replace(signs=tape.signs[rng.permutation(len(tape))])


def shuffle_chronology(tape: DailyTape, seed: int | None = None,
                       permutation: np.ndarray | None = None) -> DailyTape:
    """Permute trades together with their own returns and rebuild the price path.

    ``permutation`` (of ``range(1, n)``) overrides the seeded draw. The return
    multiset and both endpoint prices are preserved.
    """
    n = len(tape)
    if permutation is None:
        rng = np.random.default_rng(seed)
        permutation = 1 + rng.permutation(n - 1)
    permutation = np.asarray(permutation, dtype=np.int64)
    if n > 1 and not np.array_equal(np.sort(permutation), np.arange(1, n)):
        raise ValueError("permutation must reorder trade indices 1..n-1")
    if np.array_equal(permutation, np.arange(1, n)):
        return tape.replace()
    order = np.concatenate([[0], permutation])
    logp = tape.log_prices
    returns = np.diff(logp)  # returns[k-1] belongs to trade k
    rebuilt = np.empty(n)
    rebuilt[0] = logp[0]
    rebuilt[1:] = logp[0] + np.cumsum(returns[permutation - 1])
    prices = np.exp(rebuilt)
    prices[0] = tape.prices[0]
    return tape.replace(prices=prices, volumes=tape.volumes[order], signs=tape.signs[order])


def zero_impact_verdicts(curve: ImpactCurve, n_se: float = 2.0) -> np.ndarray:
    """Per retained bin: is the mean within ``n_se`` standard errors of zero?"""
    sel = curve.retained
    return np.abs(curve.mean[sel]) <= n_se * curve.se[sel]


def _same_grid(a: ImpactCurve, b: ImpactCurve) -> bool:
    return len(a.edges) == len(b.edges) and np.array_equal(a.edges, b.edges)


def control_report(original: dict, controls: list[dict], n_se: float = 2.0) -> dict:
    """Compare an original run against control runs.

    Each run is a dict with at least ``curve`` (ImpactCurve) and optionally
    ``fit`` (dict or None), ``mode``, ``seed`` and ``config``.
    """
    base: ImpactCurve = original["curve"]
    out = {
        "original": {"fit": original.get("fit"), "config": original.get("config"),
                     "seed": original.get("seed")},
        "chronology_construction": CHRONOLOGY_CONSTRUCTION,
        "zero_impact_rule": f"|mean| <= {n_se:g} * SE on the control's own retained bins",
        "controls": [],
    }
    for run in controls:
        curve: ImpactCurve = run["curve"]
        if not _same_grid(base, curve):
            raise ValueError("control curve uses a different bin grid")
        both = base.retained & curve.retained
        idx = np.flatnonzero(both)
        bins = []
        ok_ctrl = curve.retained
        verdict = np.abs(curve.mean) <= n_se * curve.se
        for i in np.flatnonzero(base.retained | ok_ctrl):
            bins.append({
                "bin": int(i),
                "x": float(curve.x[i]) if ok_ctrl[i] else float(base.x[i]),
                "original_mean": float(base.mean[i]) if base.retained[i] else None,
                "control_mean": float(curve.mean[i]) if ok_ctrl[i] else None,
                "control_se": float(curve.se[i]) if ok_ctrl[i] else None,
                "difference": float(curve.mean[i] - base.mean[i]) if both[i] else None,
                "zero_impact": bool(verdict[i]) if ok_ctrl[i] else None,
            })
        n_ret = int(ok_ctrl.sum())
        n_pass = int(np.sum(verdict & ok_ctrl))
        out["controls"].append({
            "mode": run.get("mode"),
            "seed": run.get("seed"),
            "config": run.get("config"),
            "fit": run.get("fit"),
            "retained_bins": n_ret,
            "zero_impact_pass": n_pass,
            "zero_impact_fraction": n_pass / n_ret if n_ret else None,
            "max_abs_difference": float(np.max(np.abs(curve.mean[idx] - base.mean[idx])))
            if len(idx) else None,
            "bins": bins,
        })
    return out
