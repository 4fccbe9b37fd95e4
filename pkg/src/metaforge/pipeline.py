"""End-to-end runs: ingest -> map -> build -> measure -> report.

Work is split into independent (symbol, day) tasks. Their partial
accumulators are merged in canonical (symbol, date) order by one reducer, so
the outputs do not depend on how many workers ran the tasks.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import time, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .controls import CHRONOLOGY_CONSTRUCTION, shuffle_chronology, shuffle_signs
from .impact import (
    ChildCountAccumulator,
    DecayAccumulator,
    DurationAccumulator,
    FitError,
    ImpactAccumulator,
    ProfileAccumulator,
    REFERENCE_CHILD_COUNT_EXPONENT,
    fit_decay_beta,
    fit_power_law,
    fit_sqrt_law,
    log_edges,
)
from .mapping import FrequencyLaw, MappingConfig, assign_traders, derive_seed
from .metaorders import MetaorderTable, build_metaorders, write_metaorders_csv
from .tape import (
    DailyTape,
    SessionFilter,
    TapeFormat,
    clean_and_split,
    read_tape_file,
    split_by_symbol,
)

log = logging.getLogger(__name__)

SEED_ENV = "METAFORGE_SEED"
MEASUREMENTS = ("impact", "duration", "profile", "decay", "child_counts")
FITS = ("sqrt", "decay", "tail")


class PipelineError(RuntimeError):
    pass


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _parse_clock(text: str) -> time:
    return time.fromisoformat(text)


@dataclass
class RunConfig:
    """Every knob of a run; mirrored one-to-one by CLI flags."""

    traders: int = 20
    freq_law: str = "homogeneous"
    alpha: float = 2.0
    seed: int = field(default_factory=default_seed)
    session_open: str = "09:00"
    session_close: str = "17:30"
    trim_open: float = 600.0  # seconds
    trim_close: float = 600.0
    tz: str = "UTC"
    tick_rule: bool = False
    x_min: float = 1e-6
    x_max: float = 1e-1
    x_bins: int = 30
    min_count: int = 50
    fit_lo: float = 5e-6
    fit_hi: float = 1e-1
    t_min: float = 0.1
    t_max: float = 1e5
    t_bins: int = 30
    phi_bins: int = 10
    profile_min_children: int = 5
    z_max: float = 10.0
    z_points: int = 19
    decay_min_children: int = 5
    tail_x_min: int = 5
    gamma: float | None = None
    control: str | None = None  # None, "signs" or "chronology"
    control_seed: int | None = None  # None: the run seed
    threads: int = 1
    measure: tuple = MEASUREMENTS
    fits: tuple = FITS

    def __post_init__(self):
        self.measure = tuple(self.measure)
        self.fits = tuple(self.fits)
        unknown = set(self.measure) - set(MEASUREMENTS)
        if unknown:
            raise ValueError(f"unknown measurement(s): {sorted(unknown)}")
        unknown = set(self.fits) - set(FITS)
        if unknown:
            raise ValueError(f"unknown fit(s): {sorted(unknown)}")
        if self.control not in (None, "signs", "chronology"):
            raise ValueError("control must be 'signs' or 'chronology'")
        FrequencyLaw(self.freq_law, self.alpha)
        self.session_filter()

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self, scheduling: bool = True) -> dict:
        """Plain dict; ``scheduling=False`` drops knobs that cannot change results."""
        d = dataclasses.asdict(self)
        if not scheduling:
            del d["threads"]
        d["measure"] = list(self.measure)
        d["fits"] = list(self.fits)
        return d

    def session_filter(self) -> SessionFilter:
        return SessionFilter(_parse_clock(self.session_open), _parse_clock(self.session_close),
                             timedelta(seconds=self.trim_open), timedelta(seconds=self.trim_close),
                             self.tz)

    def mapping(self) -> MappingConfig:
        return MappingConfig(self.traders, FrequencyLaw(self.freq_law, self.alpha), self.seed)

    def x_edges(self) -> np.ndarray:
        return log_edges(self.x_min, self.x_max, self.x_bins)

    def t_edges(self) -> np.ndarray:
        return log_edges(self.t_min, self.t_max, self.t_bins)

    def phi_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.phi_bins + 1)

    def z_grid(self) -> np.ndarray:
        return np.linspace(1.0, self.z_max, self.z_points)

    def with_(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# --- per-day work ---------------------------------------------------------------

@dataclass
class DayResult:
    symbol: str
    date: str
    mapping_seed: int
    control_seed: int | None
    n_trades: int
    n_metaorders: int
    table: MetaorderTable
    parts: dict


def _new_parts(cfg: RunConfig) -> dict:
    parts = {}
    if "impact" in cfg.measure:
        parts["impact"] = ImpactAccumulator(cfg.x_edges())
    if "duration" in cfg.measure:
        parts["duration"] = DurationAccumulator(cfg.t_edges())
    if "profile" in cfg.measure:
        parts["profile"] = ProfileAccumulator(cfg.x_edges(), cfg.phi_edges(),
                                              cfg.profile_min_children)
    if "decay" in cfg.measure:
        parts["decay"] = DecayAccumulator(cfg.z_grid(), cfg.decay_min_children)
    if "child_counts" in cfg.measure:
        parts["child_counts"] = ChildCountAccumulator()
    return parts


def control_tape(tape: DailyTape, mode: str, seed: int) -> DailyTape:
    if mode == "signs":
        return shuffle_signs(tape, seed)
    if mode == "chronology":
        return shuffle_chronology(tape, seed)
    raise ValueError(f"unknown control mode {mode!r}")


def run_day(tape: DailyTape, cfg: RunConfig) -> DayResult:
    ctrl_seed = None
    if cfg.control:
        master = cfg.seed if cfg.control_seed is None else cfg.control_seed
        ctrl_seed = derive_seed(master, f"control:{cfg.control}:{tape.symbol}", tape.date)
        tape = control_tape(tape, cfg.control, ctrl_seed)
    mapping = cfg.mapping().for_day(tape.symbol, tape.date)
    labels = assign_traders(tape, mapping)
    table = build_metaorders(tape, labels)
    parts = _new_parts(cfg)
    for acc in parts.values():
        acc.add(table)
    return DayResult(tape.symbol, tape.date.isoformat(), mapping.seed, ctrl_seed, len(tape),
                     len(table), table.detach(), parts)


def _run_day_safe(args):
    tape, cfg = args
    try:
        return run_day(tape, cfg), None
    except Exception as exc:  # a bad day is recorded and skipped
        return None, f"{type(exc).__name__}: {exc}"


# --- loading ----------------------------------------------------------------------

def expand_inputs(paths: Iterable) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() == ".csv"))
        elif p.exists():
            files.append(p)
        else:
            raise PipelineError(f"input not found: {p}")
    return files


@dataclass
class LoadedTapes:
    days: list[DailyTape]
    dropped: list[dict]
    inputs: list[dict]
    trimmed: int = 0


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_tapes(paths: Iterable, cfg: RunConfig) -> LoadedTapes:
    files = expand_inputs(paths)
    fmt = TapeFormat(tick_rule=cfg.tick_rule)
    records = []
    inputs = []
    for f in files:
        records.extend(read_tape_file(f, fmt))
        inputs.append({"path": str(f), "sha256": sha256_file(f)})
    days, dropped, trimmed = [], [], 0
    session = cfg.session_filter()
    for symbol, recs in sorted(split_by_symbol(records).items()):
        rep = clean_and_split(recs, session)
        days.extend(rep.days)
        dropped.extend({"symbol": s, "date": d.isoformat(), "trades_left": k}
                       for s, d, k in rep.dropped_days)
        trimmed += rep.trimmed
    days.sort(key=lambda t: (t.symbol, t.date))
    return LoadedTapes(days, dropped, inputs, trimmed)


# --- reduce and report --------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    days: list[DayResult]
    failures: list[dict]
    curves: dict
    fits: dict
    tables: list[MetaorderTable]
    manifest: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.fits.get(k, {}).get("status") == "ok" for k in self.config.fits)

    @property
    def n_metaorders(self) -> int:
        return sum(d.n_metaorders for d in self.days)


def _reduce(days: Sequence[DayResult], cfg: RunConfig) -> dict:
    merged = _new_parts(cfg)
    for d in days:  # canonical order
        for k in merged:
            merged[k] = merged[k].merge(d.parts[k])
    curves = {}
    if "impact" in merged:
        curves["impact"] = merged["impact"].finalize(cfg.min_count)
    if "duration" in merged:
        curves["duration"] = merged["duration"].finalize(cfg.min_count)
    if "profile" in merged:
        curves["profile"] = merged["profile"].finalize(cfg.min_count)
    if "decay" in merged:
        curves["decay"] = merged["decay"].finalize()
    if "child_counts" in merged:
        curves["child_counts"] = merged["child_counts"]
    return curves


def _attempt(fn) -> dict:
    try:
        return {"status": "ok", **fn()}
    except FitError as exc:
        return {"status": "unfittable", "reason": str(exc), "diagnostics": exc.diagnostics}


def _fits(curves: dict, cfg: RunConfig) -> dict:
    out = {}
    if "sqrt" in cfg.fits:
        if "impact" in curves:
            out["sqrt"] = _attempt(lambda: fit_sqrt_law(curves["impact"], (cfg.fit_lo, cfg.fit_hi)).as_dict())
        else:
            out["sqrt"] = {"status": "unfittable", "reason": "impact curve not measured"}
    if "decay" in cfg.fits:
        if "decay" in curves:
            out["decay"] = _attempt(lambda: fit_decay_beta(curves["decay"], cfg.gamma).as_dict())
        else:
            out["decay"] = {"status": "unfittable", "reason": "decay curve not measured"}
    if "tail" in cfg.fits:
        if "child_counts" in curves:
            samples = curves["child_counts"].samples()
            res = _attempt(lambda: fit_power_law(samples, cfg.tail_x_min, discrete=True).as_dict())
        else:
            res = {"status": "unfittable", "reason": "child counts not measured"}
        res["reference_exponent"] = REFERENCE_CHILD_COUNT_EXPONENT
        out["tail"] = res
    return out


def _summaries(curves: dict, days: Sequence[DayResult]) -> dict:
    out = {}
    tables = [d.table for d in days]
    if tables and sum(len(t) for t in tables):
        dur = np.concatenate([t.duration for t in tables])
        nch = np.concatenate([t.n_children for t in tables])
        out["mean_duration_seconds"] = float(dur.mean())
        out["mean_n_children"] = float(nch.mean())
    if "duration" in curves:
        c = curves["duration"]
        sel = c.retained & (c.T >= 30.0)
        if sel.any():
            m = c.mean[sel]
            out["duration_ratio_T_ge_30s"] = {
                "mean": float(np.mean(m)),
                "max_relative_deviation": float(np.max(np.abs(m / np.mean(m) - 1))),
                "bins": int(sel.sum()),
            }
    if "profile" in curves:
        p = curves["profile"]
        out["profile"] = {"slope_vs_sqrt_phi": p.slope, "intercept": p.intercept,
                          "normalization": p.normalization}
    return out


def _tallies(curves: dict) -> dict:
    out = {}
    for k, c in curves.items():
        t = getattr(c, "tally", None)
        if t:
            out[k] = dict(sorted(t.items()))
    return out


def run_days(tapes: Sequence[DailyTape], cfg: RunConfig) -> RunResult:
    tapes = sorted(tapes, key=lambda t: (t.symbol, t.date))
    jobs = [(t, cfg) for t in tapes]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_day_safe, jobs))
    else:
        results = [_run_day_safe(j) for j in jobs]
    days, failures = [], []
    for tape, (res, err) in zip(tapes, results):
        if err is None:
            days.append(res)
        else:
            failures.append({"symbol": tape.symbol, "date": tape.date.isoformat(), "error": err})
            log.warning("day %s %s failed: %s", tape.symbol, tape.date, err)
    if not days:
        raise PipelineError("no usable days")
    curves = _reduce(days, cfg)
    fits = _fits(curves, cfg)
    fits["summary"] = _summaries(curves, days)
    fits["tallies"] = _tallies(curves)
    return RunResult(cfg, days, failures, curves, fits, [d.table for d in days])


def run_pipeline(inputs: Iterable, cfg: RunConfig, out_dir=None) -> RunResult:
    """Run everything on CSV inputs (files or directories)."""
    loaded = load_tapes(inputs, cfg)
    if not loaded.days:
        raise PipelineError("no usable days")
    result = run_days(loaded.days, cfg)
    result.manifest = {
        "inputs": loaded.inputs,
        "dropped_days": loaded.dropped,
        "trimmed_records": loaded.trimmed,
    }
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# --- output files --------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_curve_csv(rows, path, x_name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((x_name, "mean", "se", "count"))
        for x, m, se, n in rows:
            w.writerow((repr(x), repr(m), repr(se), n))


def write_curves(curves: dict, out: Path) -> list[str]:
    written = []
    if "impact" in curves:
        write_curve_csv(curves["impact"].rows(), out / "impact_curve.csv", "x")
        written.append("impact_curve.csv")
    if "duration" in curves:
        c = curves["duration"]
        write_curve_csv(c.rows(), out / "duration_curve.csv", "T_seconds")
        with open(out / "duration_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("T_lo", "T_hi", "count"))
            for lo, hi, n in zip(c.edges[:-1], c.edges[1:], c.histogram):
                w.writerow((repr(float(lo)), repr(float(hi)), int(n)))
        written += ["duration_curve.csv", "duration_hist.csv"]
    if "profile" in curves:
        write_curve_csv(curves["profile"].rows(), out / "profile_curve.csv", "phi")
        written.append("profile_curve.csv")
    if "decay" in curves:
        write_curve_csv(curves["decay"].rows(), out / "decay_curve.csv", "z")
        written.append("decay_curve.csv")
    if "child_counts" in curves:
        h = curves["child_counts"].finalize()
        with open(out / "child_counts.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("n_children", "count"))
            for v, n in zip(h.values.tolist(), h.counts.tolist()):
                w.writerow((v, n))
        written.append("child_counts.csv")
    return written


def _versions() -> dict:
    return {
        "metaforge": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": ".".join(map(str, sys.version_info[:2])),
        "platform": platform.system(),
    }


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    files = []
    with open(out / "metaorders.csv", "w", newline="") as fh:
        write_metaorders_csv(result.tables, fh)
    files.append("metaorders.csv")
    files += write_curves(result.curves, out)
    report = dict(result.fits)
    report["config"] = cfg.to_dict(scheduling=False)
    report["seed"] = cfg.seed
    report["counts"] = {"days": len(result.days), "metaorders": result.n_metaorders,
                        "trades": sum(d.n_trades for d in result.days)}
    if cfg.control:
        report["control"] = {"mode": cfg.control,
                             "construction": CHRONOLOGY_CONSTRUCTION if cfg.control == "chronology"
                             else "signs permuted uniformly within each day"}
    dump_json(report, out / "fits.json")
    files.append("fits.json")
    manifest = dict(result.manifest)
    manifest.update({
        "config": cfg.to_dict(scheduling=False),
        "master_seed": cfg.seed,
        "days": [{"symbol": d.symbol, "date": d.date, "mapping_seed": d.mapping_seed,
                  "control_seed": d.control_seed, "trades": d.n_trades,
                  "metaorders": d.n_metaorders} for d in result.days],
        "failures": result.failures,
        "versions": _versions(),
        "outputs": {f: sha256_file(out / f) for f in files},
        "all_fits_ok": result.ok,
    })
    dump_json(manifest, out / "manifest.json")
    result.manifest = manifest
    return out


# --- sweeps ------------------------------------------------------------------------------

SWEEP_COLUMNS = ("traders", "freq_law", "alpha", "Y", "delta", "beta", "mean_duration_seconds",
                 "mean_n_children", "metaorders", "status")


def sweep(tapes: Sequence[DailyTape], cfg: RunConfig, traders: Sequence[int],
          laws: Sequence[FrequencyLaw]) -> list[dict]:
    """One run per (N, law); returns one robustness record per grid point."""
    if not traders or not laws:
        raise ValueError("sweep grid is empty")
    rows = []
    for law in laws:
        for n in traders:
            point = cfg.with_(traders=int(n), freq_law=law.kind, alpha=law.alpha)
            rec = {"traders": int(n), "freq_law": law.kind,
                   "alpha": law.alpha if law.kind == "powerlaw" else None}
            try:
                res = run_days(tapes, point)
            except PipelineError as exc:
                rec.update(status=f"failed: {exc}")
                rows.append(rec)
                continue
            f = res.fits
            rec["Y"] = f.get("sqrt", {}).get("Y")
            rec["delta"] = f.get("sqrt", {}).get("delta")
            rec["beta"] = f.get("decay", {}).get("beta")
            rec["mean_duration_seconds"] = f["summary"].get("mean_duration_seconds")
            rec["mean_n_children"] = f["summary"].get("mean_n_children")
            rec["metaorders"] = res.n_metaorders
            rec["status"] = "ok" if res.ok else "fit failures: " + ",".join(
                k for k in point.fits if f.get(k, {}).get("status") != "ok")
            rec["fits"] = {k: f[k] for k in point.fits if k in f}
            rows.append(rec)
    return rows


def write_sweep(rows: list[dict], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in SWEEP_COLUMNS])
    dump_json(rows, out / "sweep.json")
