"""Command line entry point: ``metaforge <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .controls import control_report
from .mapping import FrequencyLaw, assign_traders
from .pipeline import (
    FITS,
    PipelineError,
    RunConfig,
    dump_json,
    load_tapes,
    run_days,
    sweep,
    write_outputs,
    write_sweep,
)
from .synthgen import SyntheticTapeConfig, generate_tape
from .tape import SessionFilter, TapeError, write_tape_csv

log = logging.getLogger("metaforge")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    """Flags mirroring RunConfig. Defaults are None so config files can fill them."""
    g = p.add_argument_group("session")
    g.add_argument("--session-open", help="HH:MM[:SS] (default 09:00)")
    g.add_argument("--session-close", help="HH:MM[:SS] (default 17:30)")
    g.add_argument("--trim-open", type=float, help="seconds dropped after the open (default 600)")
    g.add_argument("--trim-close", type=float, help="seconds dropped before the close (default 600)")
    g.add_argument("--tz", help="session time zone (default UTC)")
    g.add_argument("--tick-rule", action="store_true", default=None,
                   help="infer missing signs with the tick rule")
    g = p.add_argument_group("mapping")
    g.add_argument("--traders", type=int, help="synthetic traders per day (default 20)")
    g.add_argument("--freq-law", choices=("homogeneous", "powerlaw"))
    g.add_argument("--alpha", type=float, help="power-law frequency exponent (default 2)")
    g.add_argument("--seed", type=int, help="master seed (default $METAFORGE_SEED or 0)")
    g = p.add_argument_group("measurement")
    g.add_argument("--x-min", type=float)
    g.add_argument("--x-max", type=float)
    g.add_argument("--x-bins", type=int)
    g.add_argument("--min-count", type=int, help="minimum metaorders per retained bin")
    g.add_argument("--fit-lo", type=float, help="lower edge of the Q/V_D fit range")
    g.add_argument("--fit-hi", type=float, help="upper edge of the Q/V_D fit range")
    g.add_argument("--t-min", type=float)
    g.add_argument("--t-max", type=float)
    g.add_argument("--t-bins", type=int)
    g.add_argument("--phi-bins", type=int)
    g.add_argument("--profile-min-children", type=int)
    g.add_argument("--z-max", type=float)
    g.add_argument("--z-points", type=int)
    g.add_argument("--decay-min-children", type=int)
    g.add_argument("--tail-x-min", type=int, help="x_min of the child-count tail fit")
    g.add_argument("--gamma", type=float, help="sign-ACF exponent, to report (1-gamma)/2")
    g.add_argument("--fits", help=f"comma list from {','.join(FITS)} (default all)")
    p.add_argument("--threads", type=int, help="worker processes (default 1)")
    p.add_argument("--config", type=Path, help="JSON config; flags override it")


_RUN_FIELDS = ("session_open", "session_close", "trim_open", "trim_close", "tz", "tick_rule",
               "traders", "freq_law", "alpha", "seed", "x_min", "x_max", "x_bins", "min_count",
               "fit_lo", "fit_hi", "t_min", "t_max", "t_bins", "phi_bins",
               "profile_min_children", "z_max", "z_points", "decay_min_children", "tail_x_min",
               "gamma", "threads")


def build_config(args, **fixed) -> RunConfig:
    base = RunConfig.from_json(args.config).to_dict() if getattr(args, "config", None) else {}
    for name in _RUN_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    if getattr(args, "fits", None):
        base["fits"] = [f.strip() for f in args.fits.split(",") if f.strip()]
    base.update(fixed)
    return RunConfig(**base)


def _load(args, cfg):
    loaded = load_tapes(args.inputs, cfg)
    if not loaded.days:
        raise PipelineError("no usable days")
    return loaded


def _finish(result, out) -> int:
    for k in result.config.fits:
        f = result.fits.get(k, {})
        line = f"{k}: {f.get('status')}"
        if k == "sqrt" and f.get("status") == "ok":
            line += f"  Y={f['Y']:.4g}+-{f['Y_se']:.2g}  delta={f['delta']:.4g}+-{f['delta_se']:.2g}"
        elif k == "decay" and f.get("status") == "ok":
            line += f"  beta={f['beta']:.4g}+-{f['beta_se']:.2g}"
        elif k == "tail" and f.get("status") == "ok":
            line += f"  exponent={f['exponent']:.4g} (reference {f['reference_exponent']})"
        elif f.get("reason"):
            line += f"  ({f['reason']})"
        print(line)
    print(f"outputs written to {out}")
    return 0 if result.ok else 1


def _with_inputs(result, loaded):
    result.manifest = {"inputs": loaded.inputs, "dropped_days": loaded.dropped,
                       "trimmed_records": loaded.trimmed}
    return result


# --- subcommands -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = build_config(args)
    loaded = _load(args, cfg)
    summary = {
        "inputs": loaded.inputs,
        "days": [{"symbol": t.symbol, "date": t.date.isoformat(), "trades": len(t),
                  "volume": t.volume_total, "sigma_D": t.sigma, "p0": t.p0} for t in loaded.days],
        "dropped_days": loaded.dropped,
        "trimmed_records": loaded.trimmed,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for t in loaded.days:
            with open(out / f"{t.symbol}_{t.date.isoformat()}.csv", "w", newline="") as fh:
                write_tape_csv(t, fh)
        dump_json(summary, out / "ingest.json")
    if args.labels_out:
        mapping = cfg.mapping()
        with open(args.labels_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("symbol", "date", "row", "trader"))
            for t in loaded.days:
                labels = assign_traders(t, mapping.for_day(t.symbol, t.date)).labels
                d = t.date.isoformat()
                w.writerows((t.symbol, d, i, int(k)) for i, k in enumerate(labels.tolist()))
    print(json.dumps({"days": len(loaded.days), "dropped_days": len(loaded.dropped),
                      "trades": sum(len(t) for t in loaded.days)}))
    return 0


def cmd_run(args, **fixed) -> int:
    cfg = build_config(args, **fixed)
    loaded = _load(args, cfg)
    result = _with_inputs(run_days(loaded.days, cfg), loaded)
    write_outputs(result, args.out)
    return _finish(result, args.out)


def cmd_profile(args) -> int:
    return cmd_run(args, measure=["impact", "profile"], fits=[])


def cmd_decay(args) -> int:
    return cmd_run(args, measure=["decay"], fits=["decay"])


def cmd_control(args) -> int:
    cfg = build_config(args)
    loaded = _load(args, cfg)
    out = Path(args.out)
    original = _with_inputs(run_days(loaded.days, cfg), loaded)
    write_outputs(original, out / "original")
    runs = []
    all_ok = original.ok
    for r in range(args.repeats):
        seed = args.control_seed + r
        ccfg = cfg.with_(control=args.mode, control_seed=seed)
        res = _with_inputs(run_days(loaded.days, ccfg), loaded)
        write_outputs(res, out / f"control_{r:03d}")
        all_ok &= res.ok
        runs.append({"curve": res.curves["impact"], "fit": res.fits.get("sqrt"),
                     "mode": args.mode, "seed": seed, "config": ccfg.to_dict(scheduling=False)})
    report = control_report({"curve": original.curves["impact"], "fit": original.fits.get("sqrt"),
                             "seed": cfg.seed, "config": cfg.to_dict(scheduling=False)}, runs)
    dump_json(report, out / "control_report.json")
    for c in report["controls"]:
        print(f"{c['mode']} seed={c['seed']}: {c['zero_impact_pass']}/{c['retained_bins']} "
              f"bins within 2 SE of zero")
    print(f"outputs written to {out}")
    return 0 if all_ok else 1


def _parse_law(text: str) -> FrequencyLaw:
    kind, _, alpha = text.partition(":")
    return FrequencyLaw(kind, float(alpha) if alpha else 2.0)


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    loaded = _load(args, cfg)
    traders = [int(v) for v in args.grid_traders.split(",") if v]
    laws = [_parse_law(v) for v in args.grid_laws.split(",") if v]
    rows = sweep(loaded.days, cfg, traders, laws)
    write_sweep(rows, args.out)
    for r in rows:
        print(f"N={r['traders']:<5} {r['freq_law']:<12} Y={r.get('Y')} delta={r.get('delta')} "
              f"beta={r.get('beta')} T={r.get('mean_duration_seconds')} "
              f"n={r.get('mean_n_children')} [{r['status']}]")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_simulate(args) -> int:
    beta = None if args.beta == "auto" else float(args.beta)
    signs = args.signs or ("correlated" if args.model == "propagator" else "iid")
    impact = "propagator" if args.model == "propagator" else "instantaneous"
    config = SyntheticTapeConfig(
        n_trades=args.trades, chi=args.chi, q_min=args.q_min, q_max=args.q_max,
        sign_model=signs, gamma=args.gamma, impact_model=impact, beta=beta, seed=args.seed,
        sigma_target=args.sigma, memory=args.memory, symbol=args.symbol,
        day=date.fromisoformat(args.date), session=SessionFilter())
    tape = generate_tape(config)
    if args.out == "-":
        write_tape_csv(tape, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            write_tape_csv(tape, fh)
        print(f"{len(tape)} trades written to {args.out}", file=sys.stderr)
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metaforge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_inputs(name, help, out=True):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("inputs", nargs="+", help="tape CSV files or directories")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        _add_run_flags(sp)
        return sp

    sp = with_inputs("ingest", "parse, clean and split tapes into trading days", out=False)
    sp.add_argument("--out", help="write cleaned per-day tapes here")
    sp.add_argument("--labels-out", help="CSV dump of (row, trader) labels per day")
    sp.set_defaults(func=cmd_ingest)

    with_inputs("run", "full pipeline: metaorders, curves and fits").set_defaults(func=cmd_run)
    with_inputs("profile", "execution profile only").set_defaults(func=cmd_profile)
    with_inputs("decay", "post-execution decay only").set_defaults(func=cmd_decay)

    sp = with_inputs("control", "negative controls against the original run")
    sp.add_argument("--mode", choices=("signs", "chronology"), required=True)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--control-seed", type=int, default=0,
                    help="first control seed; repeat r uses seed + r")
    sp.set_defaults(func=cmd_control)

    sp = with_inputs("sweep", "robustness over trader count and frequency law")
    sp.add_argument("--grid-traders", default="4,40", help="comma list of N")
    sp.add_argument("--grid-laws", default="homogeneous",
                    help="comma list of homogeneous or powerlaw:ALPHA")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("simulate", help="write a synthetic tape CSV")
    sp.add_argument("--model", choices=("iid", "propagator"), default="iid")
    sp.add_argument("--signs", choices=("iid", "correlated"),
                    help="sign model (default: iid for --model iid, correlated for propagator)")
    sp.add_argument("--chi", type=float, default=0.5)
    sp.add_argument("--gamma", type=float, default=0.5)
    sp.add_argument("--beta", default="auto", help="propagator exponent or 'auto' = (1-gamma)/2")
    sp.add_argument("--trades", type=int, default=1_000_000)
    sp.add_argument("--q-min", type=float, default=1.0)
    sp.add_argument("--q-max", type=float, default=100.0)
    sp.add_argument("--sigma", type=float, default=0.02, help="target daily range volatility")
    sp.add_argument("--memory", type=int, help="propagator kernel length (default: whole tape)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--symbol", default="SYN")
    sp.add_argument("--date", default="2024-01-02")
    sp.add_argument("--out", required=True, help="tape CSV path, or - for stdout")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PipelineError, TapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
