"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line through the ``acceptance`` fixture;
the lines are repeated in the terminal summary.
"""
import io
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaforge.impact import (
    FitError,
    child_count_distribution,
    decay_shape,
    fit_decay_beta,
    fit_power_law,
    fit_sqrt_law,
    log_edges,
    peak_impact_curve,
)
from metaforge.impact.curves import DecayCurve, ImpactAccumulator, ImpactCurve
from metaforge.mapping import FrequencyLaw, MappingConfig, assign_traders
from metaforge.metaorders import build_metaorders, write_metaorders_csv
from metaforge.pipeline import RunConfig, dump_json, run_days
from metaforge.synthgen import (
    SyntheticTapeConfig,
    gen_correlated_signs,
    gen_iid_tape,
    gen_propagator_tape,
    measure_sign_acf,
    return_variance_slope,
)

from strategies import oracle_runs, seeded_tapes

N = 1_000_000


def fig8_config(**kw):
    """Four traders with power-law frequencies of exponent 2."""
    return RunConfig(traders=4, freq_law="powerlaw", alpha=2.0, seed=0, **kw)


@pytest.fixture(scope="module")
def iid_tape():
    return gen_iid_tape(SyntheticTapeConfig(n_trades=N, chi=0.5, q_min=1, q_max=100, seed=0))


@pytest.fixture(scope="module")
def propagator_tape():
    return gen_propagator_tape(SyntheticTapeConfig(
        n_trades=N, chi=0.5, q_min=1, q_max=100, sign_model="correlated", gamma=0.5,
        impact_model="propagator", seed=0))


def test_1_exact_fit_recovery(acceptance):
    t0 = time.perf_counter()
    edges = log_edges(1e-6, 1e-1, 30)
    x = np.sqrt(edges[:-1] * edges[1:])
    curve = ImpactCurve(edges, x, 0.5 * np.sqrt(x), np.zeros(30), np.full(30, 100))
    sq = fit_sqrt_law(curve)
    z = np.linspace(1, 10, 19)
    dec = fit_decay_beta(DecayCurve(z, decay_shape(z, 0.22), np.full(19, np.nan), np.full(19, 100)))
    elapsed = time.perf_counter() - t0
    ok = abs(sq.Y - 0.5) < 1e-10 and abs(sq.delta - 0.5) < 1e-10 \
        and abs(dec.beta - 0.22) < 1e-6 and elapsed < 1.0
    acceptance("1 exact-fit recovery", ok,
               f"Y={sq.Y!r} delta={sq.delta!r} beta={dec.beta!r} in {elapsed:.3f}s")
    assert ok


@pytest.mark.parametrize("which", ["propagator", "iid"])
def test_2_shuffled_signs_zero_impact(which, request, acceptance):
    tape = request.getfixturevalue(f"{which}_tape")
    t0 = time.perf_counter()
    passed = total = 0
    for seed in range(20):
        cfg = fig8_config(control="signs", control_seed=seed, measure=("impact",), fits=())
        curve = run_days([tape], cfg).curves["impact"]
        sel = curve.retained
        total += int(sel.sum())
        passed += int(np.sum(np.abs(curve.mean[sel]) <= 2 * curve.se[sel]))
    frac = passed / total if total else float("nan")
    ok = total > 0 and frac >= 0.95
    acceptance(f"2 shuffled-sign control ({which} tape)", ok,
               f"{passed}/{total} retained bins within 2 SE of zero over 20 seeds "
               f"({frac:.1%}, need >= 95%) in {time.perf_counter() - t0:.1f}s")
    assert ok


@pytest.mark.parametrize("which", ["iid", "propagator"])
def test_3_synthetic_prices_give_linear_impact(which, request, acceptance):
    tape = request.getfixturevalue(f"{which}_tape")
    t0 = time.perf_counter()
    res = run_days([tape], fig8_config(fits=("sqrt",)))
    fit = res.fits["sqrt"]
    elapsed = time.perf_counter() - t0
    if fit["status"] == "ok":
        d, se = fit["delta"], fit["delta_se"]
        ok = abs(d - 1) < 0.1 and d - 0.5 > 5 * se and elapsed < 300
        detail = f"delta={d:.4f}+-{se:.4f} over {fit['n_bins']} bins in {elapsed:.1f}s"
    else:
        ok = False
        # context only: the same curve fitted over every retained bin
        curve = res.curves["impact"]
        try:
            wide = fit_sqrt_law(curve, (curve.edges[0], curve.edges[-1]))
            extra = f"; all retained bins would give delta={wide.delta:.4f}+-{wide.delta_se:.4f}"
        except FitError:
            extra = ""
        detail = f"sqrt fit unfittable in the default range: {fit['reason']}{extra}"
    acceptance(f"3 synthetic-price falsification ({which} tape)", ok, detail)
    assert ok


def test_4_correlated_signs_and_diffusivity(acceptance):
    t0 = time.perf_counter()
    lines, ok = [], True
    for gamma in (0.3, 0.5, 0.7):
        signs = gen_correlated_signs(N, gamma, seed=1)
        g = measure_sign_acf(signs, 100, (2, 100)).gamma
        tape = gen_propagator_tape(SyntheticTapeConfig(
            n_trades=N, sign_model="correlated", gamma=gamma, impact_model="propagator", seed=1))
        slope = return_variance_slope(tape, np.unique(np.logspace(1, 3, 15).astype(int)))[0]
        good = abs(g - gamma) <= 0.1 and abs(slope - 1) <= 0.1
        ok &= good
        lines.append(f"gamma={gamma}: acf {g:.3f}, variance slope {slope:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    acceptance("4 correlated signs and diffusivity", ok, "; ".join(lines) + f" in {elapsed:.1f}s")
    assert ok


def test_5_partition_and_determinism_properties(acceptance):
    t0 = time.perf_counter()
    cases = [0]

    @settings(max_examples=10_000, deadline=None, database=None)
    @given(seeded_tapes(), st.integers(1, 8), st.sampled_from([0, 1, 2]), st.integers(0, 2**63 - 1))
    def check(tape, k, law, seed):
        cases[0] += 1
        laws = [FrequencyLaw(), FrequencyLaw("powerlaw", 1.5), FrequencyLaw("powerlaw", 3.0)]
        cfg = MappingConfig(k, laws[law], seed)
        labels = assign_traders(tape, cfg).labels
        table = build_metaorders(tape, labels)
        runs = oracle_runs(labels.tolist(), tape.signs.tolist())
        # partition: kept runs plus singletons cover every trade once
        got = [(int(table.trader[i]), table.children(i).tolist()) for i in range(len(table))]
        assert got == [(t, r) for t, r in runs if len(r) >= 2]
        covered = sorted(table.child_index.tolist() + [r[0] for _, r in runs if len(r) == 1])
        assert covered == list(range(len(tape)))
        # sign purity and chronology
        for i in range(len(table)):
            ch = table.children(i)
            assert np.all(tape.signs[ch] == table.sign[i])
            assert np.all(np.diff(ch) > 0) and np.all(np.diff(tape.timestamps[ch]) >= 0)
        # byte-identical reruns
        def dump():
            buf = io.StringIO()
            write_metaorders_csv([build_metaorders(tape, assign_traders(tape, cfg))], buf)
            acc = ImpactAccumulator(log_edges(1e-3, 1.0, 6))
            acc.add(table)
            c = acc.finalize(1)
            return buf.getvalue() + json.dumps([c.mean.tolist(), c.count.tolist()])
        assert dump() == dump()

    try:
        check()
        ok, err = True, ""
    except AssertionError as exc:
        ok, err = False, f" counterexample: {exc}"
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60 and cases[0] >= 10_000
    acceptance("5 partition/determinism invariants", ok,
               f"{cases[0]} hypothesis cases in {elapsed:.1f}s{err}")
    assert ok


def test_6_run_length_law(acceptance):
    rng = np.random.default_rng(6)
    signs = np.where(rng.random(N) < 0.5, -1, 1)
    from metaforge.tape import DailyTape
    from conftest import DAY, T0
    tape = DailyTape("RL", DAY, T0 + np.arange(N) * 1000, np.full(N, 10.0), np.ones(N),
                     signs.astype(np.int8))
    hist = child_count_distribution(build_metaorders(tape, np.zeros(N, dtype=int)))
    total = hist.total
    counts = dict(zip(hist.values.tolist(), hist.counts.tolist()))
    # P(n | n >= 2) = 2^-(n-1); categories with expectation >= 10, tail pooled
    k_max = 2
    while total * 2.0 ** -k_max >= 10:
        k_max += 1
    worst, ok = 0.0, True
    for n in range(2, k_max + 1):
        if n < k_max:
            p = 2.0 ** -(n - 1)
            obs = counts.get(n, 0)
        else:
            p = 2.0 ** -(k_max - 2)  # P(n >= k_max)
            obs = sum(c for v, c in counts.items() if v >= k_max)
        z = (obs - total * p) / np.sqrt(total * p * (1 - p))
        worst = max(worst, abs(z))
        ok &= abs(z) <= 3
    acceptance("6 run-length law", ok,
               f"{total} metaorders, {k_max - 1} categories, worst |z| = {worst:.2f} (need <= 3)")
    assert ok


def test_7_power_law_fitter(propagator_tape, acceptance, tmp_path):
    rng = np.random.default_rng(7)
    x = (1 - rng.random(100_000)) ** (-1 / 1.5)
    fit = fit_power_law(x, 1.0)
    res = run_days([propagator_tape], fig8_config(fits=("tail",)))
    tail = res.fits["tail"]
    dump_json(res.fits, tmp_path / "fits.json")
    written = json.loads((tmp_path / "fits.json").read_text())["tail"]
    emitted = written["reference_exponent"] == 4.5 and "status" in written
    ok = abs(fit.exponent - 2.5) <= 0.02 and emitted
    reported = (f"{tail['exponent']:.3f}" if tail["status"] == "ok" else tail["status"])
    acceptance("7 power-law fitter", ok,
               f"Pareto(2.5) -> {fit.exponent:.4f}; child-count tail {reported} "
               f"reported with reference 4.5")
    assert ok


def test_8_throughput(propagator_tape, acceptance):
    tape = propagator_tape
    cfg = fig8_config()
    best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        labels = assign_traders(tape, cfg.mapping().for_day(tape.symbol, tape.date))
        table = build_metaorders(tape, labels)
        acc = ImpactAccumulator(cfg.x_edges())
        acc.add(table)
        best = min(best, time.perf_counter() - t0)
    rate = len(tape) / best / 1e6
    ok = rate >= 1.0
    acceptance("8 throughput", ok,
               f"{rate:.2f} M trades/s through map+build+accumulate (target 1.0, floor 0.3)")
    assert rate >= 0.3
