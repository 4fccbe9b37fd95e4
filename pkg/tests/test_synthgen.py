import numpy as np
import pytest

from metaforge.synthgen import (
    LMF_CALIBRATION,
    SyntheticTapeConfig,
    gen_correlated_signs,
    gen_iid_tape,
    gen_propagator_tape,
    generate_tape,
    lmf_tail_for_gamma,
    measure_sign_acf,
    propagator_log_mid,
    return_variance_slope,
    sign_acf,
)


def test_constant_volume_zero_chi_gives_constant_returns():
    tape = gen_iid_tape(SyntheticTapeConfig(n_trades=10_000, chi=0.0, q_min=1, q_max=1, seed=2))
    r = np.abs(np.diff(tape.log_prices))
    np.testing.assert_allclose(r, r[0], rtol=1e-9)


def test_iid_sign_mean():
    tape = gen_iid_tape(SyntheticTapeConfig(n_trades=1_000_000, seed=1))
    assert abs(tape.signs.mean()) <= 0.003
    assert tape.volumes.min() >= 1 and tape.volumes.max() <= 100
    assert tape.sigma == pytest.approx(0.02, rel=0.05)


def test_iid_returns_are_sign_times_power():
    cfg = SyntheticTapeConfig(n_trades=1000, seed=4)
    tape = gen_iid_tape(cfg)
    r = np.diff(tape.log_prices)
    unit = tape.signs[:-1] * tape.volumes[:-1] ** 0.5
    ratio = r / unit
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-7)
    assert ratio[0] > 0


def test_generator_preconditions():
    with pytest.raises(ValueError):
        gen_iid_tape(SyntheticTapeConfig(n_trades=100, impact_model="propagator"))
    with pytest.raises(ValueError):
        gen_propagator_tape(SyntheticTapeConfig(n_trades=100))
    with pytest.raises(ValueError):
        SyntheticTapeConfig(q_min=5, q_max=1)
    with pytest.raises(ValueError):
        SyntheticTapeConfig(sign_model="correlated", gamma=1.2)


def test_default_beta():
    cfg = SyntheticTapeConfig(sign_model="correlated", impact_model="propagator", gamma=0.5)
    assert cfg.effective_beta == 0.25
    assert SyntheticTapeConfig(gamma=0.5, beta=0.1).effective_beta == 0.1


def test_single_trade_kernel():
    mid = propagator_log_mid(np.array([1, 0, 0, 0, 0]), np.ones(5), chi=0.0, beta=0.3)
    np.testing.assert_allclose(mid, np.arange(1, 6) ** -0.3, rtol=1e-12)


def test_propagator_matches_direct_sum_and_memory():
    rng = np.random.default_rng(0)
    s = rng.choice([-1, 1], 300)
    q = rng.uniform(1, 100, 300)
    mid = propagator_log_mid(s, q, 0.5, 0.25)
    flow = s * q**0.5
    brute = [sum((t - u + 1) ** -0.25 * flow[u] for u in range(t + 1)) for t in range(300)]
    np.testing.assert_allclose(mid, brute, rtol=1e-9, atol=1e-9)
    short = propagator_log_mid(s, q, 0.5, 0.25, memory=10)
    brute10 = [sum((t - u + 1) ** -0.25 * flow[u] for u in range(max(0, t - 9), t + 1))
               for t in range(300)]
    np.testing.assert_allclose(short, brute10, rtol=1e-9, atol=1e-9)


def test_propagator_prices_are_pre_trade():
    cfg = SyntheticTapeConfig(n_trades=200, impact_model="propagator", sign_model="iid",
                              beta=0.3, seed=3)
    tape = gen_propagator_tape(cfg)
    rng = np.random.default_rng(3)
    q = rng.uniform(1, 100, 200)
    s = np.where(rng.random(200) < 0.5, -1, 1)
    mid = propagator_log_mid(s, q, 0.5, 0.3)
    lp = tape.log_prices - np.log(cfg.p0)
    scale = lp[1] / mid[0]
    np.testing.assert_allclose(lp[1:], scale * mid[:-1], rtol=1e-9, atol=1e-15)
    assert lp[0] == 0


def test_acf_basics():
    assert sign_acf(np.array([1, -1] * 50), 3).tolist()[:2] == [1.0, -1.0]
    n = 100_000
    s = np.where(np.random.default_rng(0).random(n) < 0.5, -1, 1)
    c = sign_acf(s, 20)
    assert c[0] == 1
    assert np.all(np.abs(c[1:]) < 3 / np.sqrt(n))
    with pytest.raises(ValueError):
        sign_acf(s[:10], 10)


def test_lmf_calibration_table_is_monotone():
    assert np.all(np.diff(LMF_CALIBRATION[:, 0]) > 0)
    assert np.all(np.diff(LMF_CALIBRATION[:, 1]) > 0)
    assert lmf_tail_for_gamma(0.3037) == pytest.approx(1.40)
    with pytest.raises(ValueError):
        lmf_tail_for_gamma(0.99)


def test_correlated_signs_gamma_half():
    acf = measure_sign_acf(gen_correlated_signs(1_000_000, 0.5, seed=1), 100, (2, 100))
    assert acf.acf[0] == 1
    assert abs(acf.gamma - 0.5) < 0.1


def test_correlated_signs_deterministic():
    a = gen_correlated_signs(10_000, 0.4, 5)
    np.testing.assert_array_equal(a, gen_correlated_signs(10_000, 0.4, 5))
    assert set(np.unique(a)) == {-1, 1}


def test_diffusivity_monotone_in_beta():
    base = dict(n_trades=200_000, sign_model="correlated", impact_model="propagator",
                gamma=0.5, seed=2)
    slopes = [return_variance_slope(generate_tape(SyntheticTapeConfig(beta=b, **base)))[0]
              for b in (0.1, 0.25, 0.45)]
    assert slopes[0] > slopes[1] > slopes[2]


def test_generate_tape_dispatch_and_session():
    tape = generate_tape(SyntheticTapeConfig(n_trades=1000, seed=0))
    lo, hi = SyntheticTapeConfig().session.window_ns(tape.date)
    assert tape.timestamps[0] >= lo and tape.timestamps[-1] < hi
    assert np.all(np.diff(tape.timestamps) > 0)
