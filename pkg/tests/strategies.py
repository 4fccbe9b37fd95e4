"""Hypothesis strategies and brute-force oracles shared by property tests."""
import numpy as np
from hypothesis import strategies as st

from metaforge.tape import DailyTape

from conftest import DAY, T0

tiny_tapes = st.integers(1, 100).flatmap(lambda n: st.tuples(
    st.lists(st.floats(1.0, 1000.0), min_size=n, max_size=n),
    st.lists(st.floats(0.5, 500.0), min_size=n, max_size=n),
    st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n),
    st.lists(st.integers(0, 3_000_000_000), min_size=n, max_size=n),
))


def to_tape(raw) -> DailyTape:
    prices, volumes, signs, gaps = raw
    times = T0 + np.cumsum(np.asarray(gaps, dtype=np.int64)) - gaps[0]
    return DailyTape("HYP", DAY, times, np.array(prices), np.array(volumes),
                     np.array(signs, dtype=np.int8))


def oracle_runs(labels, signs):
    """Maximal same-sign runs per trader by direct iteration, all lengths."""
    runs = []
    for trader in sorted(set(labels)):
        cur = []
        for i, l in enumerate(labels):
            if l != trader:
                continue
            if cur and signs[i] != signs[cur[-1]]:
                runs.append((trader, cur))
                cur = []
            cur.append(i)
        runs.append((trader, cur))
    return runs


@st.composite
def seeded_tapes(draw):
    """Tiny tape from a drawn (length, seed); cheap enough for 10^4 cases."""
    n = draw(st.integers(1, 100))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    # coarse price grid and clustered timestamps force ties
    prices = rng.integers(95, 106, n) * 1.0
    volumes = rng.integers(1, 20, n) * 1.0
    signs = np.where(rng.random(n) < draw(st.sampled_from([0.2, 0.5, 0.8])), -1, 1)
    times = T0 + np.cumsum(rng.integers(0, 3, n)) * 1_000_000
    return DailyTape("HYP", DAY, times, prices, volumes, signs.astype(np.int8))
