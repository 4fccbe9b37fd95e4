from datetime import date

import numpy as np
import pytest

from metaforge.tape import DailyTape

NS = 1_000_000_000
DAY = date(2024, 1, 2)
# 09:30 UTC on DAY, inside the default trimmed session
T0 = int(np.datetime64("2024-01-02T09:30:00", "ns").astype(np.int64))


def make_tape(prices, volumes=None, signs=None, times=None, symbol="TST", day=DAY):
    prices = np.asarray(prices, dtype=float)
    n = len(prices)
    if volumes is None:
        volumes = np.ones(n)
    if signs is None:
        signs = np.ones(n, dtype=np.int8)
    if times is None:
        times = T0 + NS * np.arange(n)
    return DailyTape(symbol=symbol, date=day, timestamps=np.asarray(times, dtype=np.int64),
                     prices=prices, volumes=np.asarray(volumes, dtype=float),
                     signs=np.asarray(signs, dtype=np.int8))


@pytest.fixture
def tape_factory():
    return make_tape


# --- acceptance summary -----------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(key: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[key] = (bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
