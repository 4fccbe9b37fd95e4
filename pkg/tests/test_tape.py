import io
from datetime import date, time, timedelta

import numpy as np
import pytest

from metaforge.tape import (
    DailyTape,
    SessionFilter,
    TapeError,
    TapeFormat,
    TradeRecord,
    clean_and_split,
    daily_sigma,
    parse_iso_ns,
    parse_tape,
    tick_rule_array,
    tick_rule_signs,
    write_tape_csv,
)

from conftest import NS, T0, make_tape

HEADER = "timestamp,price,volume,sign,symbol,venue\n"


def test_header_and_one_row_gives_one_record():
    recs = parse_tape(io.StringIO(HEADER + f"{T0},10.5,3,1,ABC,XPAR\n"))
    assert recs == [TradeRecord(T0, 10.5, 3.0, 1, "ABC", "XPAR")]


def test_negative_price_names_line():
    text = HEADER + f"{T0},10,1,1,ABC,X\n{T0},-3.0,1,1,ABC,X\n"
    with pytest.raises(TapeError, match="line 3") as err:
        parse_tape(io.StringIO(text))
    assert err.value.line == 3


@pytest.mark.parametrize("field,row", [("volume", "10,0,1"), ("price", "0,5,1"), ("sign", "10,5,2")])
def test_zero_and_bad_fields_rejected(field, row):
    with pytest.raises(TapeError, match=field):
        parse_tape(io.StringIO(HEADER + f"{T0},{row},ABC,X\n"))


def test_out_of_order_rows_parsed_as_is():
    ts = [T0 + 2 * NS, T0, T0 + NS]
    text = HEADER + "".join(f"{t},10,1,1,ABC,X\n" for t in ts)
    assert [r.timestamp for r in parse_tape(io.StringIO(text))] == ts


def test_missing_sign_column_needs_tick_rule():
    text = "timestamp,price,volume,symbol\n" + f"{T0},10,1,ABC\n{T0 + 1},11,1,ABC\n"
    with pytest.raises(TapeError, match="tick-rule"):
        parse_tape(io.StringIO(text))
    recs = parse_tape(io.StringIO(text), TapeFormat(tick_rule=True))
    assert [r.sign for r in recs] == [1, 1]


def test_empty_sign_cell_filled_by_tick_rule_only_where_missing():
    text = HEADER + f"{T0},10,1,-1,A,X\n{T0 + 1},9,1,,A,X\n{T0 + 2},9,1,,A,X\n"
    recs = parse_tape(io.StringIO(text), TapeFormat(tick_rule=True))
    assert [r.sign for r in recs] == [-1, -1, -1]


def test_bytes_input_and_iso_timestamps():
    text = HEADER + "2024-01-02T10:00:00.123456789+01:00,10,1,+1,A,X\n"
    (rec,) = parse_tape(text.encode())
    expected = int(np.datetime64("2024-01-02T09:00:00.123456789", "ns").astype(np.int64))
    assert rec.timestamp == expected


def test_iso_without_offset_is_utc():
    assert parse_iso_ns("2024-01-02 09:30:00") == T0
    assert parse_iso_ns("2024-01-02T09:30:00Z") == T0


def test_missing_required_column():
    with pytest.raises(TapeError, match="price"):
        parse_tape(io.StringIO("timestamp,volume,sign,symbol\n"))


@pytest.mark.parametrize("prices,signs", [
    ([10, 11, 11, 10], [1, 1, 1, -1]),
    ([10, 10, 10], [1, 1, 1]),
    ([], []),
])
def test_tick_rule(prices, signs):
    recs = [TradeRecord(i, p, 1.0, 0, "A") for i, p in enumerate(prices)]
    assert [r.sign for r in tick_rule_signs(recs)] == signs
    assert tick_rule_array(np.array(prices, dtype=float)).tolist() == signs


def test_tick_rule_vectorised_matches_loop():
    rng = np.random.default_rng(3)
    prices = rng.integers(95, 105, 500).astype(float)
    recs = [TradeRecord(i, p, 1.0, 0, "A") for i, p in enumerate(prices)]
    assert tick_rule_array(prices).tolist() == [r.sign for r in tick_rule_signs(recs)]


def test_daily_tape_aggregates():
    tape = make_tape([100, 104, 98, 101], volumes=[1, 2, 3, 4])
    assert tape.volume_total == 10
    assert tape.p0 == 100
    assert tape.sigma == pytest.approx(0.06)
    assert daily_sigma(np.array([5.0, 5.0])) == 0


def test_daily_tape_rejects_decreasing_time():
    with pytest.raises(ValueError):
        make_tape([1, 2], times=[T0 + 1, T0])


def test_session_filter_validates_window():
    with pytest.raises(ValueError):
        SessionFilter(time(9), time(9, 10), timedelta(minutes=5), timedelta(minutes=5))
    with pytest.raises(ValueError):
        SessionFilter(open_cutoff=timedelta(seconds=-1))


def _rec(ts, price=10.0, symbol="A"):
    return TradeRecord(ts, price, 1.0, 1, symbol)


def test_clean_and_split_trims_sorts_and_drops():
    day1 = int(np.datetime64("2024-01-02T00:00:00", "ns").astype(np.int64))
    day2 = day1 + 86_400 * NS
    h = 3600 * NS
    recs = [
        _rec(day1 + 10 * h, 2.0), _rec(day1 + 9 * h + 5 * 60 * NS),  # second is in the open cutoff
        _rec(day1 + 9 * h + 30 * 60 * NS, 1.0), _rec(day1 + 17 * h + 25 * 60 * NS),  # last in close cutoff
        _rec(day2 + 12 * h),  # lone trade: day dropped
    ]
    rep = clean_and_split(recs)
    assert len(rep.days) == 1
    d = rep.days[0]
    assert d.date == date(2024, 1, 2)
    assert d.prices.tolist() == [1.0, 2.0]
    assert rep.trimmed == 2
    assert rep.dropped_days == [("A", date(2024, 1, 3), 1)]


def test_clean_and_split_is_stable_for_ties():
    recs = [_rec(T0, 1.0), _rec(T0, 2.0), _rec(T0, 3.0)]
    assert clean_and_split(recs).days[0].prices.tolist() == [1.0, 2.0, 3.0]


def test_clean_and_split_respects_session_tz():
    # 08:30 UTC is 09:30 in Paris (winter)
    ts = int(np.datetime64("2024-01-02T08:30:00", "ns").astype(np.int64))
    recs = [_rec(ts), _rec(ts + NS)]
    assert clean_and_split(recs).days == []
    assert len(clean_and_split(recs, SessionFilter(tz="Europe/Paris")).days) == 1


def test_clean_and_split_rejects_mixed_symbols():
    with pytest.raises(TapeError):
        clean_and_split([_rec(T0, symbol="A"), _rec(T0, symbol="B")])


def test_csv_round_trip():
    tape = make_tape([100.1, 100.2, 99.95], volumes=[1.5, 2, 3], signs=[1, -1, 1])
    buf = io.StringIO()
    write_tape_csv(tape, buf)
    (back,) = clean_and_split(parse_tape(io.StringIO(buf.getvalue()))).days
    for name in ("timestamps", "prices", "volumes", "signs"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tape, name))
