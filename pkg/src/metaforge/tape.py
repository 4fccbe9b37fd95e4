"""Trade tape ingestion, signing and per-day cleaning.

A tape is kept columnar (numpy arrays) once it has been split into days;
``TradeRecord`` is only the row-level view used while parsing.
"""
from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import IO, Iterable, Iterator, Sequence
from zoneinfo import ZoneInfo

import numpy as np

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("timestamp", "price", "volume", "symbol")
TAPE_COLUMNS = ("timestamp", "price", "volume", "sign", "symbol", "venue")


class TapeError(ValueError):
    """Malformed or unusable tape input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TradeRecord:
    timestamp: int  # ns since epoch, UTC
    price: float
    volume: float
    sign: int  # +1 buyer-initiated, -1 seller-initiated, 0 unknown
    symbol: str
    venue: str = ""


@dataclass(frozen=True)
class TapeFormat:
    """How to read a tape CSV.

    ``timestamp_kind`` is ``"auto"``, ``"ns"`` or ``"iso"``. With ``tick_rule``
    a missing or empty sign column is filled from price ticks instead of
    raising.
    """

    timestamp_kind: str = "auto"
    tick_rule: bool = False
    delimiter: str = ","


@dataclass(frozen=True)
class SessionFilter:
    session_open: time = time(9, 0)
    session_close: time = time(17, 30)
    open_cutoff: timedelta = timedelta(minutes=10)
    close_cutoff: timedelta = timedelta(minutes=10)
    tz: str = "UTC"

    def __post_init__(self):
        if self.open_cutoff < timedelta(0) or self.close_cutoff < timedelta(0):
            raise ValueError("session cutoffs must be non-negative")
        span = _seconds(self.session_close) - _seconds(self.session_open)
        kept = span - self.open_cutoff.total_seconds() - self.close_cutoff.total_seconds()
        if kept <= 0:
            raise ValueError("session filter leaves an empty trading window")

    def window_ns(self, day: date) -> tuple[int, int]:
        """Half-open [start, end) window of retained timestamps for ``day``."""
        zone = ZoneInfo(self.tz)
        start = datetime.combine(day, self.session_open, zone) + self.open_cutoff
        end = datetime.combine(day, self.session_close, zone) - self.close_cutoff
        return _to_ns(start), _to_ns(end)


def _seconds(t: time) -> float:
    return t.hour * 3600 + t.minute * 60 + t.second + t.microsecond / 1e6


_EPOCH = datetime(1970, 1, 1, tzinfo=ZoneInfo("UTC"))


def _to_ns(dt: datetime) -> int:
    delta = dt - _EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1_000_000_000 + delta.microseconds * 1_000


@dataclass
class DailyTape:
    """One cleaned symbol-day, chronologically ordered.

    ``volume_total`` is V_D, ``sigma`` is the intraday range over the first
    price, and ``p0`` the first retained price.
    """

    symbol: str
    date: date
    timestamps: np.ndarray  # int64 ns
    prices: np.ndarray
    volumes: np.ndarray
    signs: np.ndarray  # int8
    venue: str = ""
    volume_total: float = field(init=False)
    sigma: float = field(init=False)
    p0: float = field(init=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.volumes = np.asarray(self.volumes, dtype=np.float64)
        self.signs = np.asarray(self.signs, dtype=np.int8)
        n = len(self.timestamps)
        if not (len(self.prices) == len(self.volumes) == len(self.signs) == n):
            raise ValueError("tape columns have different lengths")
        if n == 0:
            raise ValueError("a daily tape needs at least one trade")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("tape timestamps must be non-decreasing")
        self.volume_total = float(self.volumes.sum())
        self.p0 = float(self.prices[0])
        self.sigma = daily_sigma(self.prices)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def log_prices(self) -> np.ndarray:
        return np.log(self.prices)

    @property
    def trades(self) -> list[TradeRecord]:
        return [
            TradeRecord(int(t), float(p), float(v), int(s), self.symbol, self.venue)
            for t, p, v, s in zip(self.timestamps, self.prices, self.volumes, self.signs)
        ]

    def replace(self, **columns) -> "DailyTape":
        """Copy of this tape with some columns swapped out."""
        kw = dict(
            symbol=self.symbol, date=self.date, timestamps=self.timestamps,
            prices=self.prices, volumes=self.volumes, signs=self.signs, venue=self.venue,
        )
        kw.update(columns)
        return DailyTape(**kw)


def daily_sigma(prices: np.ndarray) -> float:
    prices = np.asarray(prices, dtype=np.float64)
    return float((prices.max() - prices.min()) / prices[0])


# --- parsing -----------------------------------------------------------------

_ISO_RE = re.compile(
    r"^(\d{4}-\d{2}-\d{2})[T ](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?(Z|[+-]\d{2}:?\d{2})?$"
)


def parse_iso_ns(text: str) -> int:
    """ISO-8601 timestamp with up to nanosecond digits to integer ns UTC.

    A missing offset is read as UTC.
    """
    m = _ISO_RE.match(text.strip())
    if not m:
        raise ValueError(f"not an ISO-8601 timestamp: {text!r}")
    day, hh, mm, ss, frac, off = m.groups()
    base = datetime.fromisoformat(f"{day}T{hh}:{mm}:{ss}")
    if off is None or off == "Z":
        offset = timedelta(0)
    else:
        sgn = -1 if off[0] == "-" else 1
        digits = off[1:].replace(":", "")
        offset = sgn * timedelta(hours=int(digits[:2]), minutes=int(digits[2:]))
    utc = (base - offset).replace(tzinfo=ZoneInfo("UTC"))
    ns = _to_ns(utc)
    if frac:
        ns += int(frac.ljust(9, "0"))
    return ns


def _detect_timestamp_kind(value: str) -> str:
    return "ns" if re.fullmatch(r"-?\d+", value.strip()) else "iso"


def _parse_sign(raw: str, line: int) -> int:
    raw = raw.strip()
    if raw in ("1", "+1", "1.0", "+1.0"):
        return 1
    if raw in ("-1", "-1.0"):
        return -1
    raise TapeError(f"sign must be +1 or -1, got {raw!r}", line)


def _positive(raw: str, name: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise TapeError(f"{name} is not a number: {raw!r}", line) from None
    if not np.isfinite(value) or value <= 0:
        raise TapeError(f"{name} must be positive, got {raw!r}", line)
    return value


def iter_records(stream: IO[str], fmt: TapeFormat = TapeFormat()) -> Iterator[TradeRecord]:
    reader = csv.reader(stream, delimiter=fmt.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TapeError("empty input, header required", 1) from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise TapeError(f"missing required column(s): {', '.join(missing)}", 1)
    col = {name: i for i, name in enumerate(header)}
    has_sign = "sign" in col
    if not has_sign and not fmt.tick_rule:
        raise TapeError("no sign column and tick-rule fallback not enabled", 1)
    kind = fmt.timestamp_kind
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TapeError(f"expected {len(header)} fields, got {len(row)}", lineno)
        raw_ts = row[col["timestamp"]]
        if kind == "auto":
            kind = _detect_timestamp_kind(raw_ts)
        try:
            ts = int(raw_ts) if kind == "ns" else parse_iso_ns(raw_ts)
        except ValueError:
            raise TapeError(f"bad timestamp {raw_ts!r}", lineno) from None
        price = _positive(row[col["price"]], "price", lineno)
        volume = _positive(row[col["volume"]], "volume", lineno)
        raw_sign = row[col["sign"]].strip() if has_sign else ""
        if raw_sign:
            sign = _parse_sign(raw_sign, lineno)
        elif fmt.tick_rule:
            sign = 0
        else:
            raise TapeError("empty sign and tick-rule fallback not enabled", lineno)
        venue = row[col["venue"]].strip() if "venue" in col else ""
        yield TradeRecord(ts, price, volume, sign, row[col["symbol"]].strip(), venue)


def parse_tape(stream: IO[str] | IO[bytes], fmt: TapeFormat = TapeFormat()) -> list[TradeRecord]:
    """Parse a tape CSV into records, preserving row order.

    Unsigned rows (sign 0) only occur with ``fmt.tick_rule``; the tick rule is
    applied per symbol over the parsed order.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, io.BufferedIOBase) or "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    records = list(iter_records(stream, fmt))
    if fmt.tick_rule and any(r.sign == 0 for r in records):
        records = _fill_tick_signs(records)
    return records


def _fill_tick_signs(records: list[TradeRecord]) -> list[TradeRecord]:
    by_symbol: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_symbol.setdefault(r.symbol, []).append(i)
    out = list(records)
    for idx in by_symbol.values():
        ticked = tick_rule_signs([records[i] for i in idx])
        for i, rec in zip(idx, ticked):
            if records[i].sign == 0:
                out[i] = rec
    return out


def tick_rule_signs(trades: Sequence[TradeRecord]) -> list[TradeRecord]:
    """Sign trades by the tick rule: uptick +1, downtick -1, zero tick carries.

    The first trade is +1.
    """
    out = []
    prev_price = None
    sign = 1
    for t in trades:
        if prev_price is not None:
            if t.price > prev_price:
                sign = 1
            elif t.price < prev_price:
                sign = -1
        prev_price = t.price
        out.append(TradeRecord(t.timestamp, t.price, t.volume, sign, t.symbol, t.venue))
    return out


def tick_rule_array(prices: np.ndarray) -> np.ndarray:
    """Vectorised tick rule over a price array."""
    prices = np.asarray(prices, dtype=np.float64)
    if len(prices) == 0:
        return np.empty(0, dtype=np.int8)
    tick = np.zeros(len(prices), dtype=np.int8)
    tick[1:] = np.sign(np.diff(prices)).astype(np.int8)
    tick[0] = 1
    # carry the last non-zero tick forward
    nz = np.where(tick != 0, np.arange(len(tick)), 0)
    np.maximum.accumulate(nz, out=nz)
    return tick[nz]


# --- cleaning ----------------------------------------------------------------

@dataclass
class SplitReport:
    days: list[DailyTape]
    dropped_days: list[tuple[str, date, int]]  # (symbol, date, trades left)
    trimmed: int  # records removed by the session cutoffs


def clean_and_split(
    records: Iterable[TradeRecord], session: SessionFilter = SessionFilter()
) -> SplitReport:
    """Group one symbol's records by calendar date and trim each session.

    Each day is stably sorted by timestamp. Days left with fewer than two
    trades are dropped and listed in the report.
    """
    records = list(records)
    symbols = {r.symbol for r in records}
    if len(symbols) > 1:
        raise TapeError(f"clean_and_split expects one symbol, got {sorted(symbols)}")
    zone = ZoneInfo(session.tz)
    by_day: dict[date, list[TradeRecord]] = {}
    for r in records:
        if r.sign not in (1, -1):
            raise TapeError(f"unsigned trade at ts={r.timestamp}")
        d = datetime.fromtimestamp(r.timestamp // 1_000_000_000, zone).date()
        by_day.setdefault(d, []).append(r)

    days, dropped, trimmed = [], [], 0
    for d in sorted(by_day):
        rows = by_day[d]
        ts = np.fromiter((r.timestamp for r in rows), dtype=np.int64, count=len(rows))
        order = np.argsort(ts, kind="stable")
        lo, hi = session.window_ns(d)
        ts = ts[order]
        keep = (ts >= lo) & (ts < hi)
        trimmed += int(len(rows) - keep.sum())
        idx = order[keep]
        if len(idx) < 2:
            dropped.append((rows[0].symbol, d, len(idx)))
            continue
        sel = [rows[i] for i in idx]
        days.append(
            DailyTape(
                symbol=sel[0].symbol,
                date=d,
                timestamps=ts[keep],
                prices=np.array([r.price for r in sel]),
                volumes=np.array([r.volume for r in sel]),
                signs=np.array([r.sign for r in sel], dtype=np.int8),
                venue=sel[0].venue,
            )
        )
    if dropped:
        log.warning("dropped %d day(s) with fewer than 2 trades after cleaning", len(dropped))
    return SplitReport(days, dropped, trimmed)


def split_by_symbol(records: Iterable[TradeRecord]) -> dict[str, list[TradeRecord]]:
    out: dict[str, list[TradeRecord]] = {}
    for r in records:
        out.setdefault(r.symbol, []).append(r)
    return out


def write_tape_csv(tape: DailyTape, stream: IO[str]) -> None:
    """Write a tape in the standard input format (integer ns timestamps)."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TAPE_COLUMNS)
    for t, p, v, s in zip(tape.timestamps.tolist(), tape.prices.tolist(),
                          tape.volumes.tolist(), tape.signs.tolist()):
        w.writerow((t, repr(p), repr(v), s, tape.symbol, tape.venue))


def read_tape_file(path, fmt: TapeFormat = TapeFormat()) -> list[TradeRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_tape(fh, fmt)
