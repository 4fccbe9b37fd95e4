"""Cut each synthetic trader's order flow into metaorders.

A metaorder is a maximal run of same-sign trades by one trader within one
session, kept only if it has at least two child orders. Everything is held in
a columnar :class:`MetaorderTable`; :class:`Metaorder` is the per-row view.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from typing import IO, Iterable, Sequence

import numpy as np

from .mapping import TraderAssignment
from .tape import DailyTape

NS = 1_000_000_000

METAORDER_CSV_COLUMNS = (
    "symbol", "date", "trader", "sign", "Q", "Q_over_VD", "n_children",
    "T_seconds", "log_ps", "log_pe", "sigma_D",
)


@dataclass
class Metaorder:
    symbol: str
    date: date
    trader: int
    sign: int
    children: np.ndarray  # indices into the day's tape, strictly increasing
    Q: float
    t_start: int
    t_end: int
    log_ps: float
    log_pe: float
    cum_volumes: np.ndarray  # volume executed through each child
    log_prices_after: np.ndarray  # log price of the trade right after each child

    @property
    def n_children(self) -> int:
        return len(self.children)

    @property
    def duration(self) -> float:
        return (self.t_end - self.t_start) / NS


def _end_index(last_child: np.ndarray, n_trades: int) -> np.ndarray:
    # p_e is read from the first trade after the last child; at day end fall
    # back to the last child itself
    nxt = last_child + 1
    return np.where(nxt < n_trades, nxt, last_child)


def metaorder_features(tape: DailyTape, run: Sequence[int], trader: int = 0) -> Metaorder:
    """Features of one same-sign run of tape indices."""
    run = np.asarray(run, dtype=np.int64)
    if len(run) == 0:
        raise ValueError("empty run")
    signs = tape.signs[run]
    if np.any(signs != signs[0]):
        raise ValueError("run mixes trade signs")
    logp = tape.log_prices
    vols = tape.volumes[run]
    after = _end_index(run, len(tape))
    return Metaorder(
        symbol=tape.symbol,
        date=tape.date,
        trader=int(trader),
        sign=int(signs[0]),
        children=run,
        Q=float(vols.sum()),
        t_start=int(tape.timestamps[run[0]]),
        t_end=int(tape.timestamps[run[-1]]),
        log_ps=float(logp[run[0]]),
        log_pe=float(logp[after[-1]]),
        cum_volumes=np.cumsum(vols),
        log_prices_after=logp[after],
    )


@dataclass
class MetaorderTable:
    """All metaorders of one symbol-day, column by column."""

    symbol: str
    date: date
    sigma: float
    volume_total: float
    trader: np.ndarray
    sign: np.ndarray
    n_children: np.ndarray
    Q: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    log_ps: np.ndarray
    log_pe: np.ndarray
    child_offsets: np.ndarray  # len = n_metaorders + 1
    child_index: np.ndarray  # flat tape indices, grouped per metaorder
    tape: DailyTape | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.Q)

    @property
    def duration(self) -> np.ndarray:
        return (self.t_end - self.t_start) / NS

    @property
    def x(self) -> np.ndarray:
        """Q / V_D."""
        return self.Q / self.volume_total

    @property
    def impact(self) -> np.ndarray:
        """Signed peak log-price move, not yet normalised by sigma."""
        return self.sign * (self.log_pe - self.log_ps)

    def children(self, i: int) -> np.ndarray:
        return self.child_index[self.child_offsets[i]:self.child_offsets[i + 1]]

    def __getitem__(self, i: int) -> Metaorder:
        if self.tape is None:
            raise ValueError("row view needs the source tape")
        m = metaorder_features(self.tape, self.children(i), int(self.trader[i]))
        return m

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def detach(self) -> "MetaorderTable":
        """Same table without the tape reference (cheap to pickle)."""
        out = MetaorderTable(**{k: v for k, v in self.__dict__.items() if k != "tape"})
        return out


def build_metaorders(tape: DailyTape, labels: TraderAssignment | np.ndarray) -> MetaorderTable:
    """Split each trader's chronological subsequence at every sign change.

    Runs with a single child are discarded.
    """
    lab = labels.labels if isinstance(labels, TraderAssignment) else np.asarray(labels)
    n = len(tape)
    if len(lab) != n:
        raise ValueError("labels are not aligned with the tape")
    # stable: trader-major, chronological within a trader
    order = np.argsort(lab, kind="stable")
    lab_o = lab[order]
    sign_o = tape.signs[order]
    brk = np.empty(n, dtype=bool)
    brk[0] = True
    np.not_equal(lab_o[1:], lab_o[:-1], out=brk[1:])
    brk[1:] |= sign_o[1:] != sign_o[:-1]
    starts = np.flatnonzero(brk)
    lengths = np.diff(np.append(starts, n))
    keep = lengths >= 2
    run_of_pos = np.cumsum(brk) - 1
    child_index = order[keep[run_of_pos]]

    vol_runs = np.add.reduceat(tape.volumes[order], starts)
    starts_k = starts[keep]
    lengths_k = lengths[keep]
    first = order[starts_k]
    last = order[starts_k + lengths_k - 1]
    logp = tape.log_prices
    offsets = np.zeros(len(starts_k) + 1, dtype=np.int64)
    np.cumsum(lengths_k, out=offsets[1:])
    return MetaorderTable(
        symbol=tape.symbol,
        date=tape.date,
        sigma=tape.sigma,
        volume_total=tape.volume_total,
        trader=lab_o[starts_k].astype(np.int32),
        sign=sign_o[starts_k].astype(np.int8),
        n_children=lengths_k.astype(np.int64),
        Q=vol_runs[keep],
        t_start=tape.timestamps[first],
        t_end=tape.timestamps[last],
        log_ps=logp[first],
        log_pe=logp[_end_index(last, n)],
        child_offsets=offsets,
        child_index=child_index,
        tape=tape,
    )


def write_metaorders_csv(tables: Iterable[MetaorderTable], stream: IO[str]) -> int:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(METAORDER_CSV_COLUMNS)
    rows = 0
    for t in tables:
        day = t.date.isoformat()
        sig = repr(float(t.sigma))
        for tr, s, q, x, nc, dur, ps, pe in zip(
            t.trader.tolist(), t.sign.tolist(), t.Q.tolist(), t.x.tolist(),
            t.n_children.tolist(), t.duration.tolist(), t.log_ps.tolist(), t.log_pe.tolist(),
        ):
            w.writerow((t.symbol, day, tr, s, repr(q), repr(x), nc, repr(dur), repr(ps), repr(pe), sig))
            rows += 1
    return rows
