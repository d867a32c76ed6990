"""Tick data model, CSV ingestion, and seeded synthetic stream generation.

Prices are integer multiples of the instrument tick; volumes are integer
quantity units.  A stream is a list of events, non-decreasing in timestamp,
with trades ordered before snapshots on timestamp ties.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import ConfigError, DataFormatError


class Side(enum.Enum):
    BUY = "B"
    SELL = "S"

    @property
    def opposite(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY

    @property
    def sign(self) -> int:
        """+1 for buy interest, -1 for sell interest."""
        return 1 if self is Side.BUY else -1


@dataclass(frozen=True, slots=True)
class PriceLevel:
    price: int
    volume: int


@dataclass(frozen=True, slots=True)
class BookSnapshot:
    """One tick of the visible book: best-first levels on both sides."""

    timestamp: int
    bids: tuple[PriceLevel, ...]
    asks: tuple[PriceLevel, ...]

    @property
    def best_bid(self) -> PriceLevel:
        return self.bids[0]

    @property
    def best_ask(self) -> PriceLevel:
        return self.asks[0]

    @property
    def spread(self) -> int:
        return self.asks[0].price - self.bids[0].price

    @property
    def mid_x2(self) -> int:
        """Twice the mid price; exact even when the mid falls on a half tick."""
        return self.bids[0].price + self.asks[0].price

    def side_levels(self, side: Side) -> tuple[PriceLevel, ...]:
        return self.bids if side is Side.BUY else self.asks

    def volume_at(self, side: Side, price: int) -> int:
        for level in self.side_levels(side):
            if level.price == price:
                return level.volume
        return 0

    def validate(self, row: int | None = None) -> None:
        if not self.bids or not self.asks:
            raise DataFormatError("snapshot must carry at least one level per side", row)
        if self.bids[0].price >= self.asks[0].price:
            raise DataFormatError(
                f"crossed book: bid {self.bids[0].price} >= ask {self.asks[0].price}", row
            )
        for name, levels, descending in (("bid", self.bids, True), ("ask", self.asks, False)):
            prices = [lv.price for lv in levels]
            ordered = all(a > b for a, b in zip(prices, prices[1:])) if descending else all(
                a < b for a, b in zip(prices, prices[1:])
            )
            if not ordered:
                raise DataFormatError(f"{name} prices not strictly sorted best-first", row)
            if any(lv.volume < 0 for lv in levels):
                raise DataFormatError(f"negative volume on {name} side", row)


@dataclass(frozen=True, slots=True)
class TradeEvent:
    timestamp: int
    price: int
    size: int
    aggressor: Side

    def validate(self, row: int | None = None) -> None:
        if self.size <= 0:
            raise DataFormatError(f"trade size must be positive, got {self.size}", row)


MarketEvent = Union[BookSnapshot, TradeEvent]


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the seeded synthetic tick process.

    The mid price follows a lazy random walk (one tick per move, upward with
    probability ``up_prob`` when a move fires), per-level volumes are redrawn
    i.i.d. geometric each tick, and trades arrive by Bernoulli thinning,
    consuming top-of-book volume on the side they hit.
    """

    seed: int = 0
    n_ticks: int = 1000
    tick_size: int = 1
    depth: int = 5
    initial_mid: int = 10_000
    spread_min: int = 1
    spread_max: int = 3
    spread_change_prob: float = 0.05
    base_volume: int = 50
    volume_p: float = 0.02
    move_prob: float = 0.1
    up_prob: float = 0.5
    trade_prob: float = 0.3
    sell_prob: float = 0.5
    trade_size_p: float = 0.02
    start_ts_ns: int = 34_200_000_000_000  # 09:30 into the day
    dt_ns: int = 1_000_000

    def validate(self) -> None:
        if self.n_ticks < 0:
            raise ConfigError(f"n_ticks must be >= 0, got {self.n_ticks}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.tick_size < 1:
            raise ConfigError(f"tick_size must be >= 1, got {self.tick_size}")
        if not 1 <= self.spread_min <= self.spread_max:
            raise ConfigError(
                f"need 1 <= spread_min <= spread_max, got {self.spread_min}..{self.spread_max}"
            )
        if self.base_volume < 0:
            raise ConfigError(f"base_volume must be >= 0, got {self.base_volume}")
        if self.initial_mid <= self.spread_max + self.depth:
            raise ConfigError("initial_mid too small for the configured spread and depth")
        for name in ("spread_change_prob", "move_prob", "up_prob", "trade_prob", "sell_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        for name in ("volume_p", "trade_size_p"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if self.dt_ns <= 0:
            raise ConfigError(f"dt_ns must be positive, got {self.dt_ns}")


def generate_synthetic(config: SyntheticConfig) -> list[MarketEvent]:
    """Generate a validated event stream; a pure function of ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    events: list[MarketEvent] = []
    spread = int(config.spread_min)
    best_bid = config.initial_mid - (spread + 1) // 2
    prev: BookSnapshot | None = None

    for k in range(config.n_ticks):
        ts = config.start_ts_ns + k * config.dt_ns

        # Trade against the previous book, before this tick's snapshot.
        if prev is not None and rng.random() < config.trade_prob:
            hit_side = Side.BUY if rng.random() < config.sell_prob else Side.SELL
            top = prev.side_levels(hit_side)[0]
            if top.volume > 0:
                size = min(int(rng.geometric(config.trade_size_p)), top.volume)
                events.append(
                    TradeEvent(ts, top.price, size, aggressor=hit_side.opposite)
                )

        if rng.random() < config.move_prob:
            best_bid += 1 if rng.random() < config.up_prob else -1
        if rng.random() < config.spread_change_prob:
            spread = int(rng.integers(config.spread_min, config.spread_max + 1))

        volumes = config.base_volume + rng.geometric(config.volume_p, size=2 * config.depth)
        bids = tuple(
            PriceLevel(best_bid - i, int(volumes[i])) for i in range(config.depth)
        )
        asks = tuple(
            PriceLevel(best_bid + spread + i, int(volumes[config.depth + i]))
            for i in range(config.depth)
        )
        snap = BookSnapshot(ts, bids, asks)
        snap.validate()
        events.append(snap)
        prev = snap

    return events


_SNAPSHOT_TYPE = "S"
_TRADE_TYPE = "T"


def _header(depth: int) -> list[str]:
    cols = ["ts", "type"]
    for side in ("bid", "ask"):
        cols += [f"{side}_px_{i}" for i in range(1, depth + 1)]
        cols += [f"{side}_vol_{i}" for i in range(1, depth + 1)]
    return cols


def write_ticks(events: Iterable[MarketEvent], path: str | Path, depth: int) -> None:
    """Serialize a stream to the flat CSV schema (snapshot and trade rows)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header(depth))
        for ev in events:
            if isinstance(ev, BookSnapshot):
                if len(ev.bids) != depth or len(ev.asks) != depth:
                    raise DataFormatError(
                        f"snapshot at ts {ev.timestamp} has depth "
                        f"{len(ev.bids)}x{len(ev.asks)}, file depth is {depth}"
                    )
                row = [ev.timestamp, _SNAPSHOT_TYPE]
                for levels in (ev.bids, ev.asks):
                    row += [lv.price for lv in levels]
                    row += [lv.volume for lv in levels]
                writer.writerow(row)
            else:
                writer.writerow(
                    [ev.timestamp, _TRADE_TYPE, ev.price, ev.size, ev.aggressor.value]
                )


def parse_ticks(path: str | Path, schema: dict[str, int] | None = None) -> list[MarketEvent]:
    """Parse and validate a tick CSV into an event stream.

    ``schema`` optionally remaps column names to positions; by default the
    layout is taken from the header row.  Raises :class:`DataFormatError`
    with the offending row number on malformed rows, non-monotonic
    timestamps, or snapshot invariant violations.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"tick file not found: {path}")
    events: list[MarketEvent] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        columns = schema if schema is not None else {name: i for i, name in enumerate(header)}
        if "ts" not in columns or "type" not in columns:
            raise DataFormatError("header must declare 'ts' and 'type' columns", row=1)
        depth = sum(1 for name in columns if name.startswith("bid_px_"))
        last_ts: int | None = None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts = int(row[columns["ts"]])
                kind = row[columns["type"]]
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"unreadable ts/type field ({exc})", row_no) from None
            if last_ts is not None and ts < last_ts:
                raise DataFormatError(
                    f"timestamp {ts} decreases from previous {last_ts}", row_no
                )
            last_ts = ts
            if kind == _SNAPSHOT_TYPE:
                events.append(_parse_snapshot(row, columns, depth, ts, row_no))
            elif kind == _TRADE_TYPE:
                events.append(_parse_trade(row, ts, row_no))
            else:
                raise DataFormatError(f"unknown row type {kind!r}", row_no)
    return events


def _parse_snapshot(
    row: list[str], columns: dict[str, int], depth: int, ts: int, row_no: int
) -> BookSnapshot:
    if depth < 1:
        raise DataFormatError("snapshot row but header declares no bid_px_* columns", row_no)
    try:
        levels = {}
        for side in ("bid", "ask"):
            levels[side] = tuple(
                PriceLevel(
                    int(row[columns[f"{side}_px_{i}"]]),
                    int(row[columns[f"{side}_vol_{i}"]]),
                )
                for i in range(1, depth + 1)
            )
    except (ValueError, IndexError, KeyError) as exc:
        raise DataFormatError(f"malformed snapshot row ({exc})", row_no) from None
    snap = BookSnapshot(ts, levels["bid"], levels["ask"])
    snap.validate(row_no)
    return snap


def _parse_trade(row: list[str], ts: int, row_no: int) -> TradeEvent:
    # Trade rows are positional: ts,type,price,size,aggressor.
    try:
        price = int(row[2])
        size = int(row[3])
        aggressor = Side(row[4])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"malformed trade row ({exc})", row_no) from None
    trade = TradeEvent(ts, price, size, aggressor)
    trade.validate(row_no)
    return trade


def snapshots(events: Iterable[MarketEvent]) -> list[BookSnapshot]:
    return [ev for ev in events if isinstance(ev, BookSnapshot)]
