"""Historical replay session with queue tracking, latency, and synthesized impact.

A session replays an event stream one event per :meth:`SimSession.step`.  The
agent may rest a single passive child order (tracked against historical book
changes under a configurable cancellation model) or hit the opposite top of
book aggressively.  Aggressive actions arm the market-impact rule: when the
opposite top volume is no more than ``c_mi`` times the child size, the
simulated book diverges from history and holds the book of the reversion tick
until that tick is reached, after which replay is historical again.

Passive resting orders never perturb the replayed book.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, SimulationError
from .marketdata import BookSnapshot, MarketEvent, Side, TradeEvent

NS_PER_HOUR = 3_600_000_000_000
NS_PER_DAY = 24 * NS_PER_HOUR


class CancellationModel(enum.Enum):
    FRONT_OF_QUEUE = "front"
    BACK_OF_QUEUE = "back"
    UNIFORM_RANDOM = "uniform"


class OrderKind(enum.Enum):
    PASSIVE = "passive"
    AGGRESSIVE = "aggressive"


@dataclass(frozen=True)
class LatencyBucket:
    """Latency distribution for a time-of-day window [start_hour, end_hour)."""

    start_hour: float = 0.0
    end_hour: float = 24.0
    model: str = "constant"  # constant | lognormal
    value_ns: float = 0.0    # constant delay, or lognormal median
    sigma: float = 0.0       # lognormal shape

    def validate(self) -> None:
        if not 0.0 <= self.start_hour < self.end_hour <= 24.0:
            raise ConfigError(
                f"latency bucket window must satisfy 0 <= start < end <= 24, "
                f"got {self.start_hour}..{self.end_hour}"
            )
        if self.model not in ("constant", "lognormal"):
            raise ConfigError(f"unknown latency model {self.model!r}")
        if self.value_ns < 0 or self.sigma < 0:
            raise ConfigError("latency parameters must be non-negative")

    def sample(self, rng: np.random.Generator) -> int:
        if self.model == "constant":
            return int(self.value_ns)
        draw = self.value_ns * math.exp(self.sigma * rng.standard_normal())
        return max(0, int(draw))


@dataclass(frozen=True)
class LatencySpec:
    buckets: tuple[LatencyBucket, ...] = (LatencyBucket(),)

    def validate(self) -> None:
        if not self.buckets:
            raise ConfigError("latency spec needs at least one bucket")
        for bucket in self.buckets:
            bucket.validate()

    def sample(self, timestamp: int, rng: np.random.Generator) -> int:
        hour = (timestamp % NS_PER_DAY) / NS_PER_HOUR
        for bucket in self.buckets:
            if bucket.start_hour <= hour < bucket.end_hour:
                return bucket.sample(rng)
        # Outside every window: fall back to the first bucket.
        return self.buckets[0].sample(rng)

    @classmethod
    def constant(cls, value_ns: int = 0) -> "LatencySpec":
        return cls((LatencyBucket(model="constant", value_ns=value_ns),))


@dataclass(frozen=True)
class SimParams:
    """Calibratable simulator parameter set."""

    c_mi: float = 1.0
    cancellation_model: CancellationModel = CancellationModel.FRONT_OF_QUEUE
    latency: LatencySpec = field(default_factory=LatencySpec.constant)
    seed: int = 0

    def validate(self) -> None:
        if not self.c_mi > 0:
            raise ConfigError(f"c_mi must be positive, got {self.c_mi}")
        self.latency.validate()

    def describe(self) -> str:
        lat = ",".join(
            f"{b.model}({b.value_ns:g}" + (f",{b.sigma:g})" if b.model == "lognormal" else ")")
            for b in self.latency.buckets
        )
        return f"c_mi={self.c_mi:g}|{self.cancellation_model.value}|{lat}"


@dataclass
class PassiveOrder:
    order_id: int
    side: Side
    price: int
    remaining: int
    queue_ahead: int
    placed_at: int


@dataclass(frozen=True, slots=True)
class Fill:
    timestamp: int
    price: int
    size: int
    kind: OrderKind
    side: Side


@dataclass
class ImpactState:
    target_index: int
    frozen: BookSnapshot
    triggered_at: int


@dataclass
class _PendingPlace:
    effective_ts: int
    order_id: int
    side: Side
    size: int


@dataclass
class _PendingCancel:
    effective_ts: int
    order_id: int


class SimSession:
    """Single-threaded replay state machine over one event stream.

    Distinct sessions are independent; fills and RNG draws are fully
    determined by (events, params, action schedule).
    """

    def __init__(self, events: Sequence[MarketEvent], params: SimParams):
        params.validate()
        if not events:
            raise SimulationError("cannot start a session on an empty stream")
        first = events[0]
        if not isinstance(first, BookSnapshot):
            raise SimulationError("event stream must begin with a book snapshot")
        self.events = events
        self.params = params
        self._rng = np.random.default_rng(params.seed)
        self._idx = 1
        self._hist_book: BookSnapshot = first
        self._book: BookSnapshot = first
        self._impact: ImpactState | None = None
        self._order: PassiveOrder | None = None
        self._pending: list[_PendingPlace | _PendingCancel] = []
        self._traded_at_level = 0
        self._next_id = 1
        self.current_time: int = first.timestamp
        self.fills: list[Fill] = []
        self.mid_history_x2: list[int] = [first.mid_x2]

    # -- observers ---------------------------------------------------------

    @property
    def book(self) -> BookSnapshot:
        """The simulated book the agent currently sees."""
        return self._book

    @property
    def historical_book(self) -> BookSnapshot:
        return self._hist_book

    @property
    def exhausted(self) -> bool:
        return self._idx >= len(self.events)

    @property
    def live_order(self) -> PassiveOrder | None:
        return self._order

    @property
    def impact_active(self) -> bool:
        return self._impact is not None

    @property
    def has_pending_placement(self) -> bool:
        return any(isinstance(p, _PendingPlace) for p in self._pending)

    # -- agent actions -----------------------------------------------------

    def place_passive(self, side: Side, size: int) -> int:
        if size <= 0:
            raise SimulationError(f"passive size must be positive, got {size}")
        if self._order is not None or self.has_pending_placement:
            raise SimulationError("a passive child order is already live or in flight")
        latency = self.params.latency.sample(self.current_time, self._rng)
        order_id = self._next_id
        self._next_id += 1
        self._pending.append(
            _PendingPlace(self.current_time + latency, order_id, side, size)
        )
        self._resolve_pending(self.current_time, inclusive=True)
        return order_id

    def cancel(self, order_id: int) -> None:
        live = self._order is not None and self._order.order_id == order_id
        pending = any(
            isinstance(p, _PendingPlace) and p.order_id == order_id for p in self._pending
        )
        if not live and not pending:
            raise SimulationError(f"unknown order id {order_id}")
        latency = self.params.latency.sample(self.current_time, self._rng)
        self._pending.append(_PendingCancel(self.current_time + latency, order_id))
        self._resolve_pending(self.current_time, inclusive=True)

    def place_aggressive(self, side: Side, size: int) -> list[Fill]:
        if size <= 0:
            raise SimulationError(f"aggressive size must be positive, got {size}")
        if self.exhausted:
            raise SimulationError("session exhausted")
        latency = self.params.latency.sample(self.current_time, self._rng)
        effective = self.current_time + latency
        produced: list[Fill] = []
        # Market data timestamped at or before the effective instant is
        # processed first; the order reaches the exchange behind it.
        while not self.exhausted and self.events[self._idx].timestamp <= effective:
            produced.extend(self._step_one())
        self._resolve_pending(effective, inclusive=True)
        self.current_time = max(self.current_time, effective)
        # An aggressive child replaces any resting or in-flight passive child.
        self._order = None
        self._pending = [p for p in self._pending if isinstance(p, _PendingCancel)]

        opposite_top = self._book.side_levels(side.opposite)[0]
        top_volume = opposite_top.volume
        filled = min(size, top_volume)
        if filled > 0:
            fill = Fill(effective, opposite_top.price, filled, OrderKind.AGGRESSIVE, side)
            self.fills.append(fill)
            produced.append(fill)
        if top_volume / size <= self.params.c_mi:
            self._impact = self._arm_impact(side, effective)
        else:
            self._impact = None
        return produced

    def force_fill(self, side: Side, size: int) -> Fill:
        """Mark-out fill of the full size at the opposite best of the current book.

        Used to liquidate a truncated episode's remainder; bypasses displayed
        volume on purpose (it is a valuation convention, not a matching rule).
        """
        if size <= 0:
            raise SimulationError(f"liquidation size must be positive, got {size}")
        top = self._book.side_levels(side.opposite)[0]
        fill = Fill(self.current_time, top.price, size, OrderKind.AGGRESSIVE, side)
        self.fills.append(fill)
        return fill

    # -- replay ------------------------------------------------------------

    def step(self) -> tuple[BookSnapshot, list[Fill], bool]:
        """Advance one event; returns (simulated book, fills this step, exhausted)."""
        if self.exhausted:
            raise SimulationError("cannot step an exhausted session")
        fills = self._step_one()
        return self._book, fills, self.exhausted

    def _step_one(self) -> list[Fill]:
        event = self.events[self._idx]
        before = len(self.fills)
        self._resolve_pending(event.timestamp, inclusive=False)
        if isinstance(event, TradeEvent):
            self._apply_trade(event)
        else:
            self._apply_snapshot(event)
        self._idx += 1
        self.current_time = max(self.current_time, event.timestamp)
        self._resolve_pending(event.timestamp, inclusive=True)
        self.mid_history_x2.append(self._book.mid_x2)
        return self.fills[before:]

    def _apply_trade(self, trade: TradeEvent) -> None:
        order = self._order
        if (
            order is not None
            and trade.price == order.price
            and trade.aggressor is order.side.opposite
        ):
            self._traded_at_level += trade.size
            consumed = min(order.queue_ahead, trade.size)
            order.queue_ahead -= consumed
            leftover = trade.size - consumed
            if leftover > 0:
                fill_size = min(leftover, order.remaining)
                self.fills.append(
                    Fill(trade.timestamp, order.price, fill_size, OrderKind.PASSIVE, order.side)
                )
                order.remaining -= fill_size
                if order.remaining == 0:
                    self._order = None

    def _apply_snapshot(self, snap: BookSnapshot) -> None:
        self._update_queue(snap)
        self._hist_book = snap
        if self._impact is not None:
            if self._idx >= self._impact.target_index:
                self._impact = None
                self._book = snap
            else:
                self._book = self._impact.frozen
        else:
            self._book = snap

    def _update_queue(self, snap: BookSnapshot) -> None:
        order = self._order
        traded = self._traded_at_level
        self._traded_at_level = 0
        if order is None:
            return
        prev_vol = self._hist_book.volume_at(order.side, order.price)
        new_vol = snap.volume_at(order.side, order.price)
        expected = max(0, prev_vol - traded)
        decrease = expected - new_vol
        if decrease > 0:
            model = self.params.cancellation_model
            if model is CancellationModel.FRONT_OF_QUEUE:
                order.queue_ahead = max(0, order.queue_ahead - decrease)
            elif model is CancellationModel.BACK_OF_QUEUE:
                behind = max(0, expected - order.queue_ahead)
                excess = decrease - behind
                if excess > 0:
                    order.queue_ahead = max(0, order.queue_ahead - excess)
            else:  # UNIFORM_RANDOM: each cancelled unit is ahead hypergeometrically
                population = expected
                ahead = min(order.queue_ahead, population)
                draws = min(decrease, population)
                if draws > 0 and population > 0 and ahead > 0:
                    removed = int(
                        self._rng.hypergeometric(ahead, population - ahead, draws)
                    )
                    order.queue_ahead = max(0, order.queue_ahead - removed)
        order.queue_ahead = min(order.queue_ahead, new_vol)

    def _resolve_pending(self, up_to: int, inclusive: bool) -> None:
        while self._pending:
            due = [
                p
                for p in self._pending
                if (p.effective_ts <= up_to if inclusive else p.effective_ts < up_to)
            ]
            if not due:
                return
            op = min(due, key=lambda p: p.effective_ts)
            self._pending.remove(op)
            if isinstance(op, _PendingPlace):
                if self._order is None:
                    level = self._book.side_levels(op.side)[0]
                    self._order = PassiveOrder(
                        order_id=op.order_id,
                        side=op.side,
                        price=level.price,
                        remaining=op.size,
                        queue_ahead=level.volume,
                        placed_at=op.effective_ts,
                    )
            else:
                if self._order is not None and self._order.order_id == op.order_id:
                    self._order = None
                else:
                    # Cancel overtook an in-flight placement: drop the placement.
                    self._pending = [
                        p
                        for p in self._pending
                        if not (
                            isinstance(p, _PendingPlace) and p.order_id == op.order_id
                        )
                    ]

    def _arm_impact(self, agent_side: Side, triggered_at: int) -> ImpactState:
        target = self._find_reversion_index(agent_side)
        if target < len(self.events):
            frozen = self.events[target]
        else:
            frozen = self._last_snapshot_from(len(self.events) - 1)
        assert isinstance(frozen, BookSnapshot)
        return ImpactState(target_index=target, frozen=frozen, triggered_at=triggered_at)

    def _find_reversion_index(self, agent_side: Side) -> int:
        """Index of the snapshot at which the impact divergence ends.

        Reversion happens at the first historical aggressive trade in the
        agent's direction (the book that absorbs it is the next snapshot), or
        at the first historical price move adverse to the agent, whichever
        comes first.
        """
        prev = self._hist_book
        for j in range(self._idx, len(self.events)):
            ev = self.events[j]
            if isinstance(ev, TradeEvent):
                if ev.aggressor is agent_side:
                    return self._next_snapshot_index(j + 1)
            else:
                if agent_side is Side.BUY:
                    adverse = ev.best_ask.price > prev.best_ask.price
                else:
                    adverse = ev.best_bid.price < prev.best_bid.price
                if adverse:
                    return j
                prev = ev
        return len(self.events)

    def _next_snapshot_index(self, start: int) -> int:
        for j in range(start, len(self.events)):
            if isinstance(self.events[j], BookSnapshot):
                return j
        return len(self.events)

    def _last_snapshot_from(self, start: int) -> BookSnapshot:
        for j in range(start, -1, -1):
            if isinstance(self.events[j], BookSnapshot):
                return self.events[j]
        return self._hist_book


def new_session(events: Sequence[MarketEvent], params: SimParams) -> SimSession:
    return SimSession(events, params)


def export_fills(fills: Iterable[Fill], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "kind", "side", "price", "size"])
        for f in fills:
            writer.writerow([f.timestamp, f.kind.value, f.side.value, f.price, f.size])
