"""TSCH MAC building blocks: frames, queues, links, shared-cell contention, energy."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .core import BROADCAST

DATA = "data"
DIO = "dio"
SIXP = "6p"

SLOT_STATES = (
    "tx_data_rx_ack",
    "rx_data_tx_ack",
    "idle_listen",
    "sleep",
    "tx_broadcast",
    "rx_broadcast",
)


@dataclass(slots=True, eq=False)
class Frame:
    kind: str
    # None routes to whatever the preferred parent is at transmit time
    dst: Optional[int]
    payload: Any
    enqueued_asn: int = 0
    retries: int = 0

    @property
    def is_control(self) -> bool:
        return self.kind != DATA

    @property
    def is_broadcast(self) -> bool:
        return self.dst == BROADCAST


class TxQueue:
    """Bounded transmit queue; control frames leave before data frames.

    Data may use ``capacity`` entries. Control frames may additionally use
    ``control_reserve`` extra entries, so negotiation survives a full data
    queue.
    """

    def __init__(self, capacity: int = 10, control_reserve: int = 2):
        self.capacity = capacity
        self.control_reserve = control_reserve
        self.control: deque[Frame] = deque()
        self.data: deque[Frame] = deque()

    def __len__(self) -> int:
        return len(self.control) + len(self.data)

    def enqueue(self, frame: Frame) -> bool:
        total = len(self.control) + len(self.data)
        if total >= self.capacity + self.control_reserve:
            return False
        if frame.kind == DATA:
            if len(self.data) >= self.capacity:
                return False
            self.data.append(frame)
        else:
            self.control.append(frame)
        return True

    def for_peer(self, peer: int, parent: Optional[int]) -> Optional[Frame]:
        """Head-of-line frame that may leave on a dedicated cell toward ``peer``."""
        for frame in self.control:
            if frame.dst == peer:
                return frame
        if self.data and peer == parent:
            return self.data[0]
        return None

    def for_shared(self) -> Optional[Frame]:
        """Next frame for the minimal cell: a pending broadcast first, else FIFO control."""
        for frame in self.control:
            if frame.dst == BROADCAST:
                return frame
        if self.control:
            return self.control[0]
        return None

    def remove(self, frame: Frame) -> None:
        if frame.kind == DATA:
            self.data.remove(frame)
        else:
            self.control.remove(frame)

    def discard(self, predicate) -> list[Frame]:
        gone = [f for f in self.control if predicate(f)]
        for f in gone:
            self.control.remove(f)
        return gone


class LinkModel:
    """Binary connectivity with a per-direction PDR and a recorded RSSI."""

    def __init__(self):
        self.pdr: dict[tuple[int, int], float] = {}
        self.rssi: dict[tuple[int, int], float] = {}
        self.adjacency: dict[int, set[int]] = {}

    def add(self, a: int, b: int, pdr: float = 1.0, rssi: float = -10.0) -> None:
        for x, y in ((a, b), (b, a)):
            self.pdr[(x, y)] = pdr
            self.rssi[(x, y)] = rssi
            self.adjacency.setdefault(x, set()).add(y)

    def linked(self, a: int, b: int) -> bool:
        return (a, b) in self.pdr

    def neighbors(self, node: int) -> set[int]:
        return self.adjacency.get(node, set())


def contend_minimal_cell(
    attempts: Mapping[int, int], adjacency: Mapping[int, Iterable[int]]
) -> dict[int, frozenset]:
    """Resolve one minimal-cell slot.

    ``attempts`` maps transmitter -> destination (BROADCAST for broadcast).
    A transmission fails for everyone when any intended receiver is itself
    transmitting or hears a second transmitter; otherwise it reaches all
    intended receivers. Returns transmitter -> receivers (empty on collision).
    """
    talking = set(attempts)
    out = {}
    for tx, dst in attempts.items():
        receivers = set(adjacency.get(tx, ())) if dst == BROADCAST else {dst}
        if dst != BROADCAST and dst not in set(adjacency.get(tx, ())):
            out[tx] = frozenset()
            continue
        clash = False
        for rx in receivers:
            if rx in talking:
                clash = True
                break
            for other in adjacency.get(rx, ()):
                if other != tx and other in talking:
                    clash = True
                    break
            if clash:
                break
        out[tx] = frozenset() if clash else frozenset(receivers)
    return out


@dataclass
class EnergyMeter:
    counts: dict = field(default_factory=lambda: {s: 0 for s in SLOT_STATES})

    def account(self, state: str, slots: int = 1) -> None:
        if state not in self.counts:
            raise KeyError(f"unknown radio state {state!r}")
        self.counts[state] += slots

    @property
    def total_slots(self) -> int:
        return sum(self.counts.values())

    def charge_uc(self, charges: Mapping[str, float]) -> float:
        return sum(self.counts[s] * charges[s] for s in SLOT_STATES)
