"""Scheduling-function decisions: BDPC toward children, MSF toward the parent.

These are the pure policy parts. The network engine turns the returned
actions into 6P transactions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

ADD_RX = "AddRxCell"
DEL_RX = "DelRxCell"
ADD_TX = "AddTxCell"
DEL_TX = "DelTxCell"
NONE = "None"


@dataclass(slots=True)
class ChildStats:
    in_time: int = 0
    delayed: int = 0
    late_paqs: float = 0.0

    @property
    def total(self) -> int:
        return self.in_time + self.delayed

    def reset(self) -> None:
        self.in_time = 0
        self.delayed = 0
        self.late_paqs = 0.0


@dataclass(frozen=True, slots=True)
class SfThresholds:
    sf_max: float
    sf_min: float

    def __post_init__(self):
        if not (0 <= self.sf_min < self.sf_max <= 1):
            raise ValueError(f"need 0 <= sf_min < sf_max <= 1, got {self.sf_min}, {self.sf_max}")


@dataclass(slots=True)
class MsfCounters:
    elapsed: int = 0
    used: int = 0

    def reset(self) -> None:
        self.elapsed = 0
        self.used = 0


def bdpc_record_arrival(stats: ChildStats, deadline: int, current_asn: int, d2r: int) -> bool:
    """Classify one packet received from a child; returns True when in time."""
    time_left = deadline - current_asn
    on_time = time_left >= 0 and time_left >= d2r
    if on_time:
        stats.in_time += 1
    else:
        stats.delayed += 1
    stats.late_paqs = stats.delayed / (stats.delayed + stats.in_time)
    return on_time


def bdpc_action(late_paqs: float, thresholds: SfThresholds) -> str:
    """Threshold rule alone, before checking what cells exist."""
    if late_paqs >= thresholds.sf_max:
        return ADD_RX
    if 0 <= late_paqs <= thresholds.sf_min:
        return DEL_RX
    return NONE


def bdpc_evaluate(stats: ChildStats, thresholds: SfThresholds, rx_cells_toward_child: int,
                  keep_cells: int = 1) -> str:
    """Action for one child; never removes the last ``keep_cells`` cells."""
    action = bdpc_action(stats.late_paqs, thresholds)
    if action == DEL_RX and rx_cells_toward_child <= keep_cells:
        return NONE
    return action


def msf_adapt(
    counters: MsfCounters,
    num_tx_cells: int,
    window: int = 100,
    high_limit: float = 0.75,
    low_limit: float = 0.25,
) -> Optional[str]:
    """MSF cell-usage rule. Returns None until the window is full."""
    if counters.elapsed < window:
        return None
    usage = counters.used / counters.elapsed
    counters.reset()
    if usage > high_limit:
        return ADD_TX
    if usage < low_limit and num_tx_cells > 1:
        return DEL_TX
    return NONE
