"""Root-side and network-wide measurements."""

from __future__ import annotations

import bisect
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

SECONDS_PER_YEAR = 365 * 24 * 3600


@dataclass(frozen=True, slots=True)
class PacketRecord:
    source: int
    origin_asn: int
    arrival_asn: int
    delay_slots: int
    on_time: bool

    def delay_s(self, slot_duration: float = 0.010) -> float:
        return self.delay_slots * slot_duration


@dataclass
class RootStats:
    in_time: dict = field(default_factory=lambda: defaultdict(int))
    delayed: dict = field(default_factory=lambda: defaultdict(int))
    generated: int = 0
    received: int = 0

    def late_at_root(self, source: int) -> float:
        total = self.in_time[source] + self.delayed[source]
        if total == 0:
            raise ValueError(f"no packets received from {source}")
        return self.delayed[source] / total


def record_root_arrival(stats: RootStats, source: int, origin_asn: int, deadline: int,
                        arrival_asn: int) -> PacketRecord:
    on_time = arrival_asn <= deadline
    if on_time:
        stats.in_time[source] += 1
    else:
        stats.delayed[source] += 1
    stats.received += 1
    return PacketRecord(source, origin_asn, arrival_asn, arrival_asn - origin_asn, on_time)


def pdr_e2e(stats: RootStats) -> float:
    if stats.generated <= 0:
        raise ValueError("no packets generated")
    return stats.received / stats.generated


def on_time_fraction(stats: RootStats) -> float:
    if stats.received <= 0:
        raise ValueError("no packets received")
    return sum(stats.in_time.values()) / stats.received


def late_at_root_aggregate(stats: RootStats) -> float:
    return sum(stats.delayed.values()) / stats.received


def predicted_on_time(sf_max: float) -> float:
    if not 0 <= sf_max <= 1:
        raise ValueError("sf_max must lie in [0, 1]")
    return 1.0 - sf_max


def root_stats_from_records(records: Iterable[PacketRecord], generated: int = 0) -> RootStats:
    stats = RootStats(generated=generated)
    for r in records:
        if r.on_time:
            stats.in_time[r.source] += 1
        else:
            stats.delayed[r.source] += 1
        stats.received += 1
    return stats


@dataclass
class DelayDistribution:
    delays_s: list
    edges: list
    counts: list
    group_mean: dict
    group_std: dict

    def cdf(self, x: float) -> float:
        """Fraction of delays <= x."""
        return bisect.bisect_right(self.delays_s, x + 1e-12) / len(self.delays_s)


def delay_distribution(
    records: Sequence[PacketRecord],
    slot_duration: float = 0.010,
    group_of: Optional[Mapping[int, int]] = None,
    bin_width: float = 0.05,
) -> DelayDistribution:
    if not records:
        raise ValueError("need at least one record")
    delays = sorted(r.delay_slots * slot_duration for r in records)
    top = delays[-1]
    nbins = max(1, int(math.floor(top / bin_width)) + 1)
    edges = [i * bin_width for i in range(nbins + 1)]
    counts = [0] * nbins
    for d in delays:
        counts[min(nbins - 1, int(d / bin_width + 1e-9))] += 1
    per_group = defaultdict(list)
    for r in records:
        g = group_of[r.source] if group_of is not None else r.source
        per_group[g].append(r.delay_slots * slot_duration)
    means = {g: statistics.fmean(v) for g, v in sorted(per_group.items())}
    stds = {g: (statistics.pstdev(v) if len(v) > 1 else 0.0) for g, v in sorted(per_group.items())}
    return DelayDistribution(delays, edges, counts, means, stds)


def cell_count_series(events: Iterable[tuple], num_slotframes: int, slotframe_length: int,
                      bin_slotframes: int = 50, initial: int = 0) -> list[float]:
    """Mean network-wide negotiated TX-cell count per bin, replayed from the event log.

    Each slotframe contributes the count standing at its last slot.
    """
    deltas = defaultdict(int)
    for ev in events:
        asn, kind, _node, details = ev[0], ev[1], ev[2], ev[3]
        if kind not in ("CELL_ADD", "CELL_DEL") or not details.startswith("TX"):
            continue
        deltas[asn // slotframe_length] += 1 if kind == "CELL_ADD" else -1
    nbins = math.ceil(num_slotframes / bin_slotframes)
    sums = [0.0] * nbins
    sizes = [0] * nbins
    level = initial
    for sf in range(num_slotframes):
        level += deltas.get(sf, 0)
        sums[sf // bin_slotframes] += level
        sizes[sf // bin_slotframes] += 1
    return [s / n for s, n in zip(sums, sizes)]


def lifetime_years(meter, charges: Mapping[str, float], battery_mah: float,
                   slot_duration: float = 0.010) -> float:
    slots = meter.total_slots
    if slots <= 0:
        raise ValueError("meter has no elapsed slots")
    current_a = meter.charge_uc(charges) * 1e-6 / (slots * slot_duration)
    battery_c = battery_mah * 3.6
    return battery_c / current_a / SECONDS_PER_YEAR


@dataclass
class LifetimeReport:
    per_node: dict
    per_group: dict
    network: float


def lifetime_estimate(meters: Mapping[int, object], charges: Mapping[str, float], battery_mah: float,
                      slot_duration: float = 0.010,
                      group_of: Optional[Mapping[int, int]] = None,
                      exclude: Iterable[int] = ()) -> LifetimeReport:
    """Per-node years of battery; the network lives as long as its weakest node.

    Nodes in ``exclude`` (typically the mains-powered root) are still reported
    per node and per group but do not bound the network lifetime.
    """
    per_node = {n: lifetime_years(m, charges, battery_mah, slot_duration) for n, m in meters.items()}
    per_group = defaultdict(list)
    for n, years in per_node.items():
        per_group[group_of[n] if group_of is not None else n].append(years)
    groups = {g: statistics.fmean(v) for g, v in sorted(per_group.items())}
    skip = set(exclude)
    bounded = [y for n, y in per_node.items() if n not in skip]
    if not bounded:
        raise ValueError("every node is excluded from the lifetime bound")
    return LifetimeReport(per_node, groups, min(bounded))


def converged_window(num_slotframes: int, slotframe_length: int, converge_slotframe: int,
                     max_delay_slots: int) -> tuple[int, int]:
    """ASN range [lo, hi) of packet origins that enter converged statistics.

    Packets born in the last 2 x maxDelay may still be in flight when the run
    stops, so they are left out of both numerator and denominator.
    """
    lo = min(converge_slotframe, num_slotframes) * slotframe_length
    hi = num_slotframes * slotframe_length - 2 * max_delay_slots
    return lo, max(lo, hi)


def window_records(records: Iterable[PacketRecord], lo: int, hi: int) -> list[PacketRecord]:
    return [r for r in records if lo <= r.origin_asn < hi]


def pdr_in_window(generated: Iterable[tuple[int, int]], records: Iterable[PacketRecord],
                  lo: int, hi: int) -> float:
    """Delivered fraction of the packets generated in [lo, hi)."""
    born = [(s, o) for s, o in generated if lo <= o < hi]
    if not born:
        raise ValueError("no packets generated in the window")
    got = {(r.source, r.origin_asn) for r in records if lo <= r.origin_asn < hi}
    return sum(1 for key in born if key in got) / len(born)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    if len(values) == 1:
        return float(values[0]), 0.0
    return statistics.fmean(values), statistics.stdev(values)
