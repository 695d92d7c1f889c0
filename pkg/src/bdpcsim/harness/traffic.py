"""Periodic application traffic with Gaussian jitter on the period."""

from __future__ import annotations

import random

from ..core import DataPacket, compute_deadline


class TrafficSource:
    def __init__(self, node: int, period: float = 30.0, period_std: float = 0.223,
                 payload: int = 90, slot_duration: float = 0.010, max_delay: float = 1.5):
        self.node = node
        self.period = period
        self.period_std = period_std
        self.payload = payload
        self.slot_duration = slot_duration
        self.max_delay = max_delay
        self.sequence = 0

    def next_gap(self, rng: random.Random) -> int:
        if self.period_std > 0:
            seconds = rng.gauss(self.period, self.period_std)
        else:
            seconds = self.period
        return max(1, round(seconds / self.slot_duration))

    def first_emission(self, join_asn: int, rng: random.Random) -> int:
        # spread sources over one period so that they do not start in lockstep
        return join_asn + 1 + rng.randrange(max(1, round(self.period / self.slot_duration)))

    def make_packet(self, emit_asn: int) -> DataPacket:
        self.sequence += 1
        return DataPacket(
            source=self.node,
            prev_hop_mac=self.node,
            origin_time=emit_asn,
            deadline=compute_deadline(emit_asn, self.max_delay, self.slot_duration),
            sequence=self.sequence,
            payload_bytes=self.payload,
        )


def generate_traffic(source: TrafficSource, rng: random.Random, start_asn: int, end_asn: int):
    """Yield (emit_asn, packet) pairs of one source in [start_asn, end_asn)."""
    asn = start_asn
    while asn < end_asn:
        yield asn, source.make_packet(asn)
        asn += source.next_gap(rng)
