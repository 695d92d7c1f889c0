"""Time base, identities, packet/message types and deadline arithmetic."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

ROOT_ID = 0
BROADCAST = -1
MAX_PAYLOAD_BYTES = 104


class ConfigError(ValueError):
    pass


def asn_to_seconds(asn: int, slot_duration: float = 0.010) -> float:
    return asn * slot_duration


def slots_in(seconds: float, slot_duration: float) -> int:
    """Whole timeslots contained in ``seconds`` (truncated toward zero).

    A tiny epsilon absorbs binary representation error so that 1.5 / 0.01
    yields 150 and not 149.
    """
    return int(seconds / slot_duration + 1e-9)


def compute_deadline(origin_time: int, max_delay: float, slot_duration: float) -> int:
    """Absolute deadline ASN stamped into a packet at creation."""
    if max_delay < 0 or slot_duration <= 0:
        raise ValueError("max_delay must be >= 0 and slot_duration > 0")
    return origin_time + slots_in(max_delay, slot_duration)


def compute_time_left(deadline: int, current_time: int) -> int:
    """Remaining budget in slots; negative once the deadline has passed."""
    return deadline - current_time


@dataclass(slots=True)
class DataPacket:
    source: int
    prev_hop_mac: int
    origin_time: int
    deadline: int
    sequence: int
    payload_bytes: int = 90
    destination: int = ROOT_ID

    def __post_init__(self) -> None:
        if self.deadline < self.origin_time:
            raise ValueError("deadline precedes origin time")
        if self.payload_bytes > MAX_PAYLOAD_BYTES:
            raise ValueError(f"payload {self.payload_bytes} B would need fragmentation")


@dataclass(frozen=True, slots=True)
class DioMessage:
    sender: int
    rank: int
    d2r_slots: int
    creation_asn: int


DEFAULT_CHARGES_UC = {
    "tx_data_rx_ack": 54.5,
    "rx_data_tx_ack": 61.9,
    "idle_listen": 40.1,
    "tx_broadcast": 49.5,
    "rx_broadcast": 53.1,
    "sleep": 0.85,
}


@dataclass
class SimConfig:
    """All knobs of one simulation run. Defaults follow the reference setup."""

    slotframe_length: int = 101
    num_channels: int = 16
    slot_duration: float = 0.010
    max_delay: float = 1.5
    num_slotframes: int = 10000
    seed: int = 0

    # scheduling function: "msf" or "bdpc" (bdpc runs alongside msf)
    sf: str = "bdpc"
    sf_max: float = 0.1
    sf_min: float = 0.05
    prehop_add_cell_count: int = 1
    reset_counters_on_action: bool = False

    packet_period: float = 30.0
    packet_period_std: float = 0.223
    payload_bytes: int = 90

    tx_queue_size: int = 10
    control_queue_reserve: int = 2
    max_retries: int = 5
    backoff_max: int = 4
    # also back off after a successful shared-cell send while more frames wait
    backoff_after_success: bool = False

    groups: int = 5
    group_size: int = 3
    pdr_link: float = 1.0
    rssi_link: float = -10.0
    # explicit adjacency override: list of [a, b] pairs, root is node 0
    links: Optional[list] = None

    rank_root: int = 256
    rank_increase: int = 256
    parent_switch_hysteresis: int = 192
    # the reference period of 3 slotframes saturates the single minimal cell
    dio_period_slotframes: int = 60
    dio_random_phase: bool = True

    sixp_candidates: int = 5
    sixp_timeout_slotframes: int = 10

    msf_window: int = 100
    msf_high_limit: float = 0.75
    msf_low_limit: float = 0.25
    # leave alone the TX cells a parent granted through BDPC (stops MSF undoing them,
    # at the price of BDPC filling the schedule)
    msf_spares_granted: bool = False

    battery_mah: float = 2821.5
    charges_uc: dict = field(default_factory=lambda: dict(DEFAULT_CHARGES_UC))

    converge_slotframe: int = 2000
    cell_bin_slotframes: int = 50
    latepaqs_sample_slotframes: int = 1
    check_invariants: bool = False

    def validate(self) -> "SimConfig":
        if self.sf not in ("msf", "bdpc"):
            raise ConfigError(f"unknown scheduling function {self.sf!r}")
        if not (0 <= self.sf_min < self.sf_max <= 1):
            raise ConfigError("thresholds must satisfy 0 <= sf_min < sf_max <= 1")
        if self.slotframe_length < 2:
            raise ConfigError("slotframe_length must be >= 2")
        if self.num_channels < 1:
            raise ConfigError("num_channels must be >= 1")
        if self.slot_duration <= 0:
            raise ConfigError("slot_duration must be positive")
        if self.max_delay < 0:
            raise ConfigError("max_delay must be non-negative")
        if self.payload_bytes > MAX_PAYLOAD_BYTES:
            raise ConfigError("payload_bytes exceeds the unfragmented limit")
        if self.groups < 1 or self.group_size < 1:
            raise ConfigError("groups and group_size must be >= 1")
        if not 0.0 <= self.pdr_link <= 1.0:
            raise ConfigError("pdr_link must lie in [0, 1]")
        if self.num_slotframes < 1:
            raise ConfigError("num_slotframes must be >= 1")
        if self.dio_period_slotframes < 1 or self.sixp_timeout_slotframes < 1:
            raise ConfigError("periods must be >= 1 slotframe")
        if self.tx_queue_size < 1 or self.control_queue_reserve < 0:
            raise ConfigError("tx_queue_size must be >= 1 and control_queue_reserve >= 0")
        if self.max_retries < 0 or self.backoff_max < 1:
            raise ConfigError("max_retries must be >= 0 and backoff_max >= 1")
        if self.prehop_add_cell_count < 1 or self.sixp_candidates < 1:
            raise ConfigError("cell counts must be >= 1")
        missing = set(DEFAULT_CHARGES_UC) - set(self.charges_uc)
        if missing:
            raise ConfigError(f"charge table lacks {sorted(missing)}")
        return self

    @property
    def max_delay_slots(self) -> int:
        return slots_in(self.max_delay, self.slot_duration)

    @property
    def total_slots(self) -> int:
        return self.num_slotframes * self.slotframe_length

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()


PRESETS = {
    "msf": {"sf": "msf"},
    "bdpc1": {"sf": "bdpc", "sf_max": 0.1, "sf_min": 0.05},
    "bdpc2": {"sf": "bdpc", "sf_max": 0.0001, "sf_min": 1e-05},
}


def preset_config(name: str, **overrides) -> SimConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SimConfig.from_dict({**SimConfig().to_dict(), **base})
