"""Per-node TSCH schedule matrix (slot offsets x channel offsets)."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .core import BROADCAST

MINIMAL_COORD = (0, 0)


class Opt(enum.IntFlag):
    TX = 1
    RX = 2
    SHARED = 4


class ScheduleError(Exception):
    pass


class CoordinateOccupied(ScheduleError):
    pass


class SlotConflict(CoordinateOccupied):
    """Another cell already owns the radio at this slot offset."""


class OutOfBounds(ScheduleError):
    pass


class NotFound(ScheduleError):
    pass


class MinimalCellProtected(ScheduleError):
    pass


class NoFreeCells(ScheduleError):
    pass


@dataclass(frozen=True, slots=True)
class Cell:
    slot_offset: int
    channel_offset: int
    options: Opt
    peer: int

    @property
    def coord(self) -> tuple[int, int]:
        return (self.slot_offset, self.channel_offset)

    @property
    def is_minimal(self) -> bool:
        return self.coord == MINIMAL_COORD


def minimal_cell() -> Cell:
    return Cell(0, 0, Opt.TX | Opt.RX | Opt.SHARED, BROADCAST)


class ScheduleMatrix:
    """Cells held by one node, at most one per slot offset (single radio)."""

    def __init__(self, owner: int, slotframe_length: int = 101, num_channels: int = 16):
        self.owner = owner
        self.slotframe_length = slotframe_length
        self.num_channels = num_channels
        self._by_slot: dict[int, Cell] = {0: minimal_cell()}

    def __len__(self) -> int:
        return len(self._by_slot)

    def __iter__(self) -> Iterator[Cell]:
        return iter(sorted(self._by_slot.values(), key=lambda c: c.coord))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScheduleMatrix):
            return NotImplemented
        return self.owner == other.owner and self._by_slot == other._by_slot

    def copy(self) -> "ScheduleMatrix":
        dup = ScheduleMatrix(self.owner, self.slotframe_length, self.num_channels)
        dup._by_slot = dict(self._by_slot)
        return dup

    def _check_bounds(self, slot: int, channel: int) -> None:
        if not (0 <= slot < self.slotframe_length and 0 <= channel < self.num_channels):
            raise OutOfBounds(f"({slot}, {channel}) outside {self.slotframe_length}x{self.num_channels}")

    def install(self, cell: Cell) -> Cell:
        self._check_bounds(cell.slot_offset, cell.channel_offset)
        held = self._by_slot.get(cell.slot_offset)
        if held is not None:
            if held.channel_offset == cell.channel_offset:
                raise CoordinateOccupied(f"node {self.owner}: {cell.coord} already holds {held}")
            raise SlotConflict(f"node {self.owner}: slot {cell.slot_offset} already used by {held}")
        self._by_slot[cell.slot_offset] = cell
        return cell

    def remove(self, coord: tuple[int, int]) -> Cell:
        if tuple(coord) == MINIMAL_COORD:
            raise MinimalCellProtected("the minimal cell cannot be removed")
        slot, channel = coord
        held = self._by_slot.get(slot)
        if held is None or held.channel_offset != channel:
            raise NotFound(f"node {self.owner}: no cell at {tuple(coord)}")
        del self._by_slot[slot]
        return held

    def at(self, coord: tuple[int, int]) -> Optional[Cell]:
        held = self._by_slot.get(coord[0])
        if held is not None and held.channel_offset == coord[1]:
            return held
        return None

    def at_slot(self, slot_offset: int) -> Optional[Cell]:
        return self._by_slot.get(slot_offset)

    def active_cell_at(self, asn: int) -> Optional[Cell]:
        return self._by_slot.get(asn % self.slotframe_length)

    def negotiated(self, peer: Optional[int] = None, options: Optional[Opt] = None) -> list[Cell]:
        out = []
        for slot in sorted(self._by_slot):
            cell = self._by_slot[slot]
            if cell.is_minimal:
                continue
            if peer is not None and cell.peer != peer:
                continue
            if options is not None and cell.options != options:
                continue
            out.append(cell)
        return out

    def used_slots(self) -> set[int]:
        return set(self._by_slot)

    def free_slots(self, exclude: Iterable[int] = ()) -> list[int]:
        blocked = set(self._by_slot)
        blocked.update(exclude)
        return [s for s in range(1, self.slotframe_length) if s not in blocked]

    def candidate_cells(self, count: int, rng: random.Random, exclude: Iterable[int] = ()) -> list[tuple[int, int]]:
        """Up to ``count`` distinct free coordinates, uniformly drawn."""
        if count < 1:
            raise ValueError("count must be >= 1")
        slots = self.free_slots(exclude)
        if not slots:
            raise NoFreeCells(f"node {self.owner}: schedule saturated")
        channels = self.num_channels
        total = len(slots) * channels
        picks = rng.sample(range(total), min(count, total))
        return [(slots[i // channels], i % channels) for i in picks]

    def dump(self) -> str:
        """Text grid: one row per channel offset, one column per slot offset."""
        marks = {Opt.TX: "T", Opt.RX: "R"}
        rows = []
        for ch in range(self.num_channels):
            row = []
            for slot in range(self.slotframe_length):
                cell = self._by_slot.get(slot)
                if cell is None or cell.channel_offset != ch:
                    row.append(".")
                elif cell.is_minimal:
                    row.append("M")
                else:
                    row.append(marks.get(cell.options, "S"))
            rows.append("".join(row))
        return "\n".join(rows) + "\n"
