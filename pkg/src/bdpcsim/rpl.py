"""Minimal RPL: rank-based parent choice and delay-to-root propagation."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .core import DioMessage


class NoParentAvailable(Exception):
    pass


@dataclass(slots=True)
class Neighbor:
    node_id: int
    last_rank: int
    last_d2r_slots: int
    last_dio_asn: int


class RplState:
    """DB_dio of one node plus its neighbour table."""

    def __init__(
        self,
        node_id: int,
        is_root: bool = False,
        rank_root: int = 256,
        rank_increase: int = 256,
        hysteresis: int = 192,
    ):
        self.node_id = node_id
        self.is_root = is_root
        self.rank_root = rank_root
        self.rank_increase = rank_increase
        self.hysteresis = hysteresis
        self.neighbors: dict[int, Neighbor] = {}
        self.preferred_parent: Optional[int] = None
        self.my_rank: Optional[int] = rank_root if is_root else None
        # None until a DIO from the preferred parent has been heard
        self.d2r_slots: Optional[int] = 0 if is_root else None

    @property
    def joined(self) -> bool:
        return self.is_root or self.preferred_parent is not None

    def emit_dio(self, current_asn: int) -> Optional[DioMessage]:
        if not self.joined:
            return None
        return DioMessage(
            sender=self.node_id,
            rank=self.my_rank,
            d2r_slots=self.d2r_slots if self.d2r_slots is not None else 0,
            creation_asn=current_asn,
        )

    def process_dio(self, dio: DioMessage, receive_asn: int) -> tuple[Optional[int], Optional[int]]:
        """Digest a received DIO. Returns (old_parent, new_parent) on a switch, else (p, p)."""
        if self.is_root:
            return None, None
        self.neighbors[dio.sender] = Neighbor(dio.sender, dio.rank, dio.d2r_slots, receive_asn)
        if dio.sender == self.preferred_parent:
            # timing information is only trusted from the parent
            self.d2r_slots = dio.d2r_slots + (receive_asn - dio.creation_asn)
            self.my_rank = dio.rank + self.rank_increase
        old = self.preferred_parent
        try:
            new = self.select_parent()
        except NoParentAvailable:
            return old, old
        if new != old and new == dio.sender:
            self.d2r_slots = dio.d2r_slots + (receive_asn - dio.creation_asn)
        return old, new

    def select_parent(self) -> int:
        if self.is_root:
            raise NoParentAvailable("the root has no parent")
        if not self.neighbors:
            raise NoParentAvailable(f"node {self.node_id} has no neighbours")
        best = min(self.neighbors.values(), key=lambda n: (n.last_rank, n.node_id))
        current = self.neighbors.get(self.preferred_parent) if self.preferred_parent is not None else None
        if current is None:
            # never parent a node that ranks at or below us
            if self.my_rank is not None and best.last_rank >= self.my_rank:
                raise NoParentAvailable(f"node {self.node_id}: no neighbour ranks below {self.my_rank}")
            self._adopt(best)
        elif best.node_id != current.node_id and best.last_rank <= current.last_rank - self.hysteresis:
            self._adopt(best)
        else:
            self.my_rank = current.last_rank + self.rank_increase
        return self.preferred_parent

    def _adopt(self, neighbor: Neighbor) -> None:
        if neighbor.node_id != self.preferred_parent:
            self.d2r_slots = None
        self.preferred_parent = neighbor.node_id
        self.my_rank = neighbor.last_rank + self.rank_increase


def next_dio_asn(
    last_emission: Optional[int],
    join_asn: Optional[int],
    period_slots: int,
    rng: random.Random,
    random_phase: bool = True,
) -> Optional[int]:
    """ASN of the next DIO of a node, or None while it is unjoined.

    Emissions are one period apart with a +-1 slot jitter. The very first one
    is placed one period after joining, or at a random point of the first
    period when ``random_phase`` is set (spreads neighbours over the
    slotframe so that DIOs of nodes that joined together do not collide).
    """
    if join_asn is None:
        return None
    if last_emission is None:
        if random_phase:
            return join_asn + 1 + rng.randrange(period_slots)
        base = join_asn + period_slots
    else:
        base = last_emission + period_slots
    return base + rng.choice((-1, 0, 1))
