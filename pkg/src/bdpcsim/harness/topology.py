"""Group-chain topology: root, then groups that only hear adjacent groups."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..core import ROOT_ID, ConfigError
from ..mac import LinkModel


class InvalidTopologyConfig(ConfigError):
    pass


@dataclass
class Topology:
    groups: list[list[int]]
    links: LinkModel = field(default_factory=LinkModel)

    @property
    def node_ids(self) -> list[int]:
        return [ROOT_ID] + [n for g in self.groups for n in g]

    @property
    def num_nodes(self) -> int:
        return 1 + sum(len(g) for g in self.groups)

    def group_of(self, node_id: int) -> int:
        """1-based group index; 0 for the root."""
        if node_id == ROOT_ID:
            return 0
        for i, members in enumerate(self.groups, start=1):
            if node_id in members:
                return i
        raise KeyError(node_id)

    def edges(self) -> list[tuple[int, int]]:
        return sorted({tuple(sorted(k)) for k in self.links.pdr})

    def signature(self) -> tuple:
        return (tuple(tuple(g) for g in self.groups), tuple(self.edges()))


def build_topology(
    groups: int = 5,
    group_size: int = 3,
    pdr: float = 1.0,
    rssi: float = -10.0,
    links: Optional[list] = None,
) -> Topology:
    if groups < 1 or group_size < 1:
        raise InvalidTopologyConfig("groups and group_size must both be >= 1")
    members = [
        [1 + g * group_size + j for j in range(group_size)] for g in range(groups)
    ]
    topo = Topology(groups=members)
    if links is not None:
        known = set(topo.node_ids)
        for pair in links:
            a, b = pair
            if a not in known or b not in known or a == b:
                raise InvalidTopologyConfig(f"bad link {pair!r}")
            topo.links.add(a, b, pdr, rssi)
        return topo
    for n in members[0]:
        topo.links.add(ROOT_ID, n, pdr, rssi)
    for left, right in zip(members, members[1:]):
        for a in left:
            for b in right:
                topo.links.add(a, b, pdr, rssi)
    return topo
