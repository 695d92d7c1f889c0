"""6P two-way ADD/DELETE handshake between neighbour pairs.

An agent lives in every node. Requests and responses are plain message
objects carried by the MAC; the agent decides what to install or remove.
Cells granted by a responder stay *reserved* (not installed) until its
response frame is delivered, at which point both ends commit together, so
a lost or stale response never leaves half a cell pair behind.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Optional

from .schedule import Cell, NoFreeCells, Opt, ScheduleMatrix

ADD = "ADD"
DELETE = "DELETE"

RC_SUCCESS = "SUCCESS"
RC_RESET = "RESET"


class SixPError(Exception):
    pass


class Busy(SixPError):
    pass


class NoSuchCells(SixPError):
    pass


class TimeoutExpired(SixPError):
    pass


class State(enum.Enum):
    IDLE = "Idle"
    REQUEST_SENT = "RequestSent"
    DONE = "Done"
    FAILED = "Failed"


def mirror(options: Opt) -> Opt:
    if options == Opt.TX:
        return Opt.RX
    if options == Opt.RX:
        return Opt.TX
    raise ValueError(f"6P negotiates TX or RX cells, not {options!r}")


@dataclass(slots=True)
class SixPRequest:
    initiator: int
    responder: int
    command: str
    cell_options: Opt
    num_cells: int
    candidates: list
    seqnum: int
    token: tuple


@dataclass(slots=True)
class SixPResponse:
    initiator: int
    responder: int
    command: str
    code: str
    cells: list
    seqnum: int
    token: tuple
    # options the responder installs on commit
    responder_options: Opt = Opt.TX


@dataclass
class SixPTransaction:
    initiator: int
    responder: int
    command: str
    cell_options: Opt
    num_cells: int
    candidates: list
    seqnum: int
    timeout_asn: int
    token: tuple = (0, 0)
    state: State = State.IDLE
    started_asn: int = 0
    result: list = field(default_factory=list)


class SixPAgent:
    def __init__(
        self,
        owner: int,
        matrix: ScheduleMatrix,
        rng: random.Random,
        num_candidates: int = 5,
        timeout_slots: int = 303,
    ):
        self.owner = owner
        self.matrix = matrix
        self.rng = rng
        self.num_candidates = num_candidates
        self.timeout_slots = timeout_slots
        self.pending: dict[int, SixPTransaction] = {}
        self.out_seq: dict[int, int] = {}
        self.in_seq: dict[int, int] = {}
        # slot offset -> token of the transaction holding it
        self.reserved: dict[int, int] = {}
        # responder side: token -> response awaiting delivery
        self.granted: dict[tuple, SixPResponse] = {}
        self._counter = 0

    def _token(self) -> tuple:
        self._counter += 1
        return (self.owner, self._counter)

    # ------------------------------------------------------------------ helpers
    def busy(self, peer: int) -> bool:
        return peer in self.pending

    def _reserve(self, slots, token: tuple) -> None:
        for s in slots:
            self.reserved[s] = token

    def _release(self, token: tuple) -> None:
        for s in [s for s, t in self.reserved.items() if t == token]:
            del self.reserved[s]

    def _slot_free(self, slot: int) -> bool:
        return self.matrix.at_slot(slot) is None and slot not in self.reserved

    # --------------------------------------------------------------- initiator
    def initiate_add(self, peer: int, cell_options: Opt, num_cells: int, asn: int):
        if self.busy(peer):
            raise Busy(f"{self.owner}->{peer}: transaction in flight")
        mirror(cell_options)
        candidates = self.matrix.candidate_cells(
            max(self.num_candidates, num_cells), self.rng, exclude=self.reserved
        )
        txn = SixPTransaction(
            initiator=self.owner,
            responder=peer,
            command=ADD,
            cell_options=cell_options,
            num_cells=num_cells,
            candidates=candidates,
            seqnum=self.out_seq.get(peer, 0),
            timeout_asn=asn + self.timeout_slots,
            started_asn=asn,
            state=State.REQUEST_SENT,
            token=self._token(),
        )
        self._reserve({s for s, _ in candidates}, txn.token)
        self.pending[peer] = txn
        return txn, self._request_for(txn)

    def initiate_delete(self, peer: int, cell_options: Opt, num_cells: int, asn: int,
                        keep_slots=()):
        if self.busy(peer):
            raise Busy(f"{self.owner}->{peer}: transaction in flight")
        keep = set(keep_slots)
        shared = [
            c for c in self.matrix.negotiated(peer=peer, options=cell_options)
            if c.slot_offset not in self.reserved and c.slot_offset not in keep
        ]
        if len(shared) < num_cells or num_cells < 1:
            raise NoSuchCells(f"{self.owner}->{peer}: {len(shared)} {cell_options!r} cells, need {num_cells}")
        chosen = self.rng.sample(shared, num_cells)
        coords = sorted(c.coord for c in chosen)
        txn = SixPTransaction(
            initiator=self.owner,
            responder=peer,
            command=DELETE,
            cell_options=cell_options,
            num_cells=num_cells,
            candidates=coords,
            seqnum=self.out_seq.get(peer, 0),
            timeout_asn=asn + self.timeout_slots,
            started_asn=asn,
            state=State.REQUEST_SENT,
            token=self._token(),
        )
        self._reserve({s for s, _ in coords}, txn.token)
        self.pending[peer] = txn
        return txn, self._request_for(txn)

    @staticmethod
    def _request_for(txn: SixPTransaction) -> SixPRequest:
        return SixPRequest(
            initiator=txn.initiator,
            responder=txn.responder,
            command=txn.command,
            cell_options=txn.cell_options,
            num_cells=txn.num_cells,
            candidates=list(txn.candidates),
            seqnum=txn.seqnum,
            token=txn.token,
        )

    def handle_response(self, response: SixPResponse, asn: int) -> Optional[list[Cell]]:
        """Apply a delivered response. Returns the cells changed, or None if stale."""
        txn = self.pending.get(response.responder)
        if txn is None or txn.token != response.token or txn.state is not State.REQUEST_SENT:
            return None
        if asn > txn.timeout_asn:
            self._fail(txn)
            raise TimeoutExpired(f"{self.owner}->{txn.responder}: response after timeout")
        del self.pending[response.responder]
        self._release(txn.token)
        if response.code == RC_RESET:
            self.out_seq[response.responder] = 0
            txn.state = State.FAILED
            return []
        changed = []
        if txn.command == ADD:
            for slot, ch in response.cells:
                changed.append(self.matrix.install(Cell(slot, ch, txn.cell_options, txn.responder)))
        else:
            for coord in response.cells:
                cell = self.matrix.at(coord)
                if cell is not None and not cell.is_minimal:
                    changed.append(self.matrix.remove(coord))
        self.out_seq[response.responder] = txn.seqnum + 1
        txn.state = State.DONE
        txn.result = changed
        return changed

    def expire(self, peer: int, token: tuple) -> Optional[SixPTransaction]:
        txn = self.pending.get(peer)
        if txn is None or txn.token != token:
            return None
        self._fail(txn)
        return txn

    def _fail(self, txn: SixPTransaction) -> None:
        self.pending.pop(txn.responder, None)
        self._release(txn.token)
        txn.state = State.FAILED

    def clear_peer(self, peer: int) -> None:
        """Forget all pair state toward ``peer`` (6P CLEAR semantics)."""
        txn = self.pending.pop(peer, None)
        if txn is not None:
            self._release(txn.token)
            txn.state = State.FAILED
        for token in [t for t, r in self.granted.items() if r.initiator == peer]:
            self.abort_response(token)
        self.out_seq.pop(peer, None)
        self.in_seq.pop(peer, None)

    # --------------------------------------------------------------- responder
    def handle_request(self, request: SixPRequest) -> SixPResponse:
        peer = request.initiator
        # a fresh request from the same initiator supersedes any older grant
        for token in [t for t, r in self.granted.items() if r.initiator == peer]:
            self.abort_response(token)
        expected = self.in_seq.get(peer, 0)
        if request.seqnum != expected:
            self.in_seq[peer] = 0
            return SixPResponse(
                peer, self.owner, request.command, RC_RESET, [], request.seqnum, request.token
            )
        local_opts = mirror(request.cell_options)
        chosen = []
        if request.command == ADD:
            used = set()
            for slot, ch in request.candidates:
                if len(chosen) == request.num_cells:
                    break
                if slot in used or not self._slot_free(slot):
                    continue
                if not (0 < slot < self.matrix.slotframe_length and 0 <= ch < self.matrix.num_channels):
                    continue
                chosen.append((slot, ch))
                used.add(slot)
        else:
            for coord in request.candidates:
                cell = self.matrix.at(tuple(coord))
                if (
                    cell is not None
                    and cell.peer == peer
                    and cell.options == local_opts
                    and coord[0] not in self.reserved
                ):
                    chosen.append(tuple(coord))
        response = SixPResponse(
            peer, self.owner, request.command, RC_SUCCESS, chosen, request.seqnum,
            request.token, local_opts,
        )
        self._reserve({s for s, _ in chosen}, request.token)
        self.granted[request.token] = response
        return response

    def commit_response(self, token: tuple) -> list[Cell]:
        """Responder side, once its response reached the initiator."""
        response = self.granted.pop(token, None)
        if response is None:
            return []
        self._release(token)
        changed = []
        if response.code == RC_SUCCESS:
            if response.command == ADD:
                for slot, ch in response.cells:
                    changed.append(
                        self.matrix.install(Cell(slot, ch, response.responder_options, response.initiator))
                    )
            else:
                for coord in response.cells:
                    if self.matrix.at(coord) is not None:
                        changed.append(self.matrix.remove(coord))
            self.in_seq[response.initiator] = response.seqnum + 1
        return changed

    def abort_response(self, token: tuple) -> None:
        if self.granted.pop(token, None) is not None:
            self._release(token)


__all__ = [
    "ADD", "DELETE", "RC_RESET", "RC_SUCCESS", "Busy", "NoFreeCells", "NoSuchCells",
    "SixPAgent", "SixPRequest", "SixPResponse", "SixPTransaction", "State", "TimeoutExpired", "mirror",
]
