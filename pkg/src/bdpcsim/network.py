"""The TSCH slot engine: every node, every timeslot, one seeded generator."""

from __future__ import annotations

import heapq
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from . import sixp as sixp_mod
from .core import BROADCAST, ROOT_ID, DataPacket, SimConfig
from .harness.topology import Topology, build_topology
from .harness.traffic import TrafficSource
from .mac import DATA, DIO, SIXP, EnergyMeter, Frame, TxQueue, contend_minimal_cell
from .metrics import PacketRecord, RootStats, record_root_arrival
from .rpl import RplState, next_dio_asn
from .schedule import Cell, NoFreeCells, Opt, ScheduleMatrix
from .sf import (ADD_RX, ADD_TX, DEL_RX, DEL_TX, ChildStats, MsfCounters, SfThresholds,
                 bdpc_evaluate, bdpc_record_arrival, msf_adapt)
from .sixp import SixPAgent, SixPRequest, SixPResponse

log = logging.getLogger(__name__)

EV_GEN = 0
EV_DIO = 1
EV_TIMEOUT = 2
EV_RESP_EXPIRY = 3


def occurrences(slot: int, start: int, end: int, length: int) -> int:
    """Number of ASNs in [start, end) whose slot offset is ``slot``."""
    def upto(x):
        return (x - slot + length - 1) // length if x > slot else 0
    return upto(end) - upto(start) if end > start else 0


class Node:
    def __init__(self, node_id: int, group: int, cfg: SimConfig, rng: random.Random):
        self.id = node_id
        self.group = group
        self.is_root = node_id == ROOT_ID
        L = cfg.slotframe_length
        self.matrix = ScheduleMatrix(node_id, L, cfg.num_channels)
        self.sixp = SixPAgent(node_id, self.matrix, rng, cfg.sixp_candidates,
                              cfg.sixp_timeout_slotframes * L)
        self.rpl = RplState(node_id, self.is_root, cfg.rank_root, cfg.rank_increase,
                            cfg.parent_switch_hysteresis)
        self.queue = TxQueue(cfg.tx_queue_size, cfg.control_queue_reserve)
        self.traffic: Optional[TrafficSource] = None
        self.child_stats: dict[int, ChildStats] = {}
        self.dirty_children: set[int] = set()
        self.msf = MsfCounters()
        self.join_asn: Optional[int] = None
        self.last_dio: Optional[int] = None
        self.backoff = 0
        # former parents that still hold TX cells from this node
        self.cleanup: list[int] = []
        # slot offsets of TX cells installed here on a parent's BDPC request
        self.granted: set[int] = set()
        self.request_frames: dict[tuple, Frame] = {}
        # token -> which policy started the transaction ("msf", "bdpc", "cleanup")
        self.txn_origin: dict[tuple, str] = {}
        # negotiated cells per (peer, options)
        self.cell_count: dict[tuple, int] = defaultdict(int)
        # data-packet conservation
        self.generated = 0
        self.packets_in = 0
        self.packets_out = 0
        self.dropped = 0
        # radio bookkeeping
        self.cell_since: dict[int, int] = {}
        self.tx_occ = 0
        self.rx_occ = 0
        self.tx_dedicated = 0
        self.rx_dedicated = 0
        self.tx_min_unicast = 0
        self.rx_min_unicast = 0
        self.tx_min_bcast = 0
        self.rx_min_bcast = 0

    @property
    def parent(self) -> Optional[int]:
        return self.rpl.preferred_parent


@dataclass
class RunResult:
    config: SimConfig
    topology: Topology
    records: list
    generated: list
    root_stats: RootStats
    energy: dict
    events: list
    late_rows: list
    late_final: dict
    late_at_converge: dict
    cell_per_slotframe: list
    d2r_mean: dict
    d2r_samples: dict
    drops: dict
    counters: dict
    violations: dict
    queued_at_end: list = field(default_factory=list)

    @property
    def group_of(self) -> dict:
        return {n: self.topology.group_of(n) for n in self.topology.node_ids}


class Network:
    def __init__(self, cfg: SimConfig, topology: Optional[Topology] = None,
                 rng: Optional[random.Random] = None):
        self.cfg = cfg.validate()
        self.L = cfg.slotframe_length
        self.rng = rng if rng is not None else random.Random(cfg.seed)
        self.topology = topology or build_topology(cfg.groups, cfg.group_size, cfg.pdr_link,
                                                   cfg.rssi_link, cfg.links)
        self.links = self.topology.links
        self.adjacency = {n: frozenset(self.links.neighbors(n)) for n in self.topology.node_ids}
        self.nodes: dict[int, Node] = {
            n: Node(n, self.topology.group_of(n), cfg, self.rng) for n in self.topology.node_ids
        }
        self.node_list = [self.nodes[n] for n in sorted(self.nodes)]
        self.root = self.nodes[ROOT_ID]
        self.bdpc = cfg.sf == "bdpc"
        self.thresholds = SfThresholds(cfg.sf_max, cfg.sf_min)
        self.tx_at: list[list] = [[] for _ in range(self.L)]
        self.heap: list = []
        self._seq = 0
        self.asn = 0
        self.events: list[tuple] = []
        self.root_stats = RootStats()
        self.records: list[PacketRecord] = []
        self.generated: list[tuple[int, int]] = []
        self.late_rows: list[tuple] = []
        self.late_at_converge: dict = {}
        self.cell_per_slotframe: list[int] = []
        self.tx_cells_total = 0
        self.d2r_sum = defaultdict(int)
        self.d2r_n = defaultdict(int)
        self.d2r_samples: dict[int, list] = defaultdict(list)
        self.drops = defaultdict(int)
        self.counters = defaultdict(int)
        self.violations = defaultdict(int)
        self.finished = False

    # ------------------------------------------------------------------ events
    def _push(self, asn: int, kind: int, *args) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (asn, self._seq, kind, args))

    def log(self, kind: str, node: int, details: str = "") -> None:
        self.events.append((self.asn, kind, node, details))

    # ---------------------------------------------------------------- running
    def start(self) -> None:
        self._join(self.root, 0)

    def run(self) -> RunResult:
        self.start()
        self.run_until(self.cfg.total_slots)
        return self.finish()

    def run_until(self, end_asn: int) -> None:
        heap = self.heap
        L = self.L
        tx_at = self.tx_at
        last = L - 1
        for asn in range(self.asn, end_asn):
            self.asn = asn
            while heap and heap[0][0] <= asn:
                _, _, kind, args = heapq.heappop(heap)
                self._dispatch(kind, args, asn)
            off = asn % L
            if off == 0:
                self.minimal_slot(asn)
            elif tx_at[off]:
                self.dedicated_slot(asn, off)
            if off == last:
                self.end_of_slotframe(asn)
        self.asn = end_asn

    def run_slot(self, asn: int) -> None:
        """Advance exactly one slot (helper for step-by-step tests)."""
        self.run_until(asn + 1)

    def _dispatch(self, kind: int, args: tuple, asn: int) -> None:
        if kind == EV_GEN:
            self._generate(self.nodes[args[0]], asn)
        elif kind == EV_DIO:
            self._emit_dio(self.nodes[args[0]], asn)
        elif kind == EV_TIMEOUT:
            node_id, peer, token = args
            self._timeout(self.nodes[node_id], peer, token)
        elif kind == EV_RESP_EXPIRY:
            self._response_expired(self.nodes[args[0]], args[1])

    # ------------------------------------------------------------- traffic
    def _generate(self, node: Node, asn: int) -> None:
        src = node.traffic
        pkt = src.make_packet(asn)
        self.inject(node, pkt, asn)
        self._push(asn + src.next_gap(self.rng), EV_GEN, node.id)

    def inject(self, node: Node, pkt: DataPacket, asn: int) -> bool:
        node.generated += 1
        self.root_stats.generated += 1
        self.generated.append((pkt.source, pkt.origin_time))
        return self._enqueue_data(node, pkt, asn)

    def _enqueue_data(self, node: Node, pkt: DataPacket, asn: int) -> bool:
        if node.queue.enqueue(Frame(DATA, None, pkt, asn)):
            return True
        node.dropped += 1
        self.drops["queue"] += 1
        self.log("QUEUE_DROP", node.id, f"src={pkt.source} seq={pkt.sequence}")
        return False

    # ----------------------------------------------------------------- RPL
    def _join(self, node: Node, asn: int) -> None:
        node.join_asn = asn
        period = self.cfg.dio_period_slotframes * self.L
        first = next_dio_asn(None, asn, period, self.rng, self.cfg.dio_random_phase)
        self._push(first, EV_DIO, node.id)
        if node.is_root:
            return
        self.log("JOIN", node.id, f"parent={node.parent}")
        cfg = self.cfg
        node.traffic = TrafficSource(node.id, cfg.packet_period, cfg.packet_period_std,
                                     cfg.payload_bytes, cfg.slot_duration, cfg.max_delay)
        self._push(node.traffic.first_emission(asn, self.rng), EV_GEN, node.id)
        self._ensure_parent_cell(node, asn)

    def _emit_dio(self, node: Node, asn: int) -> None:
        dio = node.rpl.emit_dio(asn)
        period = self.cfg.dio_period_slotframes * self.L
        node.last_dio = asn
        self._push(next_dio_asn(asn, node.join_asn, period, self.rng), EV_DIO, node.id)
        if dio is None:
            return
        # a fresher DIO supersedes one still waiting for the minimal cell
        node.queue.discard(lambda f: f.kind == DIO)
        if not node.queue.enqueue(Frame(DIO, BROADCAST, dio, asn)):
            self.drops["control_queue"] += 1

    def _on_dio(self, node: Node, dio, asn: int) -> None:
        was_joined = node.rpl.joined
        old, new = node.rpl.process_dio(dio, asn)
        if not was_joined:
            if node.rpl.joined:
                self._join(node, asn)
            return
        if old != new:
            self._parent_switch(node, old, new, asn)

    def _parent_switch(self, node: Node, old: Optional[int], new: int, asn: int) -> None:
        self.log("PARENT_CHANGE", node.id, f"old={old} new={new}")
        self.counters["parent_changes"] += 1
        if not self.dodag_acyclic():
            self.violations["dodag_cycle"] += 1
        node.msf.reset()
        if old is not None and old not in node.cleanup:
            node.cleanup.append(old)
        self._ensure_parent_cell(node, asn)

    def dodag_acyclic(self) -> bool:
        limit = len(self.nodes)
        for node in self.node_list:
            if node.is_root or not node.rpl.joined:
                continue
            cur, steps = node, 0
            while not cur.is_root:
                nxt = cur.parent
                if nxt is None:
                    break
                cur = self.nodes[nxt]
                steps += 1
                if steps > limit:
                    return False
        return True

    # ----------------------------------------------------------------- 6P
    def _start(self, node: Node, peer: int, command: str, opts: Opt, num: int, asn: int,
               why: str, keep=()) -> bool:
        if node.sixp.busy(peer):
            self.counters["sixp_busy"] += 1
            return False
        try:
            if command == sixp_mod.ADD:
                txn, req = node.sixp.initiate_add(peer, opts, num, asn)
            else:
                txn, req = node.sixp.initiate_delete(peer, opts, num, asn, keep)
        except NoFreeCells:
            self.counters["sixp_no_free_cells"] += 1
            self.log("SIXP", node.id, f"peer={peer} cmd={command} opt={opts.name} n={num} outcome=NoFreeCells by={why}")
            return False
        except sixp_mod.NoSuchCells:
            self.counters["sixp_no_such_cells"] += 1
            return False
        frame = Frame(SIXP, peer, req, asn)
        if not node.queue.enqueue(frame):
            node.sixp.expire(peer, txn.token)
            self.drops["control_queue"] += 1
            self.counters["sixp_queue_full"] += 1
            self.log("SIXP", node.id, f"peer={peer} cmd={command} opt={opts.name} n={num} outcome=QueueFull by={why}")
            return False
        node.request_frames[txn.token] = frame
        node.txn_origin[txn.token] = why
        self._push(txn.timeout_asn, EV_TIMEOUT, node.id, peer, txn.token)
        self.counters[f"sixp_start_{why}"] += 1
        return True

    def _timeout(self, node: Node, peer: int, token) -> None:
        frame = node.request_frames.pop(token, None)
        txn = node.sixp.expire(peer, token)
        if txn is None:
            return
        why = node.txn_origin.pop(token, "?")
        if frame is not None and (frame in node.queue.control):
            node.queue.remove(frame)
        self.counters["sixp_timeout"] += 1
        self.log("SIXP", node.id, f"peer={peer} cmd={txn.command} opt={txn.cell_options.name} "
                                  f"n={txn.num_cells} outcome=Timeout by={why}")

    def _on_request(self, responder: Node, req: SixPRequest, asn: int) -> None:
        resp = responder.sixp.handle_request(req)
        frame = Frame(SIXP, req.initiator, resp, asn)
        if not responder.queue.enqueue(frame):
            responder.sixp.abort_response(resp.token)
            self.drops["control_queue"] += 1
            return
        # the initiator gives up after the same timeout; a later answer is useless
        self._push(asn + responder.sixp.timeout_slots, EV_RESP_EXPIRY, responder.id, frame)

    def _response_expired(self, responder: Node, frame: Frame) -> None:
        if frame in responder.queue.control:
            responder.queue.remove(frame)
            responder.sixp.abort_response(frame.payload.token)
            self.counters["sixp_response_expired"] += 1

    def _on_response(self, initiator: Node, responder: Node, resp: SixPResponse, asn: int) -> None:
        initiator.request_frames.pop(resp.token, None)
        why = initiator.txn_origin.pop(resp.token, "?")
        txn = initiator.sixp.pending.get(responder.id)
        try:
            changed = initiator.sixp.handle_response(resp, asn)
        except sixp_mod.TimeoutExpired:
            changed = None
        if changed is None:
            responder.sixp.abort_response(resp.token)
            self.counters["sixp_stale"] += 1
            return
        theirs = responder.sixp.commit_response(resp.token)
        cmd = resp.command
        for cell in changed:
            if cmd == sixp_mod.ADD:
                self._cell_added(initiator, cell, asn)
            else:
                self._cell_removed(initiator, cell, asn)
        for cell in theirs:
            if cmd == sixp_mod.ADD:
                self._cell_added(responder, cell, asn)
                if why == "bdpc":
                    responder.granted.add(cell.slot_offset)
            else:
                self._cell_removed(responder, cell, asn)
        if len(changed) != len(theirs):
            self.violations["sixp_commit_mismatch"] += 1
        outcome = "Reset" if resp.code == sixp_mod.RC_RESET else "Done"
        self.counters[f"sixp_{cmd.lower()}_{outcome.lower()}"] += 1
        opts = txn.cell_options.name if txn is not None else "?"
        self.log("SIXP", initiator.id, f"peer={responder.id} cmd={cmd} opt={opts} "
                                       f"n={len(changed)} outcome={outcome} by={why}")

    def _cell_added(self, node: Node, cell: Cell, asn: int) -> None:
        node.cell_since[cell.slot_offset] = asn + 1
        node.cell_count[(cell.peer, cell.options)] += 1
        if cell.options == Opt.TX:
            self.tx_at[cell.slot_offset].append((node, cell))
            self.tx_cells_total += 1
        self.log("CELL_ADD", node.id, f"{cell.options.name} peer={cell.peer} slot={cell.slot_offset} ch={cell.channel_offset}")

    def _cell_removed(self, node: Node, cell: Cell, asn: int) -> None:
        since = node.cell_since.pop(cell.slot_offset)
        node.granted.discard(cell.slot_offset)
        n = occurrences(cell.slot_offset, since, asn + 1, self.L)
        node.cell_count[(cell.peer, cell.options)] -= 1
        if cell.options == Opt.TX:
            node.tx_occ += n
            self.tx_at[cell.slot_offset].remove((node, cell))
            self.tx_cells_total -= 1
        else:
            node.rx_occ += n
        self.log("CELL_DEL", node.id, f"{cell.options.name} peer={cell.peer} slot={cell.slot_offset} ch={cell.channel_offset}")

    def install_link(self, child: int, parent: int, slot: int, channel: int = 0) -> None:
        """Install a mirrored TX(child) / RX(parent) cell pair without negotiation."""
        c, p = self.nodes[child], self.nodes[parent]
        tx = c.matrix.install(Cell(slot, channel, Opt.TX, parent))
        rx = p.matrix.install(Cell(slot, channel, Opt.RX, child))
        self._cell_added(c, tx, self.asn)
        self._cell_added(p, rx, self.asn)

    def _ensure_parent_cell(self, node: Node, asn: int) -> None:
        parent = node.parent
        if parent is None or node.cell_count[(parent, Opt.TX)] > 0:
            return
        self._start(node, parent, sixp_mod.ADD, Opt.TX, 1, asn, "msf")

    # ---------------------------------------------------------- SF hooks
    def _bdpc_arrival(self, node: Node, child: int, pkt: DataPacket, asn: int) -> None:
        d2r = node.rpl.d2r_slots
        if d2r is None:
            self.counters["bdpc_uncounted"] += 1
            return
        stats = node.child_stats.get(child)
        if stats is None:
            stats = node.child_stats[child] = ChildStats()
        bdpc_record_arrival(stats, pkt.deadline, asn, d2r)
        node.dirty_children.add(child)
        action = bdpc_evaluate(stats, self.thresholds, node.cell_count[(child, Opt.RX)])
        started = False
        if action == ADD_RX:
            started = self._start(node, child, sixp_mod.ADD, Opt.RX,
                                  self.cfg.prehop_add_cell_count, asn, "bdpc")
        elif action == DEL_RX:
            started = self._start(node, child, sixp_mod.DELETE, Opt.RX, 1, asn, "bdpc")
        if started and self.cfg.reset_counters_on_action:
            stats.reset()

    def _msf_check(self, node: Node, asn: int) -> None:
        parent = node.parent
        own = node.cell_count[(parent, Opt.TX)]
        keep = ()
        if self.cfg.msf_spares_granted and node.granted:
            keep = node.granted
            own -= sum(1 for s in keep if node.matrix.at_slot(s).peer == parent)
        action = msf_adapt(node.msf, own, self.cfg.msf_window,
                           self.cfg.msf_high_limit, self.cfg.msf_low_limit)
        if action == ADD_TX:
            self._start(node, parent, sixp_mod.ADD, Opt.TX, 1, asn, "msf")
        elif action == DEL_TX:
            self._start(node, parent, sixp_mod.DELETE, Opt.TX, 1, asn, "msf", keep)

    # ------------------------------------------------------------ delivery
    def _deliver(self, sender: Node, receiver: Node, frame: Frame, asn: int) -> None:
        kind = frame.kind
        if kind == DATA:
            pkt = frame.payload
            sender.packets_out += 1
            receiver.packets_in += 1
            pkt.prev_hop_mac = sender.id
            if self.bdpc:
                self._bdpc_arrival(receiver, sender.id, pkt, asn)
            if receiver.is_root:
                self.records.append(record_root_arrival(
                    self.root_stats, pkt.source, pkt.origin_time, pkt.deadline, asn))
                # the root consumes the packet; keep conservation exact
                receiver.packets_out += 1
            else:
                frame.retries = 0
                frame.enqueued_asn = asn
                if not receiver.queue.enqueue(frame):
                    receiver.dropped += 1
                    self.drops["queue"] += 1
                    self.log("QUEUE_DROP", receiver.id, f"src={pkt.source} seq={pkt.sequence}")
        elif kind == SIXP:
            msg = frame.payload
            if isinstance(msg, SixPRequest):
                self._on_request(receiver, msg, asn)
            else:
                self._on_response(receiver, sender, msg, asn)

    def _drop_after_retries(self, node: Node, frame: Frame) -> None:
        node.queue.remove(frame)
        self.drops["retry"] += 1
        if frame.kind == DATA:
            node.dropped += 1
            self.log("RETRY_DROP", node.id, f"src={frame.payload.source} seq={frame.payload.sequence}")
        elif frame.kind == SIXP:
            msg = frame.payload
            if isinstance(msg, SixPRequest):
                node.request_frames.pop(msg.token, None)
                why = node.txn_origin.pop(msg.token, "?")
                txn = node.sixp.expire(msg.responder, msg.token)
                if txn is not None:
                    self.log("SIXP", node.id, f"peer={msg.responder} cmd={msg.command} "
                                              f"opt={msg.cell_options.name} n={msg.num_cells} "
                                              f"outcome=RetryDrop by={why}")
            else:
                node.sixp.abort_response(msg.token)

    # ----------------------------------------------------------- slot types
    def minimal_slot(self, asn: int) -> None:
        attempts = {}
        frames = {}
        for node in self.node_list:
            if not node.queue.control:
                continue
            if node.backoff > 0:
                node.backoff -= 1
                continue
            frame = node.queue.for_shared()
            attempts[node.id] = frame.dst
            frames[node.id] = frame
        if not attempts:
            return
        outcome = contend_minimal_cell(attempts, self.adjacency)
        nodes = self.nodes
        for tx_id in sorted(outcome):
            receivers = outcome[tx_id]
            node = nodes[tx_id]
            frame = frames[tx_id]
            bcast = frame.dst == BROADCAST
            if bcast:
                node.tx_min_bcast += 1
            else:
                node.tx_min_unicast += 1
            if receivers and not bcast:
                p = self.links.pdr.get((tx_id, frame.dst), 0.0)
                if p < 1.0 and self.rng.random() >= p:
                    receivers = frozenset()
                    self.counters["minimal_losses"] += 1
            elif receivers:
                p_of = self.links.pdr
                lossy = [rx for rx in sorted(receivers) if p_of.get((tx_id, rx), 0.0) < 1.0]
                if lossy:
                    receivers = frozenset(rx for rx in sorted(receivers)
                                          if rx not in lossy or self.rng.random() < p_of[(tx_id, rx)])
            if not receivers:
                self.counters["minimal_collisions"] += 1
                frame.retries += 1
                node.backoff = self.rng.randint(1, self.cfg.backoff_max) - 1
                if frame.retries > self.cfg.max_retries:
                    self._drop_after_retries(node, frame)
                continue
            if self.cfg.backoff_after_success and len(node.queue.control) > 1:
                node.backoff = self.rng.randint(1, self.cfg.backoff_max) - 1
            else:
                node.backoff = 0
            node.queue.remove(frame)
            if bcast:
                for rx in sorted(receivers):
                    r = nodes[rx]
                    r.rx_min_bcast += 1
                    if frame.kind == DIO:
                        self._on_dio(r, frame.payload, asn)
            else:
                r = nodes[frame.dst]
                r.rx_min_unicast += 1
                self._deliver(node, r, frame, asn)

    def dedicated_slot(self, asn: int, off: int) -> None:
        sending = []
        for node, cell in self.tx_at[off]:
            parent = node.rpl.preferred_parent
            peer = cell.peer
            to_parent = peer == parent
            if to_parent:
                node.msf.elapsed += 1
            frame = node.queue.for_peer(peer, parent)
            if frame is not None:
                sending.append((node, cell, frame, to_parent))
        if sending:
            if len(sending) > 1:
                busy = defaultdict(list)
                for node, cell, _, _ in sending:
                    busy[cell.channel_offset].append(node.id)
            nodes = self.nodes
            pdr = self.links.pdr
            rng = self.rng
            for node, cell, frame, to_parent in sending:
                receiver = nodes[cell.peer]
                node.tx_dedicated += 1
                ok = False
                rx_cell = receiver.matrix.at_slot(off)
                if (rx_cell is not None and rx_cell.peer == node.id
                        and rx_cell.channel_offset == cell.channel_offset and rx_cell.options == Opt.RX):
                    ok = True
                    if len(sending) > 1:
                        adj = self.adjacency[receiver.id]
                        for other in busy[cell.channel_offset]:
                            if other != node.id and other in adj:
                                ok = False
                                self.counters["dedicated_collisions"] += 1
                                break
                    if ok:
                        p = pdr.get((node.id, receiver.id), 0.0)
                        if p < 1.0 and rng.random() >= p:
                            ok = False
                if ok:
                    if to_parent:
                        node.msf.used += 1
                    receiver.rx_dedicated += 1
                    node.queue.remove(frame)
                    self._deliver(node, receiver, frame, asn)
                else:
                    frame.retries += 1
                    if frame.retries > self.cfg.max_retries:
                        self._drop_after_retries(node, frame)
        window = self.cfg.msf_window
        for node, cell in list(self.tx_at[off]):
            if node.msf.elapsed >= window:
                self._msf_check(node, asn)

    # -------------------------------------------------------- housekeeping
    def end_of_slotframe(self, asn: int) -> None:
        sf_index = asn // self.L
        cfg = self.cfg
        self.cell_per_slotframe.append(self.tx_cells_total)
        for node in self.node_list:
            if node.is_root or not node.rpl.joined:
                continue
            if node.cleanup:
                # drain TX cells toward former parents, one transaction at a time
                peer = node.cleanup[0]
                if peer == node.parent:
                    node.cleanup.pop(0)
                elif not node.sixp.busy(peer):
                    if node.cell_count[(peer, Opt.TX)] == 0:
                        node.cleanup.pop(0)
                    else:
                        self._start(node, peer, sixp_mod.DELETE, Opt.TX, 1, asn, "cleanup")
            self._ensure_parent_cell(node, asn)
            if sf_index >= cfg.converge_slotframe and node.rpl.d2r_slots is not None:
                self.d2r_sum[node.id] += node.rpl.d2r_slots
                self.d2r_n[node.id] += 1
        if (sf_index + 1) % cfg.latepaqs_sample_slotframes == 0:
            for node in self.node_list:
                if node.dirty_children:
                    for child in sorted(node.dirty_children):
                        st = node.child_stats[child]
                        self.late_rows.append((asn, node.id, child, st.in_time, st.delayed, st.late_paqs))
                    node.dirty_children.clear()
        if sf_index + 1 == cfg.converge_slotframe:
            self.late_at_converge = self._late_snapshot()
        if cfg.check_invariants:
            self.check_invariants()

    def _late_snapshot(self) -> dict:
        return {
            (n.id, c): (st.in_time, st.delayed)
            for n in self.node_list for c, st in sorted(n.child_stats.items())
        }

    def check_invariants(self) -> dict:
        found = defaultdict(int)
        for node in self.node_list:
            seen_slots = set()
            for cell in node.matrix:
                if cell.slot_offset in seen_slots:
                    found["slot_duty"] += 1
                seen_slots.add(cell.slot_offset)
                if cell.is_minimal:
                    continue
                other = self.nodes[cell.peer].matrix.at(cell.coord)
                if (other is None or other.peer != node.id
                        or other.options != sixp_mod.mirror(cell.options)):
                    found["mirror"] += 1
            if not node.matrix.at((0, 0)):
                found["minimal_missing"] += 1
            queued = len(node.queue.data)
            if node.generated + node.packets_in != node.packets_out + queued + node.dropped:
                found["conservation"] += 1
        if not self.dodag_acyclic():
            found["dodag_cycle"] += 1
        for k, v in found.items():
            self.violations[k] += v
        return dict(found)

    # -------------------------------------------------------------- finish
    def finish(self) -> RunResult:
        end = self.asn
        L = self.L
        n_minimal = occurrences(0, 0, end, L)
        energy = {}
        for node in self.node_list:
            tx_occ, rx_occ = node.tx_occ, node.rx_occ
            for slot, since in node.cell_since.items():
                cell = node.matrix.at_slot(slot)
                n = occurrences(slot, since, end, L)
                if cell.options == Opt.TX:
                    tx_occ += n
                else:
                    rx_occ += n
            meter = EnergyMeter()
            meter.account("tx_data_rx_ack", node.tx_dedicated + node.tx_min_unicast)
            meter.account("rx_data_tx_ack", node.rx_dedicated + node.rx_min_unicast)
            meter.account("tx_broadcast", node.tx_min_bcast)
            meter.account("rx_broadcast", node.rx_min_bcast)
            minimal_busy = node.tx_min_unicast + node.tx_min_bcast + node.rx_min_unicast + node.rx_min_bcast
            meter.account("idle_listen", (rx_occ - node.rx_dedicated) + (n_minimal - minimal_busy))
            # TX cells without a frame: radio off
            meter.account("sleep", end - meter.total_slots)
            energy[node.id] = meter
        d2r_mean = {n: self.d2r_sum[n] / self.d2r_n[n] for n in sorted(self.d2r_n) if self.d2r_n[n]}
        late_final = self._late_snapshot()
        queued = [(n.id, f.payload.source, f.payload.origin_time) for n in self.node_list for f in n.queue.data]
        self.finished = True
        return RunResult(
            config=self.cfg,
            topology=self.topology,
            records=self.records,
            generated=self.generated,
            root_stats=self.root_stats,
            energy=energy,
            events=self.events,
            late_rows=self.late_rows,
            late_final=late_final,
            late_at_converge=self.late_at_converge,
            cell_per_slotframe=self.cell_per_slotframe,
            d2r_mean=d2r_mean,
            d2r_samples=dict(self.d2r_samples),
            drops=dict(self.drops),
            counters=dict(self.counters),
            violations=dict(self.violations),
            queued_at_end=queued,
        )


def simulate(cfg: SimConfig) -> RunResult:
    return Network(cfg).run()
