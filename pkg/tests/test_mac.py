import functools
import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bdpcsim.core import BROADCAST, DataPacket, SimConfig, compute_deadline
from bdpcsim.mac import (DATA, DIO, SIXP, SLOT_STATES, EnergyMeter, Frame, LinkModel, TxQueue,
                         contend_minimal_cell)
from bdpcsim.network import Network
from bdpcsim.schedule import Cell, Opt

from conftest import hand_network, small_config


def data_frame(i=0):
    return Frame(DATA, None, DataPacket(5, 5, i, i + 150, i))


class TestTxQueue:
    def test_eleventh_data_frame_dropped(self):
        q = TxQueue(10, 2)
        assert all(q.enqueue(data_frame(i)) for i in range(10))
        assert not q.enqueue(data_frame(10))
        assert len(q.data) == 10

    def test_control_reserve(self):
        q = TxQueue(10, 2)
        for i in range(10):
            q.enqueue(data_frame(i))
        assert q.enqueue(Frame(DIO, BROADCAST, None))
        assert q.enqueue(Frame(SIXP, 3, None))
        assert not q.enqueue(Frame(SIXP, 4, None))
        assert len(q.data) == 10 and len(q) == 12

    def test_control_before_data_and_fifo(self):
        q = TxQueue()
        d0, d1 = data_frame(0), data_frame(1)
        c0, c1 = Frame(SIXP, 1, "a"), Frame(SIXP, 1, "b")
        for f in (d0, c0, d1, c1):
            q.enqueue(f)
        assert q.for_peer(1, parent=1) is c0
        q.remove(c0)
        assert q.for_peer(1, parent=1) is c1
        q.remove(c1)
        assert q.for_peer(1, parent=1) is d0
        # data only goes to the parent
        assert q.for_peer(2, parent=1) is None

    def test_shared_prefers_broadcast(self):
        q = TxQueue()
        u, b = Frame(SIXP, 2, None), Frame(DIO, BROADCAST, None)
        q.enqueue(u)
        q.enqueue(b)
        assert q.for_shared() is b
        q.remove(b)
        assert q.for_shared() is u
        q.remove(u)
        assert q.for_shared() is None

    def test_discard(self):
        q = TxQueue()
        q.enqueue(Frame(DIO, BROADCAST, 1))
        q.enqueue(Frame(SIXP, 2, 2))
        gone = q.discard(lambda f: f.kind == DIO)
        assert [f.payload for f in gone] == [1] and len(q) == 1

    @given(st.lists(st.booleans(), max_size=40))
    def test_bounded(self, kinds):
        q = TxQueue(10, 2)
        for is_data in kinds:
            q.enqueue(data_frame() if is_data else Frame(SIXP, 1, None))
            assert len(q.data) <= 10 and len(q) <= 12


def test_link_model():
    lm = LinkModel()
    lm.add(0, 1, pdr=0.8, rssi=-40)
    assert lm.linked(1, 0) and lm.pdr[(1, 0)] == 0.8 and lm.rssi[(0, 1)] == -40
    assert lm.neighbors(0) == {1} and lm.neighbors(7) == set()


class TestContention:
    CHAIN = {0: {1}, 1: {0, 2}, 2: {1, 3}, 3: {2, 4}, 4: {3}}

    def test_lone_broadcast_reaches_all_neighbours(self):
        assert contend_minimal_cell({2: BROADCAST}, self.CHAIN) == {2: frozenset({1, 3})}

    def test_two_neighbours_collide(self):
        out = contend_minimal_cell({1: BROADCAST, 2: BROADCAST}, self.CHAIN)
        assert out == {1: frozenset(), 2: frozenset()}

    def test_hidden_terminal(self):
        out = contend_minimal_cell({0: 1, 2: BROADCAST}, self.CHAIN)
        assert out == {0: frozenset(), 2: frozenset()}

    def test_far_apart_both_succeed(self):
        out = contend_minimal_cell({0: 1, 4: 3}, self.CHAIN)
        assert out == {0: frozenset({1}), 4: frozenset({3})}

    def test_unicast_to_non_neighbour(self):
        assert contend_minimal_cell({0: 3}, self.CHAIN) == {0: frozenset()}

    @given(st.dictionaries(st.integers(0, 4), st.sampled_from([BROADCAST, 0, 1, 2, 3, 4])))
    def test_success_only_without_interference(self, attempts):
        out = contend_minimal_cell(attempts, self.CHAIN)
        for tx, got in out.items():
            for rx in got:
                assert rx not in attempts
                assert all(o == tx or o not in attempts for o in self.CHAIN[rx])


# -------------------------------------------------------------- backoff oracle
def exact_completion_cdf(n, backoff_max, horizon):
    """P(all n contenders delivered within k occurrences), k = 1..horizon.

    Independent model of the shared-cell automaton in a clique: a lone
    transmitter succeeds, two or more all fail and draw a backoff uniformly
    in {0..backoff_max-1}; waiting contenders count down one per occurrence.
    """
    @functools.lru_cache(maxsize=None)
    def done_by(state, left):
        if not state:
            return Fraction(1)
        if left == 0:
            return Fraction(0)
        ready = [b for b in state if b == 0]
        waiting = tuple(b - 1 for b in state if b > 0)
        if len(ready) == 1:
            return done_by(tuple(sorted(waiting)), left - 1)
        if not ready:
            return done_by(tuple(sorted(waiting)), left - 1)
        total = Fraction(0)
        k = len(ready)
        for draw in _draws(k, backoff_max):
            total += done_by(tuple(sorted(waiting + draw)), left - 1)
        return total / backoff_max ** k

    start = tuple([0] * n)
    return [done_by(start, k) for k in range(1, horizon + 1)]


def _draws(k, m):
    if k == 0:
        yield ()
        return
    for first in range(m):
        for rest in _draws(k - 1, m):
            yield (first,) + rest


def engine_completion_times(trials, n=5, horizon=20):
    links = [[a, b] for a in range(n + 1) for b in range(a + 1, n + 1)]
    times = []
    for seed in range(trials):
        cfg = SimConfig(links=links, groups=n, group_size=1, seed=seed, max_retries=10**6)
        net = Network(cfg)
        for i in range(1, n + 1):
            net.nodes[i].queue.enqueue(Frame("probe", BROADCAST, None))
        t = None
        for k in range(horizon):
            net.minimal_slot(k * net.L)
            if all(not net.nodes[i].queue.control for i in range(1, n + 1)):
                t = k + 1
                break
        times.append(t)
    return times


def test_backoff_automaton_matches_exact_oracle():
    horizon = 20
    cdf = exact_completion_cdf(5, 4, horizon)
    trials = 3000
    times = engine_completion_times(trials, 5, horizon)
    for k in (5, 8, 12, 16, 20):
        p = float(cdf[k - 1])
        seen = sum(1 for t in times if t is not None and t <= k) / trials
        sigma = math.sqrt(max(p * (1 - p), 1e-4) / trials)
        assert abs(seen - p) < 4 * sigma + 1e-9, (k, p, seen)
    # the earliest completion the oracle allows is also the earliest the engine shows
    earliest = next(k for k, p in enumerate(cdf, start=1) if p > 0)
    assert earliest > 5 and min(t for t in times if t) == earliest
    assert float(cdf[-1]) > 0.9


# ----------------------------------------------------------------- slot engine
def chain3():
    net = hand_network([[0, 1], [1, 2]], {1: 0, 2: 1})
    net.install_link(2, 1, slot=5)
    net.install_link(1, 0, slot=3)
    return net


def packet(src, asn, seq=1):
    return DataPacket(src, src, asn, compute_deadline(asn, 1.5, 0.010), seq)


def where(net, pkt):
    for node in net.node_list:
        if any(f.payload is pkt for f in node.queue.data):
            return node.id
    if any(r.origin_asn == pkt.origin_time and r.source == pkt.source for r in net.records):
        return "root"
    return None


def test_three_node_chain_hand_stepped():
    net = chain3()
    pkt = packet(2, 0)
    net.inject(net.nodes[2], pkt, 0)
    # hand-stepped trace: node 2 sends at slot 5, node 1 forwards at the next slot-3 occurrence
    trace = {asn: 2 for asn in range(5)}
    trace.update({asn: 1 for asn in range(5, 104)})
    trace.update({asn: "root" for asn in range(104, 2 * 101)})
    for asn in range(2 * 101):
        net.run_slot(asn)
        assert where(net, pkt) == trace[asn], asn
    (rec,) = net.records
    assert (rec.delay_slots, rec.on_time) == (104, True)
    assert net.nodes[2].tx_dedicated == 1 and net.nodes[1].rx_dedicated == 1
    assert net.nodes[1].tx_dedicated == 1 and net.root.rx_dedicated == 1


def test_no_delivery_without_listening_peer():
    net = hand_network([[0, 1]], {1: 0})
    cell = net.nodes[1].matrix.install(Cell(4, 0, Opt.TX, 0))
    net._cell_added(net.nodes[1], cell, 0)
    net.inject(net.nodes[1], packet(1, 0), 0)
    net.run_until(101 * 3)
    assert not net.records and net.nodes[1].queue.data[0].retries == 3


def test_retry_drop_after_five_retries_at_zero_pdr():
    net = hand_network([[0, 1]], {1: 0})
    net.install_link(1, 0, slot=3)
    net.links.pdr[(1, 0)] = 0.0
    net.inject(net.nodes[1], packet(1, 0), 0)
    net.run_until(101 * 10)
    assert net.drops["retry"] == 1 and not net.records
    assert net.nodes[1].tx_dedicated == 6
    assert [e[1] for e in net.events if e[1] == "RETRY_DROP"] == ["RETRY_DROP"]


def test_queue_drop_logged():
    net = hand_network([[0, 1]], {1: 0})
    for i in range(11):
        net.inject(net.nodes[1], packet(1, i, i), i)
    assert net.drops["queue"] == 1 and net.nodes[1].dropped == 1
    assert net.events[-1][1] == "QUEUE_DROP"


class TestEnergy:
    def test_meter(self):
        m = EnergyMeter()
        m.account("sleep", 100)
        m.account("idle_listen")
        assert m.total_slots == 101
        assert m.charge_uc({s: 1.0 for s in SLOT_STATES}) == 101
        with pytest.raises(KeyError):
            m.account("dreaming")

    def test_idle_node_over_one_slotframe(self):
        net = hand_network([[0, 1]], {})
        net.run_until(101)
        res = net.finish()
        counts = res.energy[1].counts
        assert counts["sleep"] == 100 and counts["idle_listen"] == 1
        assert sum(counts.values()) == 101

    def test_dedicated_cells_counted(self):
        net = chain3()
        net.inject(net.nodes[2], packet(2, 0), 0)
        net.run_until(2 * 101)
        e = net.finish().energy
        assert e[2].counts["tx_data_rx_ack"] == 1
        assert e[1].counts["rx_data_tx_ack"] == 1 and e[1].counts["tx_data_rx_ack"] == 1
        # node 1 listens on its RX cell twice (one reception, one idle) plus two minimal cells
        assert e[1].counts["idle_listen"] == 1 + 2
        assert all(m.total_slots == 202 for m in e.values())

    def test_full_run_counts_sum_to_elapsed_slots(self):
        cfg = small_config(num_slotframes=300)
        res = Network(cfg).run()
        assert all(m.total_slots == cfg.total_slots for m in res.energy.values())

    def test_root_receives_most(self):
        res = Network(small_config(num_slotframes=600, sf="msf")).run()
        rx = {n: m.counts["rx_data_tx_ack"] for n, m in res.energy.items()}
        leaves = res.topology.groups[-1]
        assert all(rx[0] >= rx[n] for n in leaves)
        assert rx[0] >= max(rx.values())

    def test_linear_in_charges(self):
        from bdpcsim.core import DEFAULT_CHARGES_UC
        from bdpcsim.metrics import lifetime_years
        m = EnergyMeter()
        m.account("sleep", 1000)
        m.account("rx_broadcast", 10)
        one = lifetime_years(m, DEFAULT_CHARGES_UC, 2821.5)
        two = lifetime_years(m, {k: 2 * v for k, v in DEFAULT_CHARGES_UC.items()}, 2821.5)
        assert two == pytest.approx(one / 2)


def test_dedicated_transmissions_only_on_tx_cells():
    net = Network(small_config(num_slotframes=300))
    net.start()
    for stop in (10000, 20000, 30300):
        net.run_until(stop)
        for entries in net.tx_at:
            assert all(cell.options == Opt.TX and node.matrix.at(cell.coord) == cell
                       for node, cell in entries)
