import random

import pytest
from hypothesis import given, settings, strategies as st

from bdpcsim.schedule import Cell, NoFreeCells, Opt, ScheduleMatrix
from bdpcsim.sixp import (ADD, DELETE, RC_RESET, RC_SUCCESS, Busy, NoSuchCells, SixPAgent, State,
                          TimeoutExpired, mirror)

P, C = 1, 2  # parent, child


def pair(seed=0, length=101, channels=16, timeout=303):
    rng = random.Random(seed)
    mp, mc = ScheduleMatrix(P, length, channels), ScheduleMatrix(C, length, channels)
    return SixPAgent(P, mp, rng, 5, timeout), SixPAgent(C, mc, rng, 5, timeout)


def exchange(ini, res, command, opts, num=1, asn=0):
    if command == ADD:
        txn, req = ini.initiate_add(res.owner, opts, num, asn)
    else:
        txn, req = ini.initiate_delete(res.owner, opts, num, asn)
    resp = res.handle_request(req)
    mine = ini.handle_response(resp, asn + 1)
    theirs = res.commit_response(resp.token)
    return txn, req, resp, mine, theirs


def mirrored(a: SixPAgent, b: SixPAgent) -> bool:
    ours = {(c.coord, mirror(c.options)) for c in a.matrix.negotiated(peer=b.owner)}
    theirs = {(c.coord, c.options) for c in b.matrix.negotiated(peer=a.owner)}
    return ours == theirs


def test_mirror_helper():
    assert mirror(Opt.TX) == Opt.RX and mirror(Opt.RX) == Opt.TX
    with pytest.raises(ValueError):
        mirror(Opt.SHARED)


class TestAdd:
    def test_prehop_rx_request(self):
        par, ch = pair()
        txn, req = par.initiate_add(C, Opt.RX, 1, 0)
        assert txn.state is State.REQUEST_SENT
        assert req.cell_options == Opt.RX and len(req.candidates) == 5
        assert (0, 0) not in req.candidates

    def test_busy(self):
        par, _ = pair()
        par.initiate_add(C, Opt.RX, 1, 0)
        with pytest.raises(Busy):
            par.initiate_add(C, Opt.RX, 1, 0)
        with pytest.raises(Busy):
            par.initiate_delete(C, Opt.RX, 1, 0)

    def test_candidates_clamped_to_free(self):
        par, _ = pair(length=4, channels=1)
        _, req = par.initiate_add(C, Opt.RX, 1, 0)
        free = [(s, 0) for s in range(1, 4)]
        assert sorted(req.candidates) == free

    def test_no_free_cells(self):
        par, _ = pair(length=2, channels=1)
        par.matrix.install(Cell(1, 0, Opt.TX, 9))
        with pytest.raises(NoFreeCells):
            par.initiate_add(C, Opt.RX, 1, 0)

    def test_first_fit_and_mirror(self):
        par, ch = pair()
        txn, req, resp, mine, theirs = exchange(par, ch, ADD, Opt.RX)
        # first-fit oracle: the first candidate whose slot is free at the responder
        assert resp.code == RC_SUCCESS and resp.cells == [req.candidates[0]]
        assert [c.options for c in mine] == [Opt.RX]
        assert [c.options for c in theirs] == [Opt.TX]
        assert mine[0].coord == theirs[0].coord
        assert txn.state is State.DONE
        assert mirrored(par, ch)

    def test_first_fit_skips_busy_slots(self):
        par, ch = pair()
        _, req = par.initiate_add(C, Opt.RX, 2, 0)
        for s, c in req.candidates[:2]:
            ch.matrix.install(Cell(s, (c + 1) % 16, Opt.TX, 7))
        resp = ch.handle_request(req)
        assert resp.cells == req.candidates[2:4]

    def test_all_occupied_gives_empty_success(self):
        par, ch = pair()
        _, req = par.initiate_add(C, Opt.RX, 1, 0)
        for s, c in req.candidates:
            ch.matrix.install(Cell(s, c, Opt.TX, 7))
        before = (par.matrix.copy(), ch.matrix.copy())
        resp = ch.handle_request(req)
        assert resp.code == RC_SUCCESS and resp.cells == []
        assert par.handle_response(resp, 1) == []
        assert ch.commit_response(resp.token) == []
        assert (par.matrix, ch.matrix) == before
        assert not par.busy(C)

    def test_reserved_slots_not_reoffered(self):
        par, _ = pair(length=4, channels=1)
        _, req1 = par.initiate_add(C, Opt.RX, 1, 0)
        with pytest.raises(NoFreeCells):
            par.initiate_add(3, Opt.RX, 1, 0)
        assert len(req1.candidates) == 3


class TestSeqnum:
    def test_advances_per_completed_transaction(self):
        par, ch = pair()
        for k in range(3):
            _, req, *_ = exchange(par, ch, ADD, Opt.RX, asn=10 * k)
            assert req.seqnum == k
        assert par.out_seq[C] == ch.in_seq[P] == 3

    def test_stale_seqnum_resets(self):
        par, ch = pair()
        exchange(par, ch, ADD, Opt.RX)
        par.out_seq[C] = 5
        before = (par.matrix.copy(), ch.matrix.copy())
        txn, req = par.initiate_add(C, Opt.RX, 1, 20)
        resp = ch.handle_request(req)
        assert resp.code == RC_RESET
        assert par.handle_response(resp, 21) == []
        assert ch.commit_response(resp.token) == []
        assert (par.matrix, ch.matrix) == before
        assert par.out_seq[C] == ch.in_seq[P] == 0
        assert txn.state is State.FAILED
        # the pair works again after the reset
        _, _, resp, mine, _ = exchange(par, ch, ADD, Opt.RX, asn=30)
        assert resp.code == RC_SUCCESS and len(mine) == 1


class TestTimeout:
    def test_late_response_fails_cleanly(self):
        par, ch = pair(timeout=50)
        before = (par.matrix.copy(), ch.matrix.copy())
        txn, req = par.initiate_add(C, Opt.RX, 1, 0)
        resp = ch.handle_request(req)
        with pytest.raises(TimeoutExpired):
            par.handle_response(resp, 51)
        ch.abort_response(resp.token)
        assert txn.state is State.FAILED
        assert (par.matrix, ch.matrix) == before
        assert not par.reserved and not ch.reserved
        assert not par.busy(C)

    def test_expire(self):
        par, ch = pair()
        txn, req = par.initiate_add(C, Opt.RX, 1, 0)
        assert par.expire(C, (P, 999)) is None
        assert par.expire(C, txn.token) is txn
        assert txn.state is State.FAILED and not par.reserved

    def test_response_after_expire_is_stale(self):
        par, ch = pair()
        txn, req = par.initiate_add(C, Opt.RX, 1, 0)
        resp = ch.handle_request(req)
        par.expire(C, txn.token)
        assert par.handle_response(resp, 1) is None


class TestDelete:
    def test_both_lose_same_coordinate(self):
        par, ch = pair()
        exchange(par, ch, ADD, Opt.RX, asn=0)
        exchange(par, ch, ADD, Opt.RX, asn=10)
        assert len(par.matrix.negotiated(C, Opt.RX)) == 2
        _, req, resp, mine, theirs = exchange(par, ch, DELETE, Opt.RX, asn=20)
        assert [c.coord for c in mine] == [c.coord for c in theirs] == [tuple(req.candidates[0])]
        assert len(par.matrix.negotiated(C)) == len(ch.matrix.negotiated(P)) == 1
        assert mirrored(par, ch)

    def test_nothing_to_delete(self):
        par, _ = pair()
        with pytest.raises(NoSuchCells):
            par.initiate_delete(C, Opt.RX, 1, 0)

    def test_keep_slots(self):
        par, ch = pair()
        _, _, _, mine, _ = exchange(par, ch, ADD, Opt.RX)
        with pytest.raises(NoSuchCells):
            par.initiate_delete(C, Opt.RX, 1, 5, keep_slots={mine[0].slot_offset})

    def test_child_initiated_tx_delete(self):
        par, ch = pair()
        exchange(ch, par, ADD, Opt.TX)
        exchange(ch, par, DELETE, Opt.TX, asn=10)
        assert not par.matrix.negotiated() and not ch.matrix.negotiated()


def test_new_request_supersedes_old_grant():
    par, ch = pair()
    txn1, req1 = par.initiate_add(C, Opt.RX, 1, 0)
    resp1 = ch.handle_request(req1)
    par.expire(C, txn1.token)
    _, req2 = par.initiate_add(C, Opt.RX, 1, 5)
    resp2 = ch.handle_request(req2)
    assert resp1.token not in ch.granted and resp2.token in ch.granted


def test_clear_peer():
    par, ch = pair()
    exchange(par, ch, ADD, Opt.RX)
    par.initiate_add(C, Opt.RX, 1, 5)
    par.clear_peer(C)
    assert not par.busy(C) and C not in par.out_seq and not par.reserved


# random protocol runs: requests and responses may be delivered, lost or late
OPS = st.lists(st.tuples(
    st.sampled_from(["p_add", "p_del", "c_add", "c_del", "deliver_req", "deliver_resp",
                     "lose", "tick"]),
    st.integers(1, 3)), max_size=60)


@settings(max_examples=150, deadline=None)
@given(OPS, st.integers(0, 2**16))
def test_random_protocol_runs_keep_invariants(ops, seed):
    par, ch = pair(seed, length=7, channels=2, timeout=20)
    agents = {P: par, C: ch}
    asn = 0
    flight = []   # (kind, message)
    snapshot = {}
    commits = 0
    for op, n in ops:
        asn += 1
        if op in ("p_add", "p_del", "c_add", "c_del"):
            ini, res = (par, ch) if op[0] == "p" else (ch, par)
            opts = Opt.RX if op[0] == "p" else Opt.TX
            try:
                if op.endswith("add"):
                    txn, req = ini.initiate_add(res.owner, opts, n, asn)
                else:
                    txn, req = ini.initiate_delete(res.owner, opts, 1, asn)
            except (Busy, NoFreeCells, NoSuchCells):
                continue
            snapshot[req.token] = (par.matrix.copy(), ch.matrix.copy(), commits)
            flight.append(("req", req))
        elif op == "deliver_req" and flight and flight[0][0] == "req":
            _, req = flight.pop(0)
            resp = agents[req.responder].handle_request(req)
            flight.append(("resp", resp))
        elif op == "deliver_resp":
            idx = next((i for i, f in enumerate(flight) if f[0] == "resp"), None)
            if idx is None:
                continue
            _, resp = flight.pop(idx)
            ini, res = agents[resp.initiator], agents[resp.responder]
            try:
                changed = ini.handle_response(resp, asn)
            except TimeoutExpired:
                changed = None
            if changed is None:
                res.abort_response(resp.token)
            else:
                res.commit_response(resp.token)
                commits += 1
        elif op == "lose" and flight:
            kind, msg = flight.pop(0)
            if kind == "resp":
                agents[msg.responder].abort_response(msg.token)
        elif op == "tick":
            asn += 25
            for a, peer in ((par, C), (ch, P)):
                txn = a.pending.get(peer)
                if txn is not None and asn > txn.timeout_asn:
                    a.expire(peer, txn.token)
                    # a failed transaction leaves both schedules as they were
                    mp, mc, seen = snapshot[txn.token]
                    if seen == commits:
                        assert (par.matrix, ch.matrix) == (mp, mc)
        assert mirrored(par, ch)
        for a in (par, ch):
            assert len({c.slot_offset for c in a.matrix}) == len(a.matrix)
            assert a.matrix.at((0, 0)).is_minimal
        for ini, res in ((par, ch), (ch, par)):
            out_s = ini.out_seq.get(res.owner, 0)
            in_s = res.in_seq.get(ini.owner, 0)
            # a responder that answered RESET is at 0 until the initiator hears it
            if in_s:
                assert abs(out_s - in_s) <= 1
