import random

import pytest

from macrsv.core import (ACK, CONF, CTS, NCTS, RB, RTS, COLLISION, SILENCE, Clean, DataFrame,
                         Packet, Station)
from macrsv.errors import ProtocolViolation
from macrsv.rsv import (ContentionState, Decision, RsvNode, SlotState as S, SlotTable,
                        ack_phase, choose_request, end_of_frame, free_rx_set, free_tx_set,
                        on_conf_minislot, on_ncts_minislot, on_rts_minislot, overheard_cts,
                        overheard_rb, rb_decision, release, transmitter_on_ack)

fs = frozenset


def table(n=8, **states):
    t = SlotTable(n)
    for key, (state, peer) in states.items():
        t.set(int(key[1:]), state, peer=peer)
    return t


def test_free_sets():
    t = table(s0=(S.FT, None), s1=(S.FR, None), s2=(S.RT, 5), s3=(S.RR, 6))
    assert free_tx_set(t) == {0, 4, 5, 6, 7}
    assert free_rx_set(t) == {1, 4, 5, 6, 7}


def test_choose_request_persistence():
    t = SlotTable(8)
    never = ContentionState(0.0, random.Random(1))
    assert choose_request(never, t, 2) is None
    always = ContentionState(1.0, random.Random(1))
    rts = choose_request(always, t, 3, src=1, dst=2)
    assert rts.src == 1 and rts.dst == 2 and len(rts.slots) == 3
    assert rts.slots <= free_tx_set(t)


def test_choose_request_withdraws_when_too_few_free():
    t = table(4, s0=(S.RT, 1), s1=(S.RR, 1), s2=(S.FR, None))
    cs = ContentionState(1.0, random.Random(0))
    assert choose_request(cs, t, 2) is None
    assert cs.withdrawn
    assert choose_request(cs, t, 1) is None  # stays out for the frame


def test_choose_request_shrinks_to_minimum():
    t = table(4, s0=(S.RT, 1), s1=(S.RR, 1))
    cs = ContentionState(1.0, random.Random(0))
    rts = choose_request(cs, t, 4, minimum=1)
    assert rts.slots == fs({2, 3})


def test_partial_grant():
    t = table(s2=(S.FT, None))
    out = on_rts_minislot(9, Clean(RTS(1, 9, fs({1, 2, 3}))), t)
    assert out.reply == CTS(9, 1, fs({1, 3}))
    assert out.pending == ("grant", 1, fs({1, 3}))


def test_all_or_nothing_refuses():
    t = table(s2=(S.FT, None))
    out = on_rts_minislot(9, Clean(RTS(1, 9, fs({1, 2}))), t, grant_policy="all_or_nothing")
    assert out.reply is None


def test_ncts_only_to_protect_rr():
    plain = SlotTable(8)
    assert on_rts_minislot(9, Clean(RTS(1, 4, fs({3}))), plain).reply is None
    busy = table(s3=(S.RR, 2))
    assert on_rts_minislot(9, Clean(RTS(1, 4, fs({3}))), busy).reply == NCTS(9)
    assert on_rts_minislot(9, Clean(RTS(1, 4, fs({4}))), busy).reply is None
    # collision: NCTS only when something needs protecting, or when paranoid
    assert on_rts_minislot(9, COLLISION, plain).reply is None
    assert on_rts_minislot(9, COLLISION, busy).reply == NCTS(9)
    assert on_rts_minislot(9, COLLISION, plain, paranoid_ncts=True).reply == NCTS(9)
    assert on_rts_minislot(9, SILENCE, busy).reply is None


def test_sender_marks_rt_on_cts():
    t = SlotTable(8)
    rts = RTS(1, 9, fs({2, 5}))
    conf = on_ncts_minislot(1, Clean(CTS(9, 1, fs({5}))), rts, t)
    assert conf == CONF(1, 9, fs({5}))
    assert t[5] is S.RT and t.peers[5] == 9 and t[2] is S.FTR


def test_sender_gets_nothing_from_ncts_or_collision():
    t = SlotTable(8)
    rts = RTS(1, 9, fs({2}))
    assert on_ncts_minislot(1, Clean(NCTS(4)), rts, t) is None
    assert on_ncts_minislot(1, COLLISION, rts, t) is None
    assert t[2] is S.FTR


def test_cts_with_unrequested_slot():
    with pytest.raises(ProtocolViolation):
        on_ncts_minislot(1, Clean(CTS(9, 1, fs({7}))), RTS(1, 9, fs({2})), SlotTable(8))


def test_conf_handling():
    rx = SlotTable(8)
    on_conf_minislot(9, Clean(CONF(1, 9, fs({5}))), rx, ("grant", 1, fs({5, 6})))
    assert rx[5] is S.RR and rx.peers[5] == 1 and rx[6] is S.FTR
    other = table(s5=(S.FR, None))
    on_conf_minislot(4, Clean(CONF(1, 9, fs({5, 6}))), other)
    assert other[5] is S.FT and other[6] is S.FT
    with pytest.raises(ProtocolViolation):
        on_conf_minislot(9, Clean(CONF(1, 9, fs({7}))), SlotTable(8), ("grant", 1, fs({5})))


def test_overheard_cts_marks_fr():
    t = table(s1=(S.FT, None))
    overheard_cts(4, Clean(CTS(9, 1, fs({1, 2}))), t)
    assert t[1] is S.FT and t[2] is S.FR


def test_rb_decision():
    assert rb_decision(1, 3, Clean(RB(9, 1, 3))) is Decision.TRANSMIT
    assert rb_decision(1, 3, Clean(RB(9, 2, 3))) is Decision.DEFER_AND_RELEASE
    assert rb_decision(1, 3, COLLISION) is Decision.DEFER_AND_RELEASE
    assert rb_decision(1, 3, SILENCE) is Decision.DEFER_AND_RELEASE
    assert rb_decision(1, 3, COLLISION, ablation=True) is Decision.TRANSMIT


def test_release_drops_rest_of_grant():
    t = SlotTable(8)
    for s in (1, 4, 6):
        t.set(s, S.RT, peer=9, grant_id="a")
    t.set(7, S.RT, peer=3, grant_id="b")
    assert release(t, 4) == [4, 6]
    assert t[1] is S.RT and t[7] is S.RT and t[4] is S.FTR


def test_overheard_rb_and_ack():
    t = SlotTable(8)
    overheard_rb(4, Clean(RB(9, 1, 2)), t)
    assert t[2] is S.FR
    data = Clean(DataFrame(1, 9, 2, 77))
    assert ack_phase(9, 2, data) == ACK(9, 1, 2)
    assert ack_phase(8, 2, data) is None
    assert ack_phase(9, 2, COLLISION) is None
    assert transmitter_on_ack(1, 2, Clean(ACK(9, 1, 2)))
    assert not transmitter_on_ack(1, 2, COLLISION)


def test_end_of_frame_resets():
    t = table(s0=(S.RT, 1), s1=(S.RR, 2), s2=(S.FT, None))
    end_of_frame(t)
    assert all(st is S.FTR for st in t.states)
    t.check()


def test_table_change_callback():
    seen = []
    t = SlotTable(4, node=7, on_change=lambda *a: seen.append(a))
    t.set(1, S.RT, peer=3, cause="cts")
    t.set(1, S.RT, peer=3, cause="cts")
    assert seen == [(7, 1, S.FTR, S.RT, "cts")]


def test_scripted_node_requests_bundle():
    st = Station(1, [Packet(0, 1, 0, 1, 0.0, 1044)])
    node = RsvNode(1, SlotTable(8), ContentionState(0.2, random.Random(0)), st,
                   script={0: [3, 4, 5]})
    assert node.rts_step(0) == RTS(1, 0, fs({3}))
    assert node.rts_step(1) is None
