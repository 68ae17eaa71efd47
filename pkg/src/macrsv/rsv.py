"""MAC-RSV node behaviour: slot bookkeeping and the handshake handlers.

The handlers are plain functions over a node's ``SlotTable`` so each rule can
be exercised on its own; ``RsvNode`` strings them together for the engine.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .core import (ACK, CONF, CTS, NCTS, RB, RTS, Clean, Collision, DataFrame,
                   Silence, Station, heard)
from .errors import ProtocolViolation


class SlotState(str, enum.Enum):
    RT = "RT"
    RR = "RR"
    FT = "FT"
    FR = "FR"
    FTR = "FTR"

    def __str__(self):
        return self.value


RESERVED = (SlotState.RT, SlotState.RR)


class SlotTable:
    """Per data slot: state, peer (for RT/RR) and packet backing an RT entry."""

    def __init__(self, n_slots: int, node=None, on_change=None):
        self.n_slots = n_slots
        self.node = node
        self.on_change = on_change
        self.states = [SlotState.FTR] * n_slots
        self.peers = [None] * n_slots
        self.packets = [None] * n_slots
        # reservation id per RT slot; slots granted by one CTS share it
        self.grant_ids = [None] * n_slots

    def __getitem__(self, slot: int) -> SlotState:
        return self.states[slot]

    def __len__(self):
        return self.n_slots

    def set(self, slot, state, peer=None, cause="", packet=None, grant_id=None):
        old = self.states[slot]
        self.states[slot] = state
        reserved = state in RESERVED
        self.peers[slot] = peer if reserved else None
        self.packets[slot] = packet if state is SlotState.RT else None
        self.grant_ids[slot] = grant_id if state is SlotState.RT else None
        if old is not state and self.on_change:
            self.on_change(self.node, slot, old, state, cause)

    def slots_in(self, *states) -> set:
        return {s for s, st in enumerate(self.states) if st in states}

    def rr_slots(self) -> set:
        return self.slots_in(SlotState.RR)

    def reset(self) -> None:
        for s in range(self.n_slots):
            if self.states[s] is not SlotState.FTR:
                self.set(s, SlotState.FTR, cause="reset")
            else:
                self.peers[s] = self.packets[s] = self.grant_ids[s] = None

    def check(self) -> None:
        for s, st in enumerate(self.states):
            has_peer = self.peers[s] is not None
            if (st in RESERVED) != has_peer:
                raise AssertionError(f"slot {s}: state {st} with peer {self.peers[s]}")


def free_tx_set(table: SlotTable) -> set:
    return table.slots_in(SlotState.FT, SlotState.FTR)


def free_rx_set(table: SlotTable) -> set:
    return table.slots_in(SlotState.FR, SlotState.FTR)


@dataclass
class ContentionState:
    persistence_p: float
    rng: object
    requested: frozenset = frozenset()
    withdrawn: bool = False

    def __post_init__(self):
        if not 0.0 <= self.persistence_p <= 1.0:
            raise ValueError("persistence must lie in [0, 1]")


def choose_request(state: ContentionState, table: SlotTable, needed: int, *,
                   src=0, dst=0, minimum=None):
    """p-persistent RTS decision for one triple.

    Asks for ``needed`` slots drawn uniformly from the free-for-transmission
    set.  When fewer than ``minimum`` (default ``needed``) are free the node
    withdraws for the rest of the frame.  With ``minimum < needed`` the
    request shrinks to what is free.
    """
    if state.withdrawn or needed < 1:
        return None
    if state.rng.random() >= state.persistence_p:
        return None
    minimum = needed if minimum is None else minimum
    free = sorted(free_tx_set(table))
    if len(free) < minimum:
        state.withdrawn = True
        return None
    slots = frozenset(state.rng.sample(free, min(needed, len(free))))
    state.requested = slots
    return RTS(src, dst, slots)


class RtsOutcome(NamedTuple):
    reply: object = None
    # ("grant", src, slots) for a receiver awaiting CONF,
    # ("overheard", src, slots) for a third party awaiting CONF
    pending: tuple | None = None


def on_rts_minislot(node, obs, table: SlotTable, grant_policy="partial",
                    paranoid_ncts=False) -> RtsOutcome:
    rts = heard(obs, RTS)
    if rts is not None and rts.dst == node:
        grant = rts.slots & free_rx_set(table)
        if grant_policy == "all_or_nothing" and grant != rts.slots:
            grant = frozenset()
        if not grant:
            return RtsOutcome()
        return RtsOutcome(CTS(node, rts.src, frozenset(grant)), ("grant", rts.src, frozenset(grant)))
    if rts is not None:
        if rts.slots & table.rr_slots():
            return RtsOutcome(NCTS(node))
        return RtsOutcome(None, ("overheard", rts.src, rts.slots))
    if isinstance(obs, Collision) and (paranoid_ncts or table.rr_slots()):
        return RtsOutcome(NCTS(node))
    return RtsOutcome()


def on_ncts_minislot(sender, obs, rts: RTS, table: SlotTable, station=None, grant_id=None):
    """RTS sender's reaction to the (N)CTS mini-slot; returns CONF or None."""
    cts = heard(obs, CTS)
    if cts is None or cts.dst != sender or cts.src != rts.dst:
        return None
    if not cts.slots <= rts.slots:
        raise ProtocolViolation(f"CTS grants {sorted(cts.slots - rts.slots)} never requested")
    packets = station.assign(cts.slots, rts.dst) if station is not None else {}
    for s in sorted(cts.slots):
        table.set(s, SlotState.RT, peer=rts.dst, cause="cts", packet=packets.get(s), grant_id=grant_id)
    return CONF(sender, rts.dst, cts.slots)


def on_conf_minislot(node, obs, table: SlotTable, pending=None) -> None:
    """Receiver confirms its grant; anyone overhearing a CONF learns FT."""
    conf = heard(obs, CONF)
    if conf is None:
        return
    if conf.dst == node:
        if pending and pending[0] == "grant" and pending[1] == conf.src:
            if not conf.slots <= pending[2]:
                raise ProtocolViolation("CONF names slots that were not granted")
            for s in sorted(conf.slots):
                table.set(s, SlotState.RR, peer=conf.src, cause="conf")
        return
    for s in sorted(conf.slots):
        # a neighbor transmits here: the slot can no longer be received in
        if table[s] in (SlotState.FTR, SlotState.FR):
            table.set(s, SlotState.FT, cause="conf")


def overheard_cts(node, obs, table: SlotTable) -> None:
    cts = heard(obs, CTS)
    if cts is None or cts.dst == node:
        return
    for s in sorted(cts.slots):
        if table[s] is SlotState.FTR:
            table.set(s, SlotState.FR, cause="cts")


class Decision(enum.Enum):
    TRANSMIT = "transmit"
    DEFER_AND_RELEASE = "defer"


def rb_decision(transmitter, slot, obs, ablation=False) -> Decision:
    if ablation:
        return Decision.TRANSMIT
    rb = heard(obs, RB)
    if rb is not None and rb.transmitter == transmitter and rb.slot == slot:
        return Decision.TRANSMIT
    return Decision.DEFER_AND_RELEASE


def release(table: SlotTable, slot: int) -> list:
    """Drop RT for ``slot`` and every later slot of the same grant."""
    gid = table.grant_ids[slot]
    dropped = []
    for s in range(slot, table.n_slots):
        if table[s] is SlotState.RT and (s == slot or (gid is not None and table.grant_ids[s] == gid)):
            table.set(s, SlotState.FTR, cause="rb-defer")
            dropped.append(s)
    return dropped


def overheard_rb(node, obs, table: SlotTable) -> None:
    rb = heard(obs, RB)
    if rb is None or table[rb.slot] in RESERVED:
        return
    if table[rb.slot] is SlotState.FTR:
        table.set(rb.slot, SlotState.FR, cause="rb")


def ack_phase(receiver, slot, data_obs):
    frame = heard(data_obs, DataFrame)
    if frame is not None and frame.dst == receiver and frame.slot == slot:
        return ACK(receiver, frame.src, slot)
    return None


def transmitter_on_ack(transmitter, slot, obs) -> bool:
    ack = heard(obs, ACK)
    return ack is not None and ack.transmitter == transmitter and ack.slot == slot


def end_of_frame(table: SlotTable) -> SlotTable:
    table.reset()
    return table


# -- per-node driver --------------------------------------------------------

@dataclass
class RsvNode:
    """Protocol state of one node, advanced lock-step by the engine."""

    node: int
    table: SlotTable
    contention: ContentionState
    station: Station
    grant_policy: str = "partial"
    paranoid_ncts: bool = False
    rb_ablation: bool = False
    # scripted contention: triple -> requested slots (None = random draw)
    script: dict | None = None
    rts: RTS | None = None
    pending: tuple | None = None
    grants: int = 0
    log: object = field(default=None, repr=False)

    def rts_step(self, triple: int):
        self.rts = None
        self.pending = None
        need = self.station.request_need(self.table.n_slots)
        if need is None:
            return None
        dst, head_need, bundle = need
        if self.script is not None:
            if triple not in self.script:
                return None
            wanted = self.script[triple]
            free = free_tx_set(self.table)
            if wanted is None:
                wanted = sorted(free)[:bundle]
            slots = frozenset(sorted(s for s in wanted if s in free)[:bundle])
            if not slots:
                return None
            self.rts = RTS(self.node, dst, slots)
            return self.rts
        self.rts = choose_request(self.contention, self.table, bundle,
                                  src=self.node, dst=dst, minimum=head_need)
        if self.contention.withdrawn and self.log:
            self.log(self.node, "withdraw", f"need={head_need}")
        return self.rts

    def cts_step(self, obs):
        if self.rts is not None:
            return None
        out = on_rts_minislot(self.node, obs, self.table, self.grant_policy, self.paranoid_ncts)
        self.pending = out.pending
        return out.reply

    def conf_step(self, obs):
        if self.rts is None:
            overheard_cts(self.node, obs, self.table)
            return None
        conf = on_ncts_minislot(self.node, obs, self.rts, self.table, self.station,
                                grant_id=(self.node, self.grants))
        if conf is None:
            overheard_cts(self.node, obs, self.table)
        else:
            self.grants += 1
        return conf

    def after_conf(self, obs, sent_conf: bool):
        if not sent_conf:
            on_conf_minislot(self.node, obs, self.table, self.pending)
        self.pending = None

    def reset_frame(self):
        end_of_frame(self.table)
        self.contention.withdrawn = False
        self.contention.requested = frozenset()
        self.station.end_frame()
        self.rts = None
        self.pending = None
