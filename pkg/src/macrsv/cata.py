"""Simplified CATA: every data slot is contended only in its own RTS/CTS pair.

Each data slot is laid out as RTS, CTS, DATA, ACK.  There is no CONF, no
NCTS jamming and no receive beacon.  Nodes keep a three-state table per
slot (free / busy-tx / busy-rx) built from overheard RTS and CTS, reset at
every frame.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .core import CTS, RTS, DataFrame, FrameConfig, Station, heard
from .rsv import ack_phase, transmitter_on_ack


class CataSlot(str, enum.Enum):
    FREE = "free"
    BUSY_TX = "busy-tx"
    BUSY_RX = "busy-rx"


@dataclass(frozen=True)
class CataConfig:
    data_slots: int
    persistence_p: float
    control_bytes: int
    data_payload_bytes: int
    channel_rate_bps: float

    @classmethod
    def from_frame(cls, cfg: FrameConfig, p: float) -> CataConfig:
        return cls(cfg.data_slots_N, p, cfg.control_bytes, cfg.data_payload_bytes, cfg.channel_rate_bps)

    @property
    def slot_period_s(self) -> float:
        return (3 * self.control_bytes + self.data_payload_bytes) * 8 / self.channel_rate_bps


def cata_frame_duration_s(cfg: CataConfig) -> float:
    return cfg.data_slots * cfg.slot_period_s


@dataclass
class CataNode:
    node: int
    n_slots: int
    persistence_p: float
    rng: object
    station: Station
    table: list = field(default_factory=list)
    reserved: dict = field(default_factory=dict)  # slot -> (dst, packet)

    def __post_init__(self):
        self.reset_frame()

    def reset_frame(self):
        self.table = [CataSlot.FREE] * self.n_slots
        self.reserved = {}
        self.station.end_frame()


def cata_rts(node: CataNode, slot: int):
    """RTS for ``slot`` in its own mini-slot, with probability p."""
    need = node.station.request_need(1)
    if need is None or node.table[slot] is not CataSlot.FREE:
        return None
    if node.rng.random() >= node.persistence_p:
        return None
    return RTS(node.node, need[0], frozenset({slot}))


def cata_cts(node: CataNode, slot: int, obs):
    """Receiver answers a clean RTS iff the slot is free in its table."""
    rts = heard(obs, RTS)
    if rts is None:
        return None
    if rts.dst != node.node:
        node.table[slot] = CataSlot.BUSY_TX
        return None
    if node.table[slot] is CataSlot.FREE:
        return CTS(node.node, rts.src, frozenset({slot}))
    return None


def cata_contend(node: CataNode, slot: int, rts: RTS, obs) -> bool:
    """Sender side after the CTS mini-slot: True when the slot is reserved."""
    cts = heard(obs, CTS)
    if cts is None or cts.dst != node.node or cts.src != rts.dst:
        return False
    pkt = node.station.assign({slot}, rts.dst).get(slot)
    node.reserved[slot] = (rts.dst, pkt)
    return True


def cata_overheard_cts(node: CataNode, slot: int, obs) -> None:
    cts = heard(obs, CTS)
    if cts is not None and cts.dst != node.node:
        node.table[slot] = CataSlot.BUSY_RX


def cata_frame(sim) -> None:
    """One CATA frame on the engine's ``Simulation`` (which supplies
    ``nodes``, ``broadcast`` and ``credit``)."""
    nodes = sim.nodes
    order = sorted(nodes)
    period = sim.cata.slot_period_s
    for slot in range(sim.cata.data_slots):
        rts = {}
        for v in order:
            msg = cata_rts(nodes[v], slot)
            if msg is not None:
                rts[v] = msg
        obs = sim.broadcast("rts", slot, rts)
        cts = {}
        for v in order:
            if v in rts:
                continue
            reply = cata_cts(nodes[v], slot, obs[v])
            if reply is not None:
                cts[v] = reply
        obs = sim.broadcast("cts", slot, cts)
        data = {}
        for v in order:
            if v in rts:
                if cata_contend(nodes[v], slot, rts[v], obs[v]):
                    dst, pkt = nodes[v].reserved[slot]
                    if pkt is not None:
                        data[v] = DataFrame(v, dst, slot, pkt.pid)
            elif v not in cts:
                cata_overheard_cts(nodes[v], slot, obs[v])
        obs = sim.broadcast("data", slot, data)
        acks = {}
        for frame in data.values():
            ack = ack_phase(frame.dst, slot, obs[frame.dst])
            if ack is not None:
                acks[frame.dst] = ack
        obs = sim.broadcast("ack", slot, acks)
        end_s = sim.frame_start_s + (slot + 1) * period
        for v, frame in data.items():
            if transmitter_on_ack(v, slot, obs[v]):
                sim.credit(v, nodes[v].reserved[slot][1], end_s)
    sim.reserved_count = sum(len(n.reserved) for n in nodes.values())

