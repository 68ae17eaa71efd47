"""Frame geometry, packets, control messages and radio observations."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Union

from .errors import ConfigError, OversizePacket

NodeId = int


@dataclass(frozen=True)
class FrameConfig:
    """TDMA frame: K RTS/(N)CTS/CONF triples followed by N data slots.

    Each data slot is bracketed by an RB mini-slot and an ACK mini-slot.  All
    mini-slots carry ``control_bytes``.
    """

    triples_K: int
    data_slots_N: int
    control_bytes: int
    data_payload_bytes: int
    channel_rate_bps: float

    def __post_init__(self):
        if self.triples_K < 1 or self.data_slots_N < 1:
            raise ConfigError("triples_K and data_slots_N must be >= 1")
        if self.control_bytes < 1 or self.data_payload_bytes < 1:
            raise ConfigError("byte sizes must be >= 1")
        if not self.channel_rate_bps > 0:
            raise ConfigError("channel_rate_bps must be > 0")

    @property
    def minislot_s(self) -> float:
        return self.control_bytes * 8 / self.channel_rate_bps

    @property
    def data_s(self) -> float:
        return self.data_payload_bytes * 8 / self.channel_rate_bps

    @property
    def signaling_s(self) -> float:
        return 3 * self.triples_K * self.minislot_s

    @property
    def slot_period_s(self) -> float:
        """RB + data + ACK."""
        return 2 * self.minislot_s + self.data_s

    @property
    def payload_bits(self) -> int:
        return self.data_payload_bytes * 8

    def ack_end_s(self, slot: int) -> float:
        """Offset from frame start to the end of ``slot``'s ACK mini-slot."""
        return self.signaling_s + (slot + 1) * self.slot_period_s


TABLE_I = FrameConfig(triples_K=14, data_slots_N=25, control_bytes=20,
                      data_payload_bytes=1044, channel_rate_bps=2e6)


def frame_duration_s(cfg: FrameConfig) -> float:
    bits = (3 * cfg.triples_K * cfg.control_bytes * 8
            + cfg.data_slots_N * (2 * cfg.control_bytes * 8 + cfg.data_payload_bytes * 8))
    return bits / cfg.channel_rate_bps


def packet_from_bytes(nbytes: int, cfg: FrameConfig, policy: str = "reject") -> int:
    """Number of data slots a payload of ``nbytes`` occupies."""
    if nbytes < 1:
        raise ValueError("payload must be at least one byte")
    slots = math.ceil(nbytes / cfg.data_payload_bytes)
    if slots > cfg.data_slots_N and policy == "reject":
        raise OversizePacket(f"{nbytes} B needs {slots} slots, frame has {cfg.data_slots_N}")
    return slots


@dataclass
class Packet:
    pid: int
    src: NodeId
    dst: NodeId
    length_slots_L: int
    arrival_time_s: float
    size_bytes: int
    remaining_slots: int = -1
    bytes_left: int = -1

    def __post_init__(self):
        if self.length_slots_L < 1:
            raise ValueError("packet needs at least one slot")
        if self.remaining_slots < 0:
            self.remaining_slots = self.length_slots_L
        if self.bytes_left < 0:
            self.bytes_left = self.size_bytes
        if self.remaining_slots > self.length_slots_L:
            raise ValueError("remaining_slots exceeds packet length")

    @property
    def in_flight(self) -> bool:
        return 0 < self.remaining_slots < self.length_slots_L


# -- control messages ------------------------------------------------------

@dataclass(frozen=True)
class RTS:
    src: NodeId
    dst: NodeId
    slots: frozenset


@dataclass(frozen=True)
class CTS:
    src: NodeId
    dst: NodeId
    slots: frozenset


@dataclass(frozen=True)
class NCTS:
    src: NodeId


@dataclass(frozen=True)
class CONF:
    src: NodeId
    dst: NodeId
    slots: frozenset


@dataclass(frozen=True)
class RB:
    receiver: NodeId
    transmitter: NodeId
    slot: int


@dataclass(frozen=True)
class ACK:
    receiver: NodeId
    transmitter: NodeId
    slot: int


@dataclass(frozen=True)
class DataFrame:
    src: NodeId
    dst: NodeId
    slot: int
    pid: int


ControlMessage = Union[RTS, CTS, NCTS, CONF, RB, ACK]
Message = Union[RTS, CTS, NCTS, CONF, RB, ACK, DataFrame]

_KINDS = {cls.__name__: cls for cls in (RTS, CTS, NCTS, CONF, RB, ACK, DataFrame)}
_KINDS["DATA"] = _KINDS.pop("DataFrame")


def check_slots(msg, n_slots: int) -> None:
    """Raise ValueError when a message names an empty or out-of-range slot set."""
    slots = getattr(msg, "slots", None)
    if slots is None:
        slot = getattr(msg, "slot", None)
        slots = () if slot is None else (slot,)
    elif not slots:
        raise ValueError(f"{type(msg).__name__} with empty slot set")
    for s in slots:
        if not 0 <= s < n_slots:
            raise ValueError(f"slot {s} outside 0..{n_slots - 1}")


def encode(msg: Message) -> str:
    """Text form used in trace records, e.g. ``RTS src=3 dst=7 slots=2|5``."""
    name = "DATA" if isinstance(msg, DataFrame) else type(msg).__name__
    parts = [name]
    for key, value in vars(msg).items():
        if isinstance(value, frozenset):
            value = "|".join(str(s) for s in sorted(value))
        parts.append(f"{key}={value}")
    return " ".join(parts)


def decode(text: str) -> Message:
    name, *fields = text.split()
    cls = _KINDS[name]
    kwargs = {}
    for item in fields:
        key, value = item.split("=", 1)
        if key == "slots":
            kwargs[key] = frozenset(int(v) for v in value.split("|") if v)
        else:
            kwargs[key] = int(value)
    return cls(**kwargs)


# -- observations ----------------------------------------------------------

@dataclass(frozen=True)
class Silence:
    pass


@dataclass(frozen=True)
class Collision:
    pass


@dataclass(frozen=True)
class Clean:
    message: Message


SILENCE = Silence()
COLLISION = Collision()
Observation = Union[Silence, Clean, Collision]


def heard(obs: Observation, kind) -> Message | None:
    """The cleanly received message if it is of ``kind``, else None."""
    if isinstance(obs, Clean) and isinstance(obs.message, kind):
        return obs.message
    return None


# -- trace records ---------------------------------------------------------

TRACE_FIELDS = ("frame", "phase", "index", "node", "action", "detail")


@dataclass(frozen=True)
class TraceRecord:
    frame: int
    phase: str
    index: int
    node: int
    action: str
    detail: str = ""

    def row(self) -> tuple:
        return (self.frame, self.phase, self.index, self.node, self.action, self.detail)


def format_trace(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    writer.writerows(r.row() for r in records)
    return buf.getvalue()


def parse_trace(text: str) -> list[TraceRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TRACE_FIELDS:
        raise ValueError(f"unexpected trace header {header}")
    return [TraceRecord(int(f), p, int(i), int(n), a, d) for f, p, i, n, a, d in reader]


def kv(detail: str) -> dict:
    """Parse a ``key=value key=value`` trace detail."""
    out = {}
    for item in detail.split():
        if "=" in item:
            k, v = item.split("=", 1)
            out[k] = v
    return out


# -- per-node packet bookkeeping shared by both MACs -----------------------

@dataclass
class Station:
    """Queue of packets at one node plus this frame's slot assignments."""

    node: NodeId
    queue: list = field(default_factory=list)
    # pid -> slots reserved for it in the current frame
    reserved: dict = field(default_factory=dict)

    def unreserved(self, pkt: Packet) -> int:
        return pkt.remaining_slots - self.reserved.get(pkt.pid, 0)

    def request_need(self, limit: int):
        """(dst, head_need, bundle_need) for the oldest unreserved packet's
        destination, or None when every queued slot already has a reservation.

        The bundle covers queued packets to the same destination in arrival
        order, capped at ``limit`` slots.
        """
        head = None
        total = 0
        for pkt in self.queue:
            left = self.unreserved(pkt)
            if left <= 0:
                continue
            if head is None:
                head = pkt
            elif pkt.dst != head.dst:
                continue
            total += left
            if total >= limit:
                total = limit
                break
        if head is None:
            return None
        return head.dst, self.unreserved(head), total

    def assign(self, slots, dst: NodeId) -> dict:
        """Map granted slots (ascending) onto queued packets for ``dst``."""
        out = {}
        todo = sorted(slots)
        for pkt in self.queue:
            if not todo:
                break
            if pkt.dst != dst:
                continue
            left = self.unreserved(pkt)
            while left > 0 and todo:
                out[todo.pop(0)] = pkt
                self.reserved[pkt.pid] = self.reserved.get(pkt.pid, 0) + 1
                left -= 1
        return out

    def credit(self, pkt: Packet, payload_bytes: int) -> tuple[int, bool]:
        """Account one acknowledged slot; returns (payload bits, packet done)."""
        sent = min(payload_bytes, pkt.bytes_left)
        pkt.bytes_left -= sent
        pkt.remaining_slots -= 1
        done = pkt.remaining_slots == 0
        if done:
            self.queue.remove(pkt)
        return sent * 8, done

    def end_frame(self) -> None:
        self.reserved.clear()

    def counts(self) -> tuple[int, int]:
        """(queued untouched, partially delivered)."""
        partial = sum(1 for p in self.queue if p.in_flight)
        return len(self.queue) - partial, partial
