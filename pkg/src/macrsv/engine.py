"""Frame-by-frame simulation loop, infinite-population Monte Carlo and metrics."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .cata import CataConfig, CataNode, cata_frame, cata_frame_duration_s
from .channel import Static, Topology, resolve, step_mobility
from .core import (ACK, CONF, CTS, NCTS, RB, RTS, Collision, DataFrame, FrameConfig,
                   Packet, Station, TraceRecord, encode, frame_duration_s, kv)
from .errors import ConfigError, DataCollision, MacRsvError
from .rsv import (ContentionState, Decision, RsvNode, SlotState, SlotTable, ack_phase,
                  overheard_rb, rb_decision, release, transmitter_on_ack)

PROTOCOLS = ("rsv", "cata")
GRANT_POLICIES = ("partial", "all_or_nothing")


class InvariantViolation(MacRsvError):
    pass


@dataclass(frozen=True)
class Traffic:
    """``flows``: fixed (src, dst) pairs.  ``poisson``: every node is a source
    and picks a uniform current neighbor per packet.  ``rate_pps`` is the
    Poisson rate per source; ``backlog`` packets per source exist at t=0."""

    kind: str = "poisson"
    rate_pps: float = 0.0
    flows: tuple = ()
    backlog: int = 0

    def sources(self, topo: Topology) -> list:
        if self.kind == "flows":
            return [tuple(f) for f in self.flows]
        return [(v, None) for v in topo.nodes]


@dataclass(frozen=True)
class PacketSize:
    size_bytes: int | None = None
    geometric_q: float | None = None

    def mean_slots(self, cfg: FrameConfig) -> float:
        if self.geometric_q is not None:
            pmf = analysis.packet_length_pmf(self.geometric_q, cfg.data_slots_N)
            return float(np.arange(1, cfg.data_slots_N + 1) @ pmf)
        return math.ceil(self.size_bytes / cfg.data_payload_bytes)

    def mean_bits(self, cfg: FrameConfig) -> float:
        if self.geometric_q is not None:
            return self.mean_slots(cfg) * cfg.payload_bits
        return self.size_bytes * 8


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Topology
    frame: FrameConfig
    traffic: Traffic
    packet: PacketSize = PacketSize(size_bytes=1044)
    mobility: object = Static()
    protocol: str = "rsv"
    persistence_p: float = 0.175
    frames: int = 100
    seed: int = 1
    grant_policy: str = "partial"
    paranoid_ncts: bool = False
    rb_ablation: bool = False
    warmup_fraction: float = 0.1
    one_hop: bool = True
    # node -> {triple: slots or None}; scripted nodes ignore the persistence coin
    script: dict = field(default_factory=dict)
    # serialisable description of how ``topology`` was built
    topology_spec: dict | None = None

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.grant_policy not in GRANT_POLICIES:
            raise ConfigError(f"grant_policy must be one of {GRANT_POLICIES}")
        if not 0.0 < self.persistence_p <= 1.0:
            raise ConfigError("persistence must lie in (0, 1]")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup fraction must lie in [0, 1)")
        if (self.packet.size_bytes is None) == (self.packet.geometric_q is None):
            raise ConfigError("give exactly one of packet size_bytes / geometric_q")
        if self.packet.size_bytes is not None:
            if self.packet.size_bytes < 1:
                raise ConfigError("packet size must be >= 1 byte")
            if math.ceil(self.packet.size_bytes / self.frame.data_payload_bytes) > self.frame.data_slots_N:
                raise ConfigError("fixed packet size exceeds one frame of data slots")
        elif not 0.0 < self.packet.geometric_q < 1.0:
            raise ConfigError("geometric_q must lie in (0, 1)")
        if self.traffic.kind not in ("poisson", "flows"):
            raise ConfigError("traffic kind must be poisson or flows")
        if self.traffic.rate_pps < 0 or self.traffic.backlog < 0:
            raise ConfigError("traffic rate and backlog must be non-negative")
        nodes = set(self.topology.nodes)
        for src, dst in self.traffic.flows:
            if src not in nodes or dst not in nodes or src == dst:
                raise ConfigError(f"flow {src}>{dst} names unknown or identical nodes")
            if self.one_hop and isinstance(self.mobility, Static) and dst not in self.topology.neighbors(src):
                raise ConfigError(f"flow {src}>{dst} is not one hop")
        for v in self.script:
            if v not in nodes:
                raise ConfigError(f"script names unknown node {v}")

    @property
    def frame_s(self) -> float:
        if self.protocol == "cata":
            return cata_frame_duration_s(CataConfig.from_frame(self.frame, self.persistence_p))
        return frame_duration_s(self.frame)

    @property
    def offered_load_bps(self) -> float:
        n = len(self.traffic.sources(self.topology))
        return n * self.traffic.rate_pps * self.packet.mean_bits(self.frame)

    def rate_for_load(self, load_bps: float) -> float:
        """Per-source packet rate giving an aggregate offered load of ``load_bps``."""
        n = len(self.traffic.sources(self.topology))
        return load_bps / (n * self.packet.mean_bits(self.frame))

    @property
    def warmup_frames(self) -> int:
        return int(self.frames * self.warmup_fraction)


# -- metrics -----------------------------------------------------------------

COLLISION_KINDS = ("RTS", "CTS", "CONF", "RB", "DATA", "ACK")


@dataclass
class Metrics:
    aggregate_throughput_bps: float = 0.0
    mean_delay_s: float = 0.0
    reserved_per_frame: list = field(default_factory=list)
    collisions: dict = field(default_factory=lambda: dict.fromkeys(COLLISION_KINDS, 0))
    deadlock_deferrals: int = 0
    arrived: int = 0
    delivered: int = 0
    dropped: int = 0
    delivered_bits: int = 0
    frames: int = 0

    @property
    def data_collisions(self) -> int:
        return self.collisions["DATA"]


def collect_metrics(trace, frame_s: float, frames: int | None = None, warmup_frames: int = 0) -> Metrics:
    """Fold trace records into Metrics.

    Throughput counts acknowledged payload bits in frames >= ``warmup_frames``;
    delay is arrival to final ACK for packets completed in that window.
    """
    m = Metrics()
    delays = []
    last = -1
    reserved = {}
    for rec in trace:
        last = max(last, rec.frame)
        a = rec.action
        if a == "arrive":
            m.arrived += 1
        elif a == "drop":
            m.dropped += 1
        elif a == "collision":
            m.collisions[kv(rec.detail)["kind"]] += 1
        elif a == "defer":
            m.deadlock_deferrals += 1
        elif a == "reserved":
            reserved[rec.frame] = int(kv(rec.detail)["slots"])
        elif rec.frame >= warmup_frames:
            if a == "acked":
                m.delivered_bits += int(kv(rec.detail)["bits"])
            elif a == "delivered":
                m.delivered += 1
                delays.append(float(kv(rec.detail)["delay"]))
    frames = frames if frames is not None else last + 1
    m.frames = max(frames, 0)
    m.reserved_per_frame = [reserved.get(f, 0) for f in range(m.frames)]
    window = (m.frames - warmup_frames) * frame_s
    if window > 0:
        m.aggregate_throughput_bps = m.delivered_bits / window
    if delays:
        m.mean_delay_s = math.fsum(delays) / len(delays)
    return m


@dataclass
class RunResult:
    scenario: Scenario
    metrics: Metrics
    trace: list

    @property
    def offered_load_bps(self) -> float:
        return self.scenario.offered_load_bps


def _addressee(msg):
    if isinstance(msg, (RTS, CTS, CONF, DataFrame)):
        return msg.dst
    if isinstance(msg, (RB, ACK)):
        return msg.transmitter
    return None


def _kind(msg) -> str:
    return "DATA" if isinstance(msg, DataFrame) else type(msg).__name__


def _stream(seed: int, *key) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


# actions the metrics fold needs even when no trace was requested
_METRIC_ACTIONS = {"arrive", "drop", "collision", "defer", "reserved", "acked", "delivered"}


class Simulation:
    """State of one run.  Use ``run(scenario)``."""

    def __init__(self, scenario: Scenario, keep_trace: bool = False, check_conservation: bool = True):
        scenario.validate()
        self.sc = scenario
        self.cfg = scenario.frame
        self.keep_trace = keep_trace
        self.check_conservation = check_conservation
        self.records = []
        self.topology = scenario.topology
        self.frame = 0
        self.frame_s = scenario.frame_s
        self.frame_start_s = 0.0
        self.static = isinstance(scenario.mobility, Static)
        self.strict = self.static and not scenario.rb_ablation and scenario.protocol == "rsv"
        self.traffic_rng = np.random.default_rng(_stream(scenario.seed, 1))
        self.mobility_rng = np.random.default_rng(_stream(scenario.seed, 2))
        self.arrived = self.delivered = self.dropped = 0
        self.next_pid = 0
        self.reserved_count = 0
        self.stations = {v: Station(v) for v in self.topology.nodes}
        self.cata = None
        if scenario.protocol == "cata":
            self.cata = CataConfig.from_frame(self.cfg, scenario.persistence_p)
            self.nodes = {
                v: CataNode(v, self.cfg.data_slots_N, scenario.persistence_p,
                            random.Random(_stream(scenario.seed, 3, v)), self.stations[v])
                for v in self.topology.nodes}
        else:
            self.nodes = {}
            for v in self.topology.nodes:
                table = SlotTable(self.cfg.data_slots_N, node=v,
                                  on_change=self._on_mark if keep_trace else None)
                rng = random.Random(_stream(scenario.seed, 3, v))
                self.nodes[v] = RsvNode(
                    v, table, ContentionState(scenario.persistence_p, rng), self.stations[v],
                    scenario.grant_policy, scenario.paranoid_ncts, scenario.rb_ablation,
                    script=scenario.script.get(v), log=self._log_withdraw)
        self._phase = "frame"
        self._index = 0

    # -- records ---------------------------------------------------------
    def emit(self, phase, index, node, action, detail=""):
        if self.keep_trace or action in _METRIC_ACTIONS:
            self.records.append(TraceRecord(self.frame, phase, index, node, action, detail))

    def _on_mark(self, node, slot, old, new, cause):
        self.emit(self._phase, self._index, node, "mark",
                  f"slot={slot} old={old} new={new} cause={cause}")

    def _log_withdraw(self, node, action, detail):
        self.emit(self._phase, self._index, node, action, detail)

    def broadcast(self, phase, index, transmissions: dict) -> dict:
        """Resolve one mini-slot and log sends plus collisions at addressees."""
        self._phase, self._index = phase, index
        obs = resolve(transmissions.items(), self.topology)
        for v, msg in transmissions.items():
            if self.keep_trace:
                self.emit(phase, index, v, "send", encode(msg))
            to = _addressee(msg)
            if to is not None and isinstance(obs[to], Collision):
                self.emit(phase, index, to, "collision", f"kind={_kind(msg)} src={v}")
        return obs

    def credit(self, v, pkt, when_s):
        if pkt is None:
            return
        bits, done = self.stations[v].credit(pkt, self.cfg.data_payload_bytes)
        self.emit(self._phase, self._index, v, "acked", f"pid={pkt.pid} bits={bits}")
        if done:
            self.delivered += 1
            self.emit(self._phase, self._index, v, "delivered",
                      f"pid={pkt.pid} delay={when_s - pkt.arrival_time_s!r}")

    # -- traffic -----------------------------------------------------------
    def _new_packet(self, src, dst, t):
        if self.sc.packet.geometric_q is not None:
            pmf = analysis.packet_length_pmf(self.sc.packet.geometric_q, self.cfg.data_slots_N)
            L = int(self.traffic_rng.choice(len(pmf), p=pmf)) + 1
            size = L * self.cfg.data_payload_bytes
        else:
            size = self.sc.packet.size_bytes
            L = math.ceil(size / self.cfg.data_payload_bytes)
        self.arrived += 1
        pid = self.next_pid
        self.next_pid += 1
        if dst is None:
            nb = sorted(self.topology.neighbors(src))
            if not nb:
                self.dropped += 1
                self.emit("arrival", 0, src, "arrive", f"pid={pid} dst=-1 slots={L} t={t!r}")
                self.emit("arrival", 0, src, "drop", f"pid={pid} reason=no-neighbor")
                return
            dst = nb[int(self.traffic_rng.integers(len(nb)))]
        self.emit("arrival", 0, src, "arrive", f"pid={pid} dst={dst} slots={L} t={t!r}")
        self.stations[src].queue.append(Packet(pid, src, dst, L, t, size))

    def _admit(self):
        tr = self.sc.traffic
        sources = tr.sources(self.topology)
        if self.frame == 0:
            for src, dst in sources:
                for _ in range(tr.backlog):
                    self._new_packet(src, dst, 0.0)
            return
        lo = (self.frame - 1) * self.frame_s
        if tr.rate_pps <= 0:
            return
        batch = []
        for src, dst in sources:
            n = int(self.traffic_rng.poisson(tr.rate_pps * self.frame_s))
            times = np.sort(self.traffic_rng.uniform(lo, lo + self.frame_s, size=n))
            batch.extend((float(t), src, dst) for t in times)
        for t, src, dst in batch:
            self._new_packet(src, dst, t)

    def _drop_broken_links(self):
        for v, st in self.stations.items():
            nb = self.topology.neighbors(v)
            for pkt in [p for p in st.queue if p.dst not in nb]:
                st.queue.remove(pkt)
                self.dropped += 1
                self.emit("arrival", 0, v, "drop", f"pid={pkt.pid} reason=link-lost")

    # -- MAC-RSV frame -----------------------------------------------------
    def _rsv_signaling(self):
        nodes = self.nodes
        order = self.topology.nodes
        for k in range(self.cfg.triples_K):
            self._phase, self._index = "rts", k
            rts = {}
            for v in order:
                msg = nodes[v].rts_step(k)
                if msg is not None:
                    rts[v] = msg
            obs = self.broadcast("rts", k, rts)
            replies = {}
            for v in order:
                reply = nodes[v].cts_step(obs[v])
                if reply is not None:
                    replies[v] = reply
            obs = self.broadcast("cts", k, replies)
            confs = {}
            for v in order:
                if v in replies:
                    continue
                conf = nodes[v].conf_step(obs[v])
                if conf is not None:
                    confs[v] = conf
            obs = self.broadcast("conf", k, confs)
            for v in order:
                nodes[v].after_conf(obs[v], v in confs)

    def _rsv_data(self):
        nodes = self.nodes
        order = self.topology.nodes
        cfg = self.cfg
        reserved = 0
        for node in nodes.values():
            reserved += len(node.table.slots_in(SlotState.RT))
        self.reserved_count = reserved
        for s in range(cfg.data_slots_N):
            rbs = {v: RB(v, nodes[v].table.peers[s], s) for v in order
                   if nodes[v].table[s] is SlotState.RR}
            obs = self.broadcast("rb", s, rbs)
            data = {}
            for v in order:
                table = nodes[v].table
                state = table[s]
                if state is SlotState.RT:
                    if rb_decision(v, s, obs[v], ablation=self.sc.rb_ablation) is Decision.TRANSMIT:
                        pkt = table.packets[s]
                        if pkt is not None:
                            data[v] = DataFrame(v, table.peers[s], s, pkt.pid)
                    else:
                        dropped = release(table, s)
                        self.emit("rb", s, v, "defer", f"slots={'|'.join(map(str, dropped))}")
                elif state is not SlotState.RR:
                    overheard_rb(v, obs[v], table)
            obs = self.broadcast("data", s, data)
            if self.strict:
                for v, frame in data.items():
                    if isinstance(obs[frame.dst], Collision):
                        raise DataCollision(
                            f"frame {self.frame} slot {s}: data {v}->{frame.dst} collided",
                            trace=self.records[-200:])
            acks = {}
            for v in order:
                if nodes[v].table[s] is SlotState.RR:
                    ack = ack_phase(v, s, obs[v])
                    if ack is not None:
                        acks[v] = ack
            obs = self.broadcast("ack", s, acks)
            end_s = self.frame_start_s + cfg.ack_end_s(s)
            for v in data:
                if transmitter_on_ack(v, s, obs[v]):
                    self.credit(v, nodes[v].table.packets[s], end_s)

    # -- main loop -------------------------------------------------------------
    def _conservation(self):
        queued = partial = 0
        for st in self.stations.values():
            q, p = st.counts()
            queued += q
            partial += p
        if self.arrived != self.delivered + queued + partial + self.dropped:
            raise InvariantViolation(
                f"frame {self.frame}: arrived {self.arrived} != delivered {self.delivered} "
                f"+ queued {queued} + in-flight {partial} + dropped {self.dropped}")
        return queued, partial

    def run(self) -> RunResult:
        sc = self.sc
        for f in range(sc.frames):
            self.frame = f
            self.frame_start_s = f * self.frame_s
            self._admit()
            if not self.static:
                self._drop_broken_links()
            if self.cata is not None:
                cata_frame(self)
            else:
                self._rsv_signaling()
                self._rsv_data()
            self.emit("frame", 0, -1, "reserved", f"slots={self.reserved_count}")
            for node in self.nodes.values():
                node.reset_frame()
            if self.check_conservation:
                self._conservation()
            if not self.static:
                self.topology = step_mobility(self.topology, sc.mobility, self.frame_s, self.mobility_rng)
        metrics = collect_metrics(self.records, self.frame_s, sc.frames, sc.warmup_frames)
        trace = self.records if self.keep_trace else []
        return RunResult(sc, metrics, trace)


def run(scenario: Scenario, keep_trace: bool = False) -> RunResult:
    return Simulation(scenario, keep_trace=keep_trace).run()


# -- infinite terminal population -------------------------------------------

def run_infinite_population(K, N, q, p, T, tau, frames, seed=1):
    """Monte Carlo of the fully connected, fresh-node-per-packet model.

    Returns an (frames, 3) int array of (N_c, J, R) per frame: contenders at
    the frame start, whole-packet reservations won, slots reserved.
    Contenders are exchangeable apart from their packet length, so the state
    is kept as a count per length instead of a list of nodes.
    """
    load = 0.0 if math.isinf(tau) else T / tau
    rng = np.random.default_rng(_stream(seed, 10))
    arrivals = rng.poisson(load, frames)
    pmf = analysis.packet_length_pmf(q, N)
    counts = np.zeros(N + 1, dtype=np.int64)  # counts[L] for L = 1..N
    out = np.zeros((frames, 3), dtype=np.int64)
    for f in range(frames):
        n_c = int(counts.sum())
        reserved = won = 0
        for _ in range(K):
            room = N - reserved
            elig = counts[1:room + 1]
            e = int(elig.sum())
            if e == 0:
                break
            if rng.binomial(e, p) == 1:
                # the lone sender is uniform over eligible contenders
                L = 1 + int(np.searchsorted(np.cumsum(elig), rng.integers(e), side="right"))
                counts[L] -= 1
                reserved += L
                won += 1
        out[f] = (n_c, won, reserved)
        if arrivals[f]:
            counts[1:] += rng.multinomial(arrivals[f], pmf)
    return out
