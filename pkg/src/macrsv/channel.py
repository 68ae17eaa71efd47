"""Unit-disk connectivity, random-waypoint motion and mini-slot resolution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import COLLISION, SILENCE, Clean, NodeId
from .errors import ConfigError, DuplicateSender


def _adjacency(positions: dict, range_m: float) -> dict:
    ids = sorted(positions)
    if not ids:
        return {}
    xy = np.array([positions[i] for i in ids], dtype=float)
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    near = d <= range_m
    np.fill_diagonal(near, False)
    return {v: frozenset(ids[j] for j in np.flatnonzero(near[a])) for a, v in enumerate(ids)}


@dataclass(frozen=True)
class Topology:
    positions: dict
    range_m: float
    adjacency: dict = field(default=None, compare=False)
    # random-waypoint bookkeeping: node -> (target xy, pause left in s)
    targets: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.adjacency is None:
            object.__setattr__(self, "adjacency", _adjacency(self.positions, self.range_m))

    @property
    def nodes(self) -> list:
        return sorted(self.positions)

    def neighbors(self, v: NodeId) -> frozenset:
        return self.adjacency[v]

    def degree(self, v: NodeId) -> int:
        return len(self.adjacency[v])

    def edges(self) -> set:
        return {(a, b) for a, nb in self.adjacency.items() for b in nb if a < b}

    def moved(self, positions: dict, targets: dict) -> Topology:
        return Topology(dict(positions), self.range_m, targets=dict(targets))

    def to_text(self) -> str:
        lines = [f"# range_m {self.range_m:g}"]
        for v in self.nodes:
            x, y = self.positions[v]
            lines.append(f"{v} {x:.17g} {y:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Topology:
        range_m = None
        positions = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "range_m":
                    range_m = float(parts[1])
                continue
            v, x, y = line.split()
            if int(v) in positions:
                raise ConfigError(f"duplicate node id {v}")
            positions[int(v)] = (float(x), float(y))
        if range_m is None:
            raise ConfigError("topology text lacks a '# range_m' header")
        return cls(positions, range_m)


def build_grid_mesh(rows: int, cols: int, spacing_m: float, range_m: float) -> Topology:
    """Row-major ids: node ``r * cols + c`` sits at (c*spacing, r*spacing)."""
    if rows < 1 or cols < 1:
        raise ConfigError("rows and cols must be >= 1")
    positions = {r * cols + c: (c * spacing_m, r * spacing_m)
                 for r in range(rows) for c in range(cols)}
    return Topology(positions, range_m)


def build_random(n: int, area_m: tuple, range_m: float, seed: int) -> Topology:
    w, h = area_m
    if n < 1 or w <= 0 or h <= 0:
        raise ConfigError("need n >= 1 and a positive area")
    rng = np.random.default_rng(seed)
    xy = rng.uniform((0.0, 0.0), (w, h), size=(n, 2))
    return Topology({i: (float(x), float(y)) for i, (x, y) in enumerate(xy)}, range_m)


def build_line(n: int, spacing_m: float, range_m: float) -> Topology:
    return Topology({i: (i * spacing_m, 0.0) for i in range(n)}, range_m)


# -- mobility ----------------------------------------------------------------

@dataclass(frozen=True)
class Static:
    pass


@dataclass(frozen=True)
class RandomWaypoint:
    area_m: tuple
    speed_mps: float
    pause_s: float = 0.0

    def __post_init__(self):
        if self.speed_mps < 0 or self.pause_s < 0:
            raise ConfigError("speed and pause must be non-negative")


MobilityModel = Static | RandomWaypoint


def _draw_target(rng, area):
    return (float(rng.uniform(0.0, area[0])), float(rng.uniform(0.0, area[1])))


def step_mobility(topo: Topology, model, dt: float, rng) -> Topology:
    """Advance every node by ``dt`` seconds; ``rng`` is a numpy Generator."""
    if isinstance(model, Static):
        return topo
    if dt <= 0:
        raise ValueError("dt must be positive")
    positions = {}
    targets = {}
    for v in topo.nodes:
        x, y = topo.positions[v]
        target, pause = topo.targets.get(v, (None, 0.0))
        if target is None:
            target = _draw_target(rng, model.area_m)
        left = dt
        while left > 0:
            if pause > 0:
                used = min(pause, left)
                pause -= used
                left -= used
                if pause > 0:
                    break
                target = _draw_target(rng, model.area_m)
                continue
            dist = math.hypot(target[0] - x, target[1] - y)
            if model.speed_mps == 0:
                break
            reach = model.speed_mps * left
            if reach < dist:
                x += (target[0] - x) * reach / dist
                y += (target[1] - y) * reach / dist
                left = 0.0
            else:
                x, y = target
                left -= dist / model.speed_mps
                pause = model.pause_s
                if pause == 0:
                    target = _draw_target(rng, model.area_m)
        # clamp rounding drift
        x = min(max(x, 0.0), model.area_m[0])
        y = min(max(y, 0.0), model.area_m[1])
        positions[v] = (x, y)
        targets[v] = (target, pause)
    return topo.moved(positions, targets)


# -- channel resolution -----------------------------------------------------

def resolve(transmissions, topo: Topology) -> dict:
    """Map every node to what its radio perceives in one mini-slot.

    ``transmissions`` is an iterable of (sender, message).  Transmitters hear
    nothing; a listener hears a clean message iff exactly one neighbor sends.
    """
    sent = {}
    for sender, msg in transmissions:
        if sender in sent:
            raise DuplicateSender(f"node {sender} transmits twice in one mini-slot")
        sent[sender] = msg
    heard = {}
    for sender, msg in sent.items():
        for v in topo.adjacency[sender]:
            heard.setdefault(v, []).append(msg)
    out = {}
    for v in topo.positions:
        msgs = heard.get(v)
        if v in sent or not msgs:
            out[v] = SILENCE
        elif len(msgs) == 1:
            out[v] = Clean(msgs[0])
        else:
            out[v] = COLLISION
    return out
