"""Scenario files: an INI dialect read with configparser.

Sections and keys (``#`` starts a comment)::

    [scenario]  name, protocol (rsv|cata), frames, seed, persistence_p,
                grant_policy (partial|all), paranoid_ncts, rb_ablation,
                warmup_fraction, one_hop
    [frame]     triples_K, data_slots_N, control_bytes, data_payload_bytes,
                channel_rate_bps
    [topology]  kind = grid    -> rows, cols, spacing_m, range_m
                kind = random  -> n, area_m (w h), range_m, seed
                kind = line    -> n, spacing_m, range_m
                kind = file    -> path (topology text, relative to the scenario)
                kind = inline  -> range_m, nodes (one "id x y" per line)
    [mobility]  model = static | random_waypoint (area_m, speed_mps, pause_s)
    [traffic]   kind = poisson | flows; flows = 1>0, 2>3; rate_pps or
                offered_load_bps (aggregate); backlog
    [packet]    size_bytes or geometric_q
    [script]    <node> = <triple>:<slot>|<slot> ...   ("*" = lowest free slots)
    [analysis]  K, N, q, p, T, loads (comma list of T/tau), n_max

``dump`` writes the same dialect back; ``parse(dump(s)) == s``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from importlib import resources
from pathlib import Path

from .channel import (RandomWaypoint, Static, Topology, build_grid_mesh, build_line,
                      build_random)
from .core import FrameConfig
from .engine import PacketSize, Scenario, Traffic
from .errors import ConfigError

BUNDLED = ("fig3_saturation", "fig2_deadlock", "mobile_rwp", "cata_16_16", "analysis_smoke")

_GRANT_ALIASES = {"partial": "partial", "all": "all_or_nothing", "all_or_nothing": "all_or_nothing"}


def _reader() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep triples_K etc. as written
    return cp


class _Section:
    """Typed getters that turn parse failures into ConfigError."""

    def __init__(self, cp, name, required=True):
        if not cp.has_section(name):
            if required:
                raise ConfigError(f"missing section [{name}]")
            self.sec = {}
        else:
            self.sec = cp[name]
        self.name = name
        self.used = set()

    def has(self, key):
        return key in self.sec

    def get(self, key, conv=str, default=dataclasses.MISSING):
        if key not in self.sec:
            if default is dataclasses.MISSING:
                raise ConfigError(f"[{self.name}] {key}: required field missing")
            return default
        raw = self.sec[key]
        self.used.add(key)
        try:
            return conv(raw.strip())
        except (ValueError, TypeError) as e:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {e}") from None


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _pair(s: str) -> tuple:
    parts = s.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError("expected two numbers")
    return (float(parts[0]), float(parts[1]))


def _flows(s: str) -> tuple:
    out = []
    for item in s.replace("\n", ",").split(","):
        item = item.strip()
        if not item:
            continue
        src, dst = item.split(">")
        out.append((int(src), int(dst)))
    return tuple(out)


def _script_entry(s: str) -> dict:
    out = {}
    for item in s.split():
        triple, slots = item.split(":")
        out[int(triple)] = None if slots == "*" else [int(x) for x in slots.split("|")]
    return out


def _floats(s: str) -> list:
    return [float(x) for x in s.replace("\n", ",").split(",") if x.strip()]


def _topology(cp, base: Path | None):
    sec = _Section(cp, "topology")
    kind = sec.get("kind")
    if kind == "grid":
        spec = dict(kind=kind, rows=sec.get("rows", int), cols=sec.get("cols", int),
                    spacing_m=sec.get("spacing_m", float), range_m=sec.get("range_m", float))
        return build_grid_mesh(spec["rows"], spec["cols"], spec["spacing_m"], spec["range_m"]), spec
    if kind == "random":
        spec = dict(kind=kind, n=sec.get("n", int), area_m=sec.get("area_m", _pair),
                    range_m=sec.get("range_m", float), seed=sec.get("seed", int))
        return build_random(spec["n"], spec["area_m"], spec["range_m"], spec["seed"]), spec
    if kind == "line":
        spec = dict(kind=kind, n=sec.get("n", int), spacing_m=sec.get("spacing_m", float),
                    range_m=sec.get("range_m", float))
        return build_line(spec["n"], spec["spacing_m"], spec["range_m"]), spec
    if kind == "file":
        path = Path(sec.get("path"))
        if not path.is_absolute() and base is not None:
            path = base / path
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"[topology] path: cannot read {path}: {e.strerror}") from None
        return Topology.from_text(text), None
    if kind == "inline":
        range_m = sec.get("range_m", float)
        text = f"# range_m {range_m!r}\n" + sec.get("nodes")
        try:
            return Topology.from_text(text), None
        except ValueError as e:
            raise ConfigError(f"[topology] nodes: {e}") from None
    raise ConfigError(f"[topology] kind = {kind!r}: expected grid, random, line, file or inline")


def _mobility(cp):
    sec = _Section(cp, "mobility", required=False)
    model = sec.get("model", default="static")
    if model == "static":
        return Static()
    if model == "random_waypoint":
        return RandomWaypoint(sec.get("area_m", _pair), sec.get("speed_mps", float),
                              sec.get("pause_s", float, 0.0))
    raise ConfigError(f"[mobility] model = {model!r}: expected static or random_waypoint")


def _from_config(cp, base=None) -> Scenario:
    s = _Section(cp, "scenario")
    f = _Section(cp, "frame")
    frame = FrameConfig(f.get("triples_K", int), f.get("data_slots_N", int),
                        f.get("control_bytes", int), f.get("data_payload_bytes", int),
                        f.get("channel_rate_bps", float))
    topology, topo_spec = _topology(cp, base)
    pk = _Section(cp, "packet")
    packet = PacketSize(pk.get("size_bytes", int, None), pk.get("geometric_q", float, None))
    t = _Section(cp, "traffic")
    traffic = Traffic(t.get("kind", default="poisson"), 0.0,
                      t.get("flows", _flows, ()), t.get("backlog", int, 0))
    script = {}
    if cp.has_section("script"):
        sc = _Section(cp, "script")
        script = {int(k): sc.get(k, _script_entry) for k in cp["script"]}
    grant = s.get("grant_policy", default="partial")
    if grant not in _GRANT_ALIASES:
        raise ConfigError(f"[scenario] grant_policy = {grant!r}: expected partial or all")
    scenario = Scenario(
        name=s.get("name"), topology=topology, frame=frame, traffic=traffic, packet=packet,
        mobility=_mobility(cp), protocol=s.get("protocol", default="rsv"),
        persistence_p=s.get("persistence_p", float, 0.175), frames=s.get("frames", int, 100),
        seed=s.get("seed", int, 1), grant_policy=_GRANT_ALIASES[grant],
        paranoid_ncts=s.get("paranoid_ncts", _bool, False),
        rb_ablation=s.get("rb_ablation", _bool, False),
        warmup_fraction=s.get("warmup_fraction", float, 0.1),
        one_hop=s.get("one_hop", _bool, True), script=script, topology_spec=topo_spec)
    if t.has("rate_pps") and t.has("offered_load_bps"):
        raise ConfigError("[traffic] give rate_pps or offered_load_bps, not both")
    if t.has("offered_load_bps"):
        rate = scenario.rate_for_load(t.get("offered_load_bps", float))
    else:
        rate = t.get("rate_pps", float, 0.0)
    scenario = dataclasses.replace(scenario, traffic=dataclasses.replace(traffic, rate_pps=rate))
    scenario.validate()
    return scenario


def read_config(text: str) -> configparser.ConfigParser:
    cp = _reader()
    try:
        cp.read_string(text)
    except configparser.ParsingError as e:
        where = "; ".join(f"line {n}: {line.strip()!r}" for n, line in e.errors)
        raise ConfigError(f"scenario syntax error at {where}") from None
    except configparser.Error as e:
        raise ConfigError(f"scenario syntax: {e.message}") from None
    return cp


def parse(text: str, base: Path | None = None) -> Scenario:
    return _from_config(read_config(text), base)


def load(path) -> Scenario:
    """Load a scenario from a path or from a bundled scenario name."""
    text, base = read_text(path)
    return parse(text, base)


def read_text(path) -> tuple:
    p = Path(path)
    if p.exists():
        return p.read_text(), p.parent
    if str(path) in BUNDLED:
        return bundled_text(str(path)), None
    raise ConfigError(f"scenario {path}: no such file or bundled scenario")


def bundled_text(name: str) -> str:
    return resources.files("macrsv").joinpath("scenarios", f"{name}.ini").read_text()


# -- sweeps -------------------------------------------------------------------

def _find_key(cp, name: str) -> tuple:
    if "." in name:
        section, key = name.split(".", 1)
        return section, key
    hits = [sec for sec in cp.sections() if name in cp[sec]]
    if len(hits) > 1:
        raise ConfigError(f"sweep name {name!r} is ambiguous; use section.{name}")
    if hits:
        return hits[0], name
    # traffic load keys may be absent from the file
    if name in ("offered_load_bps", "rate_pps"):
        return "traffic", name
    raise ConfigError(f"sweep name {name!r} matches no scenario field")


def with_override(text: str, name: str, value: str) -> configparser.ConfigParser:
    """Config with one field replaced, as used by ``--sweep``."""
    cp = read_config(text)
    section, key = _find_key(cp, name)
    if not cp.has_section(section):
        cp.add_section(section)
    cp[section][key] = value
    if section == "traffic":
        other = {"offered_load_bps": "rate_pps", "rate_pps": "offered_load_bps"}.get(key)
        if other:
            cp.remove_option("traffic", other)
    return cp


def parse_sweep(arg: str) -> tuple:
    if "=" not in arg:
        raise ConfigError(f"--sweep {arg!r}: expected NAME=v1,v2,...")
    name, values = arg.split("=", 1)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not name.strip() or not vals:
        raise ConfigError(f"--sweep {arg!r}: expected NAME=v1,v2,...")
    return name.strip(), vals


# -- writing ----------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def dump(sc: Scenario) -> str:
    cp = _reader()
    cp["scenario"] = {
        "name": sc.name, "protocol": sc.protocol, "frames": str(sc.frames), "seed": str(sc.seed),
        "persistence_p": repr(sc.persistence_p), "grant_policy": sc.grant_policy,
        "paranoid_ncts": str(sc.paranoid_ncts).lower(), "rb_ablation": str(sc.rb_ablation).lower(),
        "warmup_fraction": repr(sc.warmup_fraction), "one_hop": str(sc.one_hop).lower()}
    f = sc.frame
    cp["frame"] = {"triples_K": str(f.triples_K), "data_slots_N": str(f.data_slots_N),
                   "control_bytes": str(f.control_bytes), "data_payload_bytes": str(f.data_payload_bytes),
                   "channel_rate_bps": repr(float(f.channel_rate_bps))}
    if sc.topology_spec:
        cp["topology"] = {k: (" ".join(_num(v) for v in val) if isinstance(val, tuple) else _num(val))
                          for k, val in sc.topology_spec.items()}
    else:
        body = sc.topology.to_text().splitlines()[1:]
        cp["topology"] = {"kind": "inline", "range_m": repr(float(sc.topology.range_m)),
                          "nodes": "\n" + "\n".join(body)}
    if isinstance(sc.mobility, RandomWaypoint):
        m = sc.mobility
        cp["mobility"] = {"model": "random_waypoint", "area_m": f"{m.area_m[0]!r} {m.area_m[1]!r}",
                          "speed_mps": repr(float(m.speed_mps)), "pause_s": repr(float(m.pause_s))}
    else:
        cp["mobility"] = {"model": "static"}
    t = sc.traffic
    cp["traffic"] = {"kind": t.kind, "rate_pps": repr(float(t.rate_pps)), "backlog": str(t.backlog)}
    if t.flows:
        cp["traffic"]["flows"] = ", ".join(f"{a}>{b}" for a, b in t.flows)
    if sc.packet.size_bytes is not None:
        cp["packet"] = {"size_bytes": str(sc.packet.size_bytes)}
    else:
        cp["packet"] = {"geometric_q": repr(sc.packet.geometric_q)}
    if sc.script:
        cp["script"] = {
            str(v): " ".join(f"{k}:{'*' if s is None else '|'.join(map(str, s))}"
                             for k, s in sorted(entry.items()))
            for v, entry in sorted(sc.script.items())}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# -- analysis files ------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AnalysisSpec:
    name: str
    K: int
    N: int
    q: float
    p: float
    T: float
    loads: tuple
    n_max: int | None = None


def analysis_from_config(cp) -> AnalysisSpec:
    name = cp["scenario"]["name"] if cp.has_section("scenario") and "name" in cp["scenario"] else "analysis"
    a = _Section(cp, "analysis")
    loads = a.get("loads", _floats, None)
    if loads is None:
        loads = [a.get("load", float)]
    return AnalysisSpec(name, a.get("K", int), a.get("N", int), a.get("q", float), a.get("p", float),
                        a.get("T", float, 1.0), tuple(loads), a.get("n_max", int, None))


def load_analysis(path) -> AnalysisSpec:
    text, _ = read_text(path)
    return analysis_from_config(read_config(text))
