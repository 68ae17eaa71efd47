"""Command-line front end: ``macrsv simulate|analyze|validate|compare``.

Exit codes: 0 ok, 1 a check (or the analysis) failed, 2 bad configuration.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import statistics
import sys
from pathlib import Path

from . import analysis as an
from . import checks
from . import scenario as scn
from .core import format_trace
from .engine import run
from .errors import ConfigError, DomainError, MacRsvError, NoConvergence, TruncationError

log = logging.getLogger("macrsv")

METRIC_FIELDS = ("scenario", "protocol", "seed", "offered_load_bps", "throughput_bps",
                 "mean_delay_s", "data_collisions", "deadlock_deferrals")
ANALYSIS_FIELDS = ("scenario", "K", "N", "q", "p", "T", "load", "n_max", "truncation_mass",
                   "quantity", "index", "value")


def _seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds {text!r}: expected integers like 1,2,3") from None
    if not seeds:
        raise ConfigError("--seeds needs at least one seed")
    return seeds


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write(path, text):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def _csv(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


# -- simulate / compare -------------------------------------------------------

def _variants(args):
    """(label, config text, base dir) for every sweep value."""
    text, base = scn.read_text(args.scenario)
    if not args.sweep:
        return [(None, scn.read_config(text), base)]
    name, values = scn.parse_sweep(args.sweep)
    return [(f"{name}={v}", scn.with_override(text, name, v), base) for v in values]


def _apply_flags(sc, args, seed):
    changes = {"seed": seed}
    if args.grant_policy:
        changes["grant_policy"] = scn._GRANT_ALIASES[args.grant_policy]
    if args.paranoid_ncts:
        changes["paranoid_ncts"] = True
    if args.rb_ablation:
        changes["rb_ablation"] = True
    if getattr(args, "frames", None):
        changes["frames"] = args.frames
    return dataclasses.replace(sc, **changes)


def _simulate_rows(args, protocols=None):
    variants = _variants(args)
    jobs = []
    for label, cp, base in variants:
        sc0 = scn._from_config(cp, base)
        for proto in protocols or (sc0.protocol,):
            sc1 = dataclasses.replace(sc0, protocol=proto)
            if protocols:
                # keep the offered load when the frame length changes
                cp_load = cp["traffic"].get("offered_load_bps")
                if cp_load is not None:
                    sc1 = dataclasses.replace(sc1, traffic=dataclasses.replace(
                        sc1.traffic, rate_pps=sc1.rate_for_load(float(cp_load))))
            seeds = _seeds(args.seeds) if args.seeds else [sc1.seed]
            for seed in seeds:
                jobs.append((label, _apply_flags(sc1, args, seed)))
    rows = []
    keep_trace = bool(args.trace)
    for i, (label, sc) in enumerate(jobs):
        name = sc.name if label is None else f"{sc.name}[{label}]"
        log.info("run %s protocol=%s seed=%d", name, sc.protocol, sc.seed)
        res = run(sc, keep_trace=keep_trace)
        m = res.metrics
        rows.append([name, sc.protocol, str(sc.seed), _fmt(sc.offered_load_bps),
                     _fmt(m.aggregate_throughput_bps), _fmt(m.mean_delay_s),
                     str(m.data_collisions), str(m.deadlock_deferrals)])
        if keep_trace:
            path = Path(args.trace)
            if len(jobs) > 1:
                path = path.with_name(f"{path.stem}.{i}{path.suffix or '.csv'}")
            path.write_text(format_trace(res.trace))
    return rows


def _with_summary(rows):
    """Append mean and sample std rows per (scenario, protocol) with >1 seed."""
    out = list(rows)
    groups = {}
    for r in rows:
        groups.setdefault((r[0], r[1]), []).append(r)
    for (name, proto), grp in groups.items():
        if len(grp) < 2:
            continue
        cols = list(zip(*grp))
        means = [statistics.fmean(float(v) for v in cols[k]) for k in range(3, 8)]
        stds = [statistics.stdev(float(v) for v in cols[k]) for k in range(3, 8)]
        out.append([name, proto, "mean"] + [_fmt(x) for x in means])
        out.append([name, proto, "std"] + [_fmt(x) for x in stds])
    return out


def cmd_simulate(args):
    rows = _simulate_rows(args)
    _write(args.out, _csv(METRIC_FIELDS, _with_summary(rows)))
    return 0


def cmd_compare(args):
    rows = _simulate_rows(args, protocols=("rsv", "cata"))
    _write(args.out, _csv(METRIC_FIELDS, _with_summary(rows)))
    # ratio at the highest offered load, averaged over seeds
    rsv = [r for r in rows if r[1] == "rsv"]
    cata = [r for r in rows if r[1] == "cata"]
    if rsv and cata:
        top = max(float(r[3]) for r in rsv)
        a = statistics.fmean(float(r[4]) for r in rsv if float(r[3]) == top)
        top_c = max(float(r[3]) for r in cata)
        b = statistics.fmean(float(r[4]) for r in cata if float(r[3]) == top_c)
        ratio = a / b if b > 0 else float("inf")
        print(f"highest load: rsv {a / 1e6:.3f} Mb/s, cata {b / 1e6:.3f} Mb/s, ratio {ratio:.2f}",
              file=sys.stderr)
    return 0


# -- analyze ------------------------------------------------------------------

def cmd_analyze(args):
    text, _ = scn.read_text(args.scenario or "analysis_smoke")
    spec = scn.analysis_from_config(scn.read_config(text))
    points = []
    if args.sweep:
        name, values = scn.parse_sweep(args.sweep)
        fields = {f.name for f in dataclasses.fields(scn.AnalysisSpec)} - {"name", "loads"}
        if name not in fields | {"load"}:
            raise ConfigError(f"--sweep {name!r}: analysis sweeps take load, K, N, q, p, T or n_max")
        for v in values:
            try:
                if name == "load":
                    points.append(dataclasses.replace(spec, loads=(float(v),)))
                else:
                    conv = int if name in ("K", "N", "n_max") else float
                    points.append(dataclasses.replace(spec, **{name: conv(v)}))
            except ValueError:
                raise ConfigError(f"--sweep {name}={v}: not a number") from None
    else:
        points = [spec]
    rows = []
    for sp in points:
        for load in sp.loads:
            try:
                params = an.AnalysisParams.from_load(sp.K, sp.N, sp.q, sp.p, load, sp.T, n_max=sp.n_max)
            except DomainError as e:
                raise ConfigError(str(e)) from None
            u = an.utilization(params)
            m = u.model
            head = [sp.name, str(sp.K), str(sp.N), _fmt(sp.q), _fmt(sp.p), _fmt(sp.T), _fmt(float(load)),
                    str(m.n_max), _fmt(m.truncation_mass)]
            rows.append(head + ["utilization", "0", _fmt(u.expected_utilization)])
            rows += [head + ["pi", str(i), _fmt(float(v))] for i, v in enumerate(m.stationary)]
            rows += [head + ["reserved_pmf", str(r), _fmt(float(v))] for r, v in enumerate(u.pmf)]
    _write(args.out, _csv(ANALYSIS_FIELDS, rows))
    return 0


# -- validate -----------------------------------------------------------------

def cmd_validate(args):
    fig2 = args.scenario or "fig2_deadlock"
    failed = 0
    fh, close = _open_out(args.out)
    try:
        for result in checks.all_checks(rb_ablation=args.rb_ablation,
                                        grant_policy=scn._GRANT_ALIASES[args.grant_policy or "partial"],
                                        paranoid_ncts=args.paranoid_ncts, fig2=fig2):
            fh.write(json.dumps(result, sort_keys=True) + "\n")
            fh.flush()
            failed += not result["passed"]
    finally:
        if close:
            fh.close()
    return 1 if failed else 0


# -- plumbing -------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="macrsv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=False):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario file or bundled name (%s)" % ", ".join(scn.BUNDLED))
        p.add_argument("--sweep", help="NAME=v1,v2,... ; NAME is a scenario key or section.key")
        p.add_argument("--seeds", help="comma separated seeds (default: the scenario's)")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--grant-policy", choices=("partial", "all"))
        p.add_argument("--paranoid-ncts", action="store_true", help="NCTS on every RTS collision")
        p.add_argument("--rb-ablation", action="store_true", help="ignore receive beacons")
        p.add_argument("--trace", help="write the event trace CSV here")

    p = sub.add_parser("simulate", help="run the engine over sweep values x seeds")
    common(p, scenario_required=True)
    p.add_argument("--frames", type=int, help="override the scenario's frame count")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("compare", help="run a scenario under MAC-RSV and CATA")
    common(p)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_compare, scenario_default="cata_16_16")
    p = sub.add_parser("analyze", help="utilization and distributions from the Markov model")
    common(p)
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("validate", help="run every oracle check, JSON lines out")
    common(p)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "scenario_default", None) and not args.scenario:
        args.scenario = args.scenario_default
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (TruncationError, NoConvergence) as e:
        print(f"analysis failed: {e}", file=sys.stderr)
        return 1
    except MacRsvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
