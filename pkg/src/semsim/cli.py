"""Command-line front end.

Exit codes: 0 ok, 2 parse/usage error, 3 validation error, 4 divergence,
5 missing input file.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels, metrics, scenario, sim, wire
from .channel import LinkAttack
from .graph import CyberGraph, GraphError, laplacian_report, preset_weights
from .scenario import AttackSpec, ScenarioParseError, ScenarioValidationError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_DIVERGED = 4
EXIT_MISSING = 5

OUT_ENV = "SEMSIM_OUT"
DEFAULT_OUT = "semsim-out"


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _err(*args):
    print(*args, file=sys.stderr)


def build_id():
    return f"semsim-{__version__}+{kernels.backend_name()}"


def _load_scenario(spec):
    try:
        path = scenario.resolve(spec)
    except FileNotFoundError:
        raise CliError(f"no scenario file or bundled scenario named {spec!r}", EXIT_MISSING) from None
    try:
        return scenario.load(path), path
    except ScenarioParseError as exc:
        raise CliError(str(exc), EXIT_PARSE) from None
    except ScenarioValidationError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None


def _out_dir(arg):
    d = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _atomic_write(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args):
    scn, path = _load_scenario(args.scenario)
    comp = False if args.no_compensation else None
    trace = sim.run(scn, seed=args.seed, compensation=comp)
    out = _out_dir(args.out)
    stem = scn.name + ("_nocomp" if args.no_compensation else "")
    csv_path = out / f"{stem}.csv"
    ev_path = csv_path.with_suffix(".events.jsonl")
    _atomic_write(csv_path, trace.to_csv(io.StringIO()))
    _atomic_write(ev_path, trace.events_jsonl())
    manifest = {
        "scenario": str(path),
        "seed": int(scn.seed if args.seed is None else args.seed),
        "compensation": not args.no_compensation and scn.compensation_enabled,
        "build": build_id(),
        "out_dir": str(out),
        "files": {p.name: _sha256(p) for p in (csv_path, ev_path)},
    }
    man_path = out / f"{stem}.manifest.json"
    _atomic_write(man_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(csv_path)
    if trace.aborted:
        _err(f"diverged at t={trace.t[-1]:.4f} s: {trace.diagnostic} (partial trace kept)")
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------------

def cmd_bound(args):
    try:
        if args.scenario:
            scn, _ = _load_scenario(args.scenario)
            g = scn.graphs[args.graph_index][1]
            label = f"{scn.name} graph {args.graph_index}"
        elif args.weights:
            w = np.array(json.loads(Path(args.weights).read_text()) if Path(args.weights).exists()
                         else json.loads(args.weights), dtype=float)
            g = CyberGraph(w, undirected=not args.directed)
            label = "explicit weights"
        else:
            g = CyberGraph(preset_weights(args.preset, args.n, args.weight))
            label = f"{args.preset}-{args.n}"
        rep = laplacian_report(g)
    except (GraphError, ValueError, IndexError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    edges = int((g.weights > 0).sum()) // (2 if g.undirected else 1)
    print(f"graph: {label} (n={g.n}, edges={edges}, {'undirected' if g.undirected else 'directed'})")
    print(f"lambda_max: {rep.lambda_max:.12g}")
    print(f"delay_bound_s: {rep.delay_bound_s:.12g}")
    if rep.advisory:
        print("note: directed graph, bound is advisory")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def with_axis(scn, axis, value):
    if axis == "D":
        d = int(value)
        if d != value or d < 1:
            raise ValueError(f"D must be a positive integer, got {value}")
        return replace(scn, sampler=replace(scn.sampler, downsample_d=d))
    if axis == "alpha":
        return replace(scn, sampler=replace(scn.sampler, alpha=float(value)))
    if axis == "tau":
        if scn.attacks:
            attacks = [AttackSpec(replace(a.attack, latency_s=float(value)), a.links,
                                  float(value) if a.local_latency_s > 0 else 0.0) for a in scn.attacks]
        else:
            attacks = [AttackSpec(LinkAttack(latency_s=float(value)))]
        return replace(scn, attacks=attacks)
    raise ValueError(f"unknown sweep axis {axis!r}")


def _sweep_one(job):
    scn, axis, value, seed, comp = job
    trace = sim.run(with_axis(scn, axis, value), seed=seed, compensation=comp)
    rep = metrics.report(trace)
    return value, rep


def sweep(scn, axis, values, seed=None, compensation=None, jobs=1):
    work = [(scn, axis, v, seed, compensation) for v in values]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, work))
    return [_sweep_one(w) for w in work]


def _fmt(x):
    if isinstance(x, float) and math.isinf(x):
        return metrics.SENTINEL_TEXT
    return repr(x) if isinstance(x, float) else str(x)


def cmd_sweep(args):
    scn, _ = _load_scenario(args.scenario)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad value list {args.values!r}", EXIT_PARSE) from None
    if not values:
        raise CliError("empty value list", EXIT_INVALID)
    if args.axis == "D":
        values = [int(v) if float(v).is_integer() else v for v in values]
    comp = False if args.no_compensation else None
    try:
        results = sweep(scn, args.axis, values, args.seed, comp, args.jobs)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([args.axis, "tc_o1_s", "tc_o2_s", "trigger_rate"])
    for value, rep in results:
        w.writerow([value, _fmt(rep.tc_o1_s), _fmt(rep.tc_o2_s), _fmt(rep.trigger_rate)])
    if args.out:
        _atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _load_trace(path):
    try:
        return sim.Trace.from_csv(path)
    except FileNotFoundError:
        raise CliError(f"no such trace {path}", EXIT_MISSING) from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from None


def cmd_metrics(args):
    trace = _load_trace(args.trace)
    bands = metrics.ObjectiveBands(band_frac=args.band)
    rep = metrics.report(trace, bands, args.from_event)
    text = rep.to_json() + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotdata
# ---------------------------------------------------------------------------

TRACE_FIGURES = {
    "fig5": ("omega", "mp_p", "nq_q"),
    "fig6": ("omega", "mp_p", "nq_q"),
    "fig7": ("omega", "mp_p", "nq_q"),
    "fig8": ("omega", "mp_p", "nq_q"),
    "fig9": ("omega", "mp_p", "nq_q"),
    "fig13": ("e_dvc", "e_dd", "e_pphi", "e_qvc", "e_qd", "e_qphi"),
    "fig14": ("watch_omega", "watch_mp_p", "watch_nq_q", "watch_stamp"),
    "fig15": ("watch_omega", "watch_mp_p", "watch_nq_q", "watch_stamp"),
}
CASES = (("I", "latency_0p05"), ("II", "latency_dropout"), ("III", "tsa"))
RUN_FIGURES = ("fig10", "fig11", "fig12", "fig17a", "fig17b")


def plot_rows(trace, figure, agent=1):
    if figure not in TRACE_FIGURES:
        raise ValueError(f"figure {figure!r} needs no trace or is unknown")
    if len(trace.t) == 0:
        raise ValueError("empty trace")
    rows = []
    per_agent = figure != "fig13"
    if not 0 <= agent < trace.n:
        raise ValueError(f"agent {agent} out of range")
    for series in TRACE_FIGURES[figure]:
        if series.startswith("watch_"):
            if trace.watch is None:
                raise ValueError("trace has no watched link (set sim.watch_link)")
            rows += [(t, series, "watch", v) for t, v in zip(trace.t, trace.watch[series])]
            continue
        col = trace[series]
        agents = range(trace.n) if per_agent else (agent,)
        for j in agents:
            rows += [(t, series, j, v) for t, v in zip(trace.t, col[:, j])]
    return rows


def bar_rows(figure, seed=None, jobs=1):
    rows = []
    if figure in ("fig10", "fig11", "fig12"):
        work = [(case, name, comp) for case, name in CASES for comp in (False, True)]
        jobs_in = [(scenario.load(scenario.bundled_path(n)), seed, comp) for _, n, comp in work]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                reps = list(pool.map(_report_job, jobs_in))
        else:
            reps = [_report_job(j) for j in jobs_in]
        for (case, _, comp), rep in zip(work, reps):
            tag = "with" if comp else "without"
            if figure == "fig10":
                rows += [(case, f"tc_o1_{tag}", "all", rep.tc_o1_s), (case, f"tc_o2_{tag}", "all", rep.tc_o2_s)]
            elif figure == "fig11":
                rows.append((case, f"sse_o1_{tag}", "all", rep.sse_o1))
            else:
                rows.append((case, f"sse_o2_{tag}", "all", rep.sse_o2))
        return rows
    if figure == "fig17a":
        scn = scenario.load(scenario.bundled_path("dsweep"))
        for d, rep in sweep(scn, "D", [1, 5, 10, 20], seed, None, jobs):
            rows += [(d, "tc_o1", "all", rep.tc_o1_s), (d, "tc_o2", "all", rep.tc_o2_s)]
        return rows
    if figure == "fig17b":
        scn = scenario.load(scenario.bundled_path("dsweep"))
        for tau, rep in sweep(scn, "tau", [0.01, 0.03, 0.05, 0.1, 0.2], seed, None, jobs):
            rows += [(tau, "tc_o1", "all", rep.tc_o1_s), (tau, "tc_o2", "all", rep.tc_o2_s)]
        return rows
    raise ValueError(f"unknown figure id {figure!r}")


def _report_job(job):
    scn, seed, comp = job
    return metrics.report(sim.run(scn, seed=seed, compensation=comp))


def cmd_plotdata(args):
    fig = args.figure
    try:
        if fig in TRACE_FIGURES:
            if not args.trace:
                raise CliError(f"{fig} needs --trace", EXIT_PARSE)
            rows = plot_rows(_load_trace(args.trace), fig, args.agent)
        elif fig in RUN_FIGURES:
            rows = bar_rows(fig, args.seed, args.jobs)
        else:
            raise CliError(f"unknown figure id {fig!r}; known: "
                           f"{', '.join(sorted(TRACE_FIGURES) + list(RUN_FIGURES))}", EXIT_INVALID)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "series", "agent", "value"])
    for t, series, agent, value in rows:
        w.writerow([_fmt(float(t)) if not isinstance(t, str) else t, series, agent, _fmt(float(value))])
    if args.out:
        _atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

def cmd_codec(args):
    if args.action == "encode":
        try:
            values = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            raise CliError(f"bad --values {args.values!r}", EXIT_PARSE) from None
        frame = wire.SvFrame(args.sv_id, args.smp_cnt, args.conf_rev, args.stamp_us, values)
        try:
            print(wire.encode(frame).hex())
        except wire.CodecError as exc:
            raise CliError(str(exc), EXIT_INVALID) from None
        return EXIT_OK
    try:
        raw = bytes.fromhex("".join(args.hex.split()))
    except ValueError:
        raise CliError("input is not a hex string", EXIT_PARSE) from None
    try:
        f = wire.decode(raw)
    except wire.CodecError as exc:
        raise CliError(f"{type(exc).__name__}: {exc}", EXIT_INVALID) from None
    print(json.dumps({"sv_id": f.sv_id, "smp_cnt": f.smp_cnt, "conf_rev": f.conf_rev,
                      "stamp_us": f.stamp_us, "values": list(f.values)}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="semsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=build_id())
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write its trace")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.add_argument("--no-compensation", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bound", help="largest Laplacian eigenvalue and delay bound")
    b.add_argument("--preset", choices=("ring", "complete", "line"), default="complete")
    b.add_argument("--n", type=int, default=7)
    b.add_argument("--weight", type=float, default=1.0)
    b.add_argument("--weights", help="JSON matrix or a file holding one")
    b.add_argument("--directed", action="store_true")
    b.add_argument("--scenario", help="take the graph from a scenario instead")
    b.add_argument("--graph-index", type=int, default=0)
    b.set_defaults(func=cmd_bound)

    s = sub.add_parser("sweep", help="convergence time across one parameter")
    s.add_argument("scenario")
    s.add_argument("--axis", choices=("D", "alpha", "tau"), required=True)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.add_argument("--seed", type=int)
    s.add_argument("--no-compensation", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("metrics", help="JSON metric report for a trace CSV")
    m.add_argument("trace")
    m.add_argument("--from-event", type=float, help="disturbance time (default: last logged event)")
    m.add_argument("--band", type=float, default=0.02)
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    d = sub.add_parser("plotdata", help="tidy CSV (t, series, agent, value) for one figure")
    d.add_argument("figure")
    d.add_argument("--trace")
    d.add_argument("--agent", type=int, default=1)
    d.add_argument("--seed", type=int)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--out")
    d.set_defaults(func=cmd_plotdata)

    c = sub.add_parser("codec", help="encode or decode one frame as hex")
    csub = c.add_subparsers(dest="action", required=True)
    e = csub.add_parser("encode")
    e.add_argument("--sv-id", default="A")
    e.add_argument("--smp-cnt", type=int, default=0)
    e.add_argument("--conf-rev", type=int, default=0)
    e.add_argument("--stamp-us", type=int, default=0)
    e.add_argument("--values", default="0,0,0")
    dd = csub.add_parser("decode")
    dd.add_argument("hex")
    c.set_defaults(func=cmd_codec)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _err(f"semsim {args.cmd}: {exc}")
        return exc.code
    except BrokenPipeError:
        # downstream reader (e.g. head) went away
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
