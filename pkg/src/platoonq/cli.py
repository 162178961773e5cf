"""Command line entry point: ``platoonq <command> ...``."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analytic as an
from . import capacity as cap
from .des import RngConfig, simulate
from .experiment import ExperimentGrid, format_tables, load_results, run_experiment
from .fluid import FluidSystem, check_homogeneity, check_speedup, integrate
from .metrics import summarize
from .network import scale
from .scenario import ScenarioError, load


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _report(pairs) -> str:
    return "\n".join(f"{k}={_fmt(v)}" for k, v in pairs)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---- analytic ---------------------------------------------------------------

_SWEEPABLE = ("lambda", "mu", "k", "gamma1", "gamma2", "gain", "speedup")


def _analytic_values(model: str, v: dict) -> list[tuple[str, float]]:
    g, f = v["gain"], v["speedup"]
    if model == "mm1":
        p = an.MM1Params(v["lambda"] * g, v["mu"] * g)
        return [("rho", p.rho), ("mean_delay_h", an.mm1_delay(p)),
                ("mean_queue", p.lam * an.mm1_delay(p))]
    if model == "mm1k":
        if v["k"] is None:
            raise SystemExit("mm1k needs --k")
        p = an.MM1KParams(v["lambda"] * g, v["mu"] * g, int(v["k"]))
        m = an.mm1k_metrics(p)
        return [("rho", p.rho), ("blocking", m.blocking), ("mean_queue", m.mean_queue),
                ("throughput", m.throughput), ("mean_delay_h", m.mean_delay)]
    if v["gamma1"] is None or v["gamma2"] is None:
        raise SystemExit("onoff needs --gamma1 and --gamma2")
    p = an.OnOffQueueParams(v["lambda"], v["mu"], v["gamma1"], v["gamma2"]).scaled(g, f)
    m = an.onoff_closed_form(p)
    r = an.rrr_solve(p)
    return [("capacity", p.capacity), ("mean_queue", m.mean_queue), ("mean_delay_h", m.mean_delay),
            ("mean_delay_s", m.mean_delay * 3600.0), ("rrr_mean_queue", r.mean_queue),
            ("rrr_mean_delay_h", r.mean_delay)]


def cmd_analytic(args) -> int:
    base = {"lambda": args.lam, "mu": args.mu, "k": args.k, "gamma1": args.gamma1,
            "gamma2": args.gamma2, "gain": args.gain, "speedup": args.speedup}
    try:
        if args.sweep:
            name, _, values = args.sweep.partition("=")
            if name not in _SWEEPABLE or not values:
                raise SystemExit(f"--sweep must look like NAME=v1,v2,... with NAME in {_SWEEPABLE}")
            w = csv.writer(sys.stdout, lineterminator="\n")
            header = None
            for x in _floats(values):
                row = _analytic_values(args.model, {**base, name: x})
                if header is None:
                    header = [name] + [k for k, _ in row]
                    w.writerow(header)
                w.writerow([x] + [_fmt(v) for _, v in row])
        else:
            print(_report(_analytic_values(args.model, base)))
    except (ValueError, an.StabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ---- capacity ---------------------------------------------------------------

def cmd_capacity(args) -> int:
    try:
        if args.what == "eq1":
            with open(args.groups, newline="") as fh:
                groups = [
                    cap.LaneGroupSpec(int(r["lanes"]), float(r["base_rate"]),
                                      float(r.get("factor") or 1.0), float(r.get("green_ratio") or 1.0))
                    for r in csv.DictReader(fh)
                ]
            print(_report([("groups", len(groups)), ("capacity_vph", cap.intersection_capacity(groups))]))
        elif args.what == "gain":
            res = cap.platoon_gain(cap.HeadwaySpec.from_string(args.labels, args.hlow, args.hhigh))
            print(_report([("vehicles", len(args.labels)), ("mean_headway_s", res.mean_headway),
                           ("gain", res.gain), ("saturation_flow_vph", cap.headway_to_satflow(res.mean_headway))]))
        else:
            times = [float(line.split(",")[0]) for line in Path(args.trace).read_text().split()
                     if line.strip() and not line[0].isalpha()]
            rate = cap.empirical_satflow(cap.DetectorTrace(tuple(times)), args.n)
            pairs = [("n", args.n), ("saturation_flow_vph", rate), ("headway_s", 3600.0 / rate)]
            if args.platoon_rate:
                ratios = cap.satflow_ratios(args.platoon_rate, rate)
                pairs += [("platoon_vs_observed", ratios["vs_observed"]),
                          ("platoon_vs_theoretical", ratios["vs_theoretical"])]
            print(_report(pairs))
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ---- fluid ------------------------------------------------------------------

def _fluid_system(args) -> FluidSystem:
    sc = load(args.scenario)
    net = scale(sc.network, args.gain) if args.gain != 1 else sc.network
    system = FluidSystem.from_network(net, sc.plan("ft"))
    if args.infinite:
        system = system.with_capacity(np.full(len(system.ids), math.inf))
    return system


def cmd_fluid(args) -> int:
    try:
        system = _fluid_system(args)
        x0 = np.zeros(len(system.ids))
        if args.what == "run":
            horizon = args.horizon
            if args.speedup != 1:
                system, horizon = system.sped_up(args.speedup), horizon / args.speedup
            traj = integrate(system, x0, horizon)
            out = open(args.out, "w", newline="") if args.out else sys.stdout
            try:
                w = csv.writer(out, lineterminator="\n")
                w.writerow(("movement_id", "t", "x"))
                for i, mid in enumerate(system.ids):
                    name = f"{mid[0]}>{mid[1]}"
                    for t, x in traj.breakpoints(i):
                        w.writerow((name, repr(float(t)), repr(float(x))))
            finally:
                if args.out:
                    out.close()
        elif args.check == "homogeneity":
            print(_report([("gain", args.factor),
                           ("max_deviation", check_homogeneity(system, x0, args.factor, args.horizon))]))
        else:
            print(_report([("speedup", args.factor),
                           ("max_deviation", check_speedup(system, x0, args.factor, args.horizon))]))
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ---- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        sc = load(args.scenario)
        net = scale(sc.network, args.gain)
        plan = sc.plan(args.control)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("replication", "total_mean_queue", "mean_delay_s", "served", "censored", "dropped"))
    for r in range(args.replications):
        log = simulate(net, plan, args.duration, RngConfig(args.seed, r))
        s = summarize(log, args.warmup)
        _, served = s.delay_totals()
        w.writerow((r, repr(s.total_mean_queue), repr(s.mean_delay()), served, s.censored, s.dropped))
        if out:
            (out / f"events_r{r:03d}.csv").write_text(log.to_csv())
            (out / f"vehicles_r{r:03d}.csv").write_text(log.vehicles_csv())
    return 0


# ---- experiment -------------------------------------------------------------

def cmd_experiment(args) -> int:
    try:
        if args.what == "run":
            grid = ExperimentGrid(
                tuple(_floats(args.gains)), tuple(args.controls.split(",")), args.reps,
                args.seed, args.duration, args.warmup,
            )
            res = run_experiment(grid, load(args.scenario), args.out, args.backend,
                                 args.keep_logs, args.workers)
            if res.failures:
                print(f"{len(res.failures)} cell(s) failed; see manifest.json", file=sys.stderr)
        else:
            res = load_results(getattr(args, "in"))
        print(format_tables(res, args.tables.split(","), args.format), end="")
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platoonq", description="Platoon capacity gain in signalized networks.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="closed-form queue measures")
    a.add_argument("model", choices=("mm1", "mm1k", "onoff"))
    a.add_argument("--lambda", dest="lam", type=float, required=True, help="arrival rate (vph)")
    a.add_argument("--mu", type=float, required=True, help="service rate (vph)")
    a.add_argument("--k", type=int)
    a.add_argument("--gamma1", type=float, help="green-to-red switching rate (1/h)")
    a.add_argument("--gamma2", type=float, help="red-to-green switching rate (1/h)")
    a.add_argument("--gain", type=float, default=1.0)
    a.add_argument("--speedup", type=float, default=1.0)
    a.add_argument("--sweep", help="NAME=v1,v2,... prints CSV over the values")
    a.set_defaults(func=cmd_analytic)

    c = sub.add_parser("capacity", help="capacity and platoon arithmetic")
    csub = c.add_subparsers(dest="what", required=True)
    e = csub.add_parser("eq1", help="sum of saturation flow times green ratio")
    e.add_argument("--groups", required=True, help="CSV with lanes,base_rate[,factor,green_ratio]")
    g = csub.add_parser("gain", help="average headway and gain of a vehicle sequence")
    g.add_argument("--labels", required=True, help="e.g. CRCCRCCCCCCC")
    g.add_argument("--hlow", type=float, required=True)
    g.add_argument("--hhigh", type=float, required=True)
    s = csub.add_parser("satflow", help="saturation flow from stop-bar entry times")
    s.add_argument("--trace", required=True, help="one entry time (s after green) per line")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--platoon-rate", type=float, help="also report ratios of this rate")
    c.set_defaults(func=cmd_capacity)

    f = sub.add_parser("fluid", help="deterministic fluid network")
    fsub = f.add_subparsers(dest="what", required=True)
    fr = fsub.add_parser("run")
    fc = fsub.add_parser("check")
    fc.add_argument("check", choices=("homogeneity", "speedup"))
    fc.add_argument("--factor", type=float, default=3.0)
    for q in (fr, fc):
        q.add_argument("--scenario", required=True)
        q.add_argument("--horizon", type=float, required=True, help="seconds")
        q.add_argument("--gain", type=float, default=1.0)
        q.add_argument("--infinite", action="store_true", help="ignore storage capacities")
    fr.add_argument("--speedup", type=float, default=1.0)
    fr.add_argument("--out")
    f.set_defaults(func=cmd_fluid)

    m = sub.add_parser("simulate", help="discrete-event simulation")
    m.add_argument("--scenario", required=True)
    m.add_argument("--control", choices=("ft", "mp", "mp4", "mp6"), default="ft")
    m.add_argument("--gain", type=float, default=1.0)
    m.add_argument("--duration", type=float, default=3600.0)
    m.add_argument("--warmup", type=float, default=600.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--replications", type=int, default=1)
    m.add_argument("--out", help="directory for event and vehicle CSVs")
    m.set_defaults(func=cmd_simulate)

    x = sub.add_parser("experiment", help="gain sweep across controls")
    xsub = x.add_subparsers(dest="what", required=True)
    xr = xsub.add_parser("run")
    xr.add_argument("--scenario", required=True)
    xr.add_argument("--gains", default="1,1.5,2,2.5,3")
    xr.add_argument("--controls", default="ft,mp4,mp6")
    xr.add_argument("--reps", type=int, default=20)
    xr.add_argument("--seed", type=int, default=0)
    xr.add_argument("--duration", type=float, default=3600.0)
    xr.add_argument("--warmup", type=float, default=600.0)
    xr.add_argument("--backend", choices=("des", "fluid"), default="des")
    xr.add_argument("--workers", type=int, default=1)
    xr.add_argument("--keep-logs", action="store_true")
    xr.add_argument("--out")
    xp = xsub.add_parser("report")
    xp.add_argument("--in", required=True)
    for q in (xr, xp):
        q.add_argument("--tables", default="queues,ratios,delays")
        q.add_argument("--format", choices=("csv", "text"), default="csv")
    x.set_defaults(func=cmd_experiment)

    gr = sub.add_parser("grid", help="write the synthetic grid scenario")
    gr.add_argument("--cols", type=int, default=2)
    gr.add_argument("--rows", type=int, default=2)
    gr.add_argument("--entry-flow", type=float, default=1200.0)
    gr.add_argument("--vc", type=float, default=0.8)
    gr.add_argument("--cycle", type=float, default=120.0)
    gr.add_argument("--phasing", choices=("split", "protected"), default="split")
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_grid)
    return p


def cmd_grid(args) -> int:
    from .grids import GridSpec, build_grid
    from .scenario import dump, from_network

    spec = GridSpec(cols=args.cols, rows=args.rows, entry_flow=args.entry_flow, vc=args.vc,
                    cycle=args.cycle, phasing=args.phasing)
    dump(from_network(build_grid(spec), args.cycle), args.out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
