"""Command-line entry points: gen-random, solve, build-ltr, simulate, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .contact_model import PlanError, generate_random_network, parse_contact_plan, \
    serialize_contact_plan
from .core import NetworkState, SolverError, StateCapExceeded, solve
from .engine import solve_compiled
from .lrucop import build_tables
from .sim import BENCHMARK_SCHEMES, DEFAULT_PF_SWEEP, CampaignConfig, relative_to, run_campaign

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_plan(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileNotFoundError(f"cannot read plan {path}: {e.strerror}") from None
    return parse_contact_plan(text)


def _prob(s: str) -> float:
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{s} is not a probability")
    return v


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s} must be >= 1")
    return v


def _prob_list(s: str) -> list[float]:
    return [_prob(x) for x in s.split(",") if x.strip()]


def _action_json(a):
    return None if a is None else [[r.k, list(r.path)] for r in a]


# -- commands ------------------------------------------------------------------


def cmd_gen_random(args) -> int:
    out = Path(args.out_dir)
    ss = np.random.SeedSequence(args.seed)
    seeds = [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(args.count)]
    for i, seed in enumerate(seeds):
        g = generate_random_network(args.nodes, args.slots, args.density, args.pf, seed)
        path = out / f"{args.prefix}{i:03d}.plan"
        write_atomic(path, serialize_contact_plan(g))
        print(f"{path} contacts={len(g.contacts)} seed={seed}")
    return EXIT_OK


def _solution_doc(sol, g, target, copies, source):
    states = []
    for t, d in enumerate(sol.pr_by_slot):
        for v in sorted(d):
            best = sol.best_by_slot[t].get(v) if t < len(sol.best_by_slot) else None
            states.append({"copies": list(v), "slot": t, "pr": d[v],
                           "best_action": _action_json(best)})
    return {"network_hash": g.topology_hash(), "target": target, "num_copies": copies,
            "source": source, "sdp_root": sol.sdp_root, "states": states}


def _compiled_doc(sol, g, target, copies, source):
    """Export of the compiled engine; copies at positions that can no longer deliver are omitted."""
    pol = sol.policy()
    B = copies + 1
    states = []
    for t, sr in enumerate(sol.slots):
        for i, code in enumerate(sr.codes):
            v = [int(code // B ** n % B) for n in range(g.node_count)]
            s = NetworkState(tuple(v), t)
            states.append({"copies": v, "slot": t, "pr": float(sr.V[i, 0]),
                           "best_action": _action_json(pol.best_action(s))})
    sdp = pol.sdp_from(source, 0, copies)
    return {"network_hash": g.topology_hash(), "target": target, "num_copies": copies,
            "source": source, "sdp_root": sdp, "states": states}


def cmd_solve(args) -> int:
    g = _read_plan(args.plan)
    src, tgt = g.node_id(args.source), g.node_id(args.target)
    for n in (src, tgt):
        if not 0 <= n < g.node_count:
            raise UsageError(f"node {n} out of range")
    t0 = time.perf_counter()
    if args.engine == "reference":
        sol = solve(g, src, tgt, args.copies, state_cap=args.state_cap)
        sdp, stats = sol.sdp_root, sol.stats
        doc = _solution_doc(sol, g, tgt, args.copies, src) if args.out else None
    else:
        sol = solve_compiled(g, tgt, args.copies)
        sdp, stats = sol.policy().sdp_from(src, 0, args.copies), sol.stats
        doc = _compiled_doc(sol, g, tgt, args.copies, src) if args.out else None
    dt = time.perf_counter() - t0
    print(f"sdp_root {sdp!r}")
    print(f"states {stats['states']} transitions {stats['transitions']} seconds {dt:.3f}")
    if args.out:
        write_atomic(args.out, json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def cmd_build_ltr(args) -> int:
    g = _read_plan(args.plan)
    tgt = g.node_id(args.target)
    if not 0 <= tgt < g.node_count:
        raise UsageError(f"target {tgt} out of range")
    t0 = time.perf_counter()
    if args.engine == "reference":
        policies = {c: solve(g, None, tgt, c, state_cap=args.state_cap)
                    for c in range(1, args.copies + 1)}
    else:
        policies = solve_compiled(g, tgt, args.copies).policy()
    t1 = time.perf_counter()
    tables = build_tables(g, tgt, args.copies, policies)
    t2 = time.perf_counter()
    out = Path(args.out_dir)
    for n, tab in tables.items():
        write_atomic(out / f"ltr-node{n}.json", json.dumps(tab.to_dict(), indent=1) + "\n")
    total = sum(len(t.entries) for t in tables.values())
    print(f"tables {len(tables)} entries {total}")
    print(f"solve_seconds {t1 - t0:.3f} table_seconds {t2 - t1:.3f}")
    return EXIT_OK


def _campaign_from_args(args) -> CampaignConfig:
    conf = {}
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise FileNotFoundError(f"cannot read config {args.config}: {e.strerror}") from None
    def pick(name, default):
        v = getattr(args, name, None)
        return conf.get(name, default) if v is None else v

    schemes = pick("schemes", None)
    if isinstance(schemes, str):
        schemes = [s for s in schemes.split(",") if s.strip()]
    if schemes is None:
        schemes = list(BENCHMARK_SCHEMES)
    if not schemes:
        raise UsageError("empty scheme list")
    plan = pick("plan", None)
    g = _read_plan(plan) if plan else None
    sweep = pick("pf_override", None) if g is not None else pick("pf_sweep", None)
    if isinstance(sweep, str):
        sweep = _prob_list(sweep)
    if g is None and sweep is None:
        sweep = list(DEFAULT_PF_SWEEP)
    runs = pick("runs", 100)
    if runs < 1:
        raise UsageError("--runs must be >= 1")
    cfg = CampaignConfig(
        schemes=schemes, pf_sweep=sweep, runs=runs, seed=pick("seed", 1),
        topologies=pick("topologies", 10), nodes=pick("nodes", 8), slots=pick("slots", 10),
        density=pick("density", 0.2), plan=g, traffic=pick("traffic", "all-to-all"),
        route_cap=pick("route_cap", 10), slot_seconds=pick("slot_seconds", 10.0),
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    return cfg


def cmd_simulate(args) -> int:
    cfg = _campaign_from_args(args)
    res = run_campaign(cfg, jobs=args.jobs, cache_dir=args.cache_dir)
    text = res.to_csv()
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"solve_seconds {res.solve_seconds:.1f} sim_seconds {res.sim_seconds:.1f}",
          file=sys.stderr)
    return EXIT_OK


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileNotFoundError(f"cannot read report {path}: {e.strerror}") from None
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        row = dict(r)
        row["copies"] = int(row["copies"])
        row["pf"] = float(row["pf"]) if row.get("pf") else None
        for k in ("delivery_ratio", "mean_delay_slots", "energy_efficiency"):
            row[k] = float(row[k]) if row.get(k) else None
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    rows = _read_rows(args.csv)
    rel = relative_to(rows, args.metric, args.baseline)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "copies", "pf", args.metric, "relative_to_" + args.baseline])
    for r in rel:
        w.writerow([r["scheme"], r["copies"], "" if r["pf"] is None else r["pf"],
                    "" if r[args.metric] is None else r[args.metric],
                    "" if r["relative"] is None else round(r["relative"], 12)])
    if args.out:
        write_atomic(args.out, buf.getvalue())
    for r in rel:
        label = r["scheme"] + (f"-{r['copies']}" if r["scheme"] in ("rucop", "l-rucop", "snw")
                               else "")
        v = "n/a" if r["relative"] is None else f"{r['relative']:.3f}"
        print(f"{label:<12} pf={r['pf']!s:<5} {args.metric}={r[args.metric]!s:<14} rel={v}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="rucop", description="Multi-copy routing over uncertain contact plans.",
                formatter_class=fmt)
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-random", help="write random contact plans", formatter_class=fmt)
    s.add_argument("--nodes", type=int, default=8)
    s.add_argument("--slots", type=_positive, default=10)
    s.add_argument("--density", type=_prob, default=0.2)
    s.add_argument("--pf", type=_prob, default=0.5)
    s.add_argument("--count", type=_positive, default=1)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--prefix", default="random-")
    s.set_defaults(func=cmd_gen_random)

    s = sub.add_parser("solve", help="optimal delivery probability and policy",
                       formatter_class=fmt)
    s.add_argument("--plan", required=True)
    s.add_argument("--source", required=True, help="node id or alias")
    s.add_argument("--target", required=True, help="node id or alias")
    s.add_argument("--copies", type=_positive, default=1)
    s.add_argument("--engine", choices=("reference", "compiled"), default="reference")
    s.add_argument("--state-cap", type=_positive, default=10_000_000)
    s.add_argument("--out", help="write the solution as JSON")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("build-ltr", help="per-node local routing tables", formatter_class=fmt)
    s.add_argument("--plan", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--copies", type=_positive, default=1, help="copy budget N")
    s.add_argument("--engine", choices=("reference", "compiled"), default="reference")
    s.add_argument("--state-cap", type=_positive, default=10_000_000)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_build_ltr)

    s = sub.add_parser("simulate", help="Monte Carlo benchmark campaign", formatter_class=fmt)
    s.add_argument("--config", help="JSON file with any of the options below")
    s.add_argument("--plan", help="contact plan; random topologies are used if absent")
    s.add_argument("--schemes", help="comma list, e.g. rucop-2,cgr,snw-3 (default: all)")
    s.add_argument("--pf-override", type=_prob_list,
                   help="pf values applied to every contact of --plan")
    s.add_argument("--pf-sweep", type=_prob_list, help="pf values for random topologies "
                   "(default 0,0.1,...,1)")
    s.add_argument("--runs", type=int, help="runs per (topology, pf) (default 100)")
    s.add_argument("--topologies", type=int, help="random topologies (default 10)")
    s.add_argument("--nodes", type=int, help="default 8")
    s.add_argument("--slots", type=int, help="default 10")
    s.add_argument("--density", type=_prob, help="default 0.2")
    s.add_argument("--traffic", help="all-to-all | all-to-one:T | one-to-one:S,T")
    s.add_argument("--route-cap", type=_positive, help="CGR route list bound (default 10)")
    s.add_argument("--seed", type=int, help="campaign seed (default 1)")
    s.add_argument("--jobs", type=_positive, default=1)
    s.add_argument("--cache-dir", help="reuse solves stored here")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="metrics relative to a baseline scheme",
                       formatter_class=fmt)
    s.add_argument("--csv", required=True)
    s.add_argument("--metric", default="delivery_ratio",
                   choices=("delivery_ratio", "mean_delay_slots", "energy_efficiency"))
    s.add_argument("--baseline", default="cgr")
    s.add_argument("--out", help="write the relative series as CSV")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"rucop: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StateCapExceeded as e:
        print(f"rucop: resource cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except (PlanError, SolverError, FileNotFoundError, ValueError, json.JSONDecodeError) as e:
        print(f"rucop: input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
