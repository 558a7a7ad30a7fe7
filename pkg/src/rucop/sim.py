"""Seeded slot-by-slot Monte Carlo execution of routing schemes and benchmark campaigns."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import pickle
import re
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import cgr
from .contact_model import UncertainContactGraph, generate_random_network
from .core import NetworkState
from .engine import CompiledSolution, solve_compiled
from .lrucop import LTrTable, build_tables, kept_copies, lookup

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "scheme", "copies", "pf", "topologies", "runs", "delivery_ratio", "delivery_ratio_stderr",
    "mean_delay_slots", "mean_delay_stderr", "energy_efficiency", "transmissions_total",
)
SCHEME_TAGS = ("rucop", "l-rucop", "cgr-ucop", "cgr", "cgr-hop", "cgr-2cp", "cgr-fa", "snw")
FIXED_COPIES = {"cgr-ucop": 1, "cgr": 1, "cgr-hop": 1, "cgr-2cp": 2, "cgr-fa": 1}
DEFAULT_PF_SWEEP = tuple(round(0.1 * i, 1) for i in range(11))


class SimulationError(RuntimeError):
    pass


# -- failures and traffic -----------------------------------------------------


@dataclass(frozen=True)
class FailureRealization:
    """``failed[i]`` tells whether contact id ``i`` does not materialize."""

    failed: np.ndarray
    seed: object = None

    def is_failed(self, g: UncertainContactGraph, c) -> bool:
        return bool(self.failed[g.contact_id(c)])

    @property
    def failed_count(self) -> int:
        return int(self.failed.sum())


def contact_uniforms(count: int, seed: int, *stream: int) -> np.ndarray:
    """Uniform draws, one per contact, from the stream ``(seed, *stream)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, *stream]))
    return rng.random(count)


def realization_from_uniforms(g: UncertainContactGraph, u: np.ndarray, pf: float | None = None,
                              seed=None) -> FailureRealization:
    """Contact ``i`` fails iff ``u[i] < pf``; the same draws serve every pf."""
    if pf is None:
        p = np.array([c.pf for c in g.contacts], dtype=np.float64)
    else:
        p = np.full(len(g.contacts), pf)
    return FailureRealization(u < p, seed)


def realize_failures(g: UncertainContactGraph, seed: int) -> FailureRealization:
    return realization_from_uniforms(g, contact_uniforms(len(g.contacts), seed), None, seed)


@dataclass(frozen=True)
class Bundle:
    id: int
    source: int
    target: int
    creation_slot: int = 0


def make_traffic(pattern: str, node_count: int) -> list[Bundle]:
    """``all-to-all``, ``all-to-one:<target>`` or ``one-to-one:<src>,<dst>``, created at slot 0."""
    if pattern == "all-to-all":
        pairs = [(s, d) for s in range(node_count) for d in range(node_count) if s != d]
    elif pattern.startswith("all-to-one:"):
        d = int(pattern.split(":", 1)[1])
        pairs = [(s, d) for s in range(node_count) if s != d]
    elif pattern.startswith("one-to-one:"):
        s, d = (int(x) for x in pattern.split(":", 1)[1].split(","))
        pairs = [(s, d)]
    else:
        raise ValueError(f"unknown traffic pattern {pattern!r}")
    for s, d in pairs:
        if not (0 <= s < node_count and 0 <= d < node_count):
            raise ValueError(f"traffic pair {s},{d} out of range")
    return [Bundle(i, s, d) for i, (s, d) in enumerate(pairs)]


@dataclass
class Outcome:
    bundle: int
    delivered: bool
    delivery_slot: int | None
    delay: int | None
    transmissions: int
    cell: int = 0


# -- scheme adapters ---------------------------------------------------------------

# holders: {(node, tag): copies}.  A decision is a list of (tag, k, path).


class SchemeAdapter:
    tag = ""
    copies = 1

    @property
    def name(self) -> str:
        return f"{self.tag}-{self.copies}" if self.tag in ("rucop", "l-rucop", "snw") else self.tag

    def begin(self, bundle: Bundle, realization: FailureRealization):
        """Per-bundle context and the initial copy placement."""
        return None, {(bundle.source, 0): self.copies}

    def decide(self, ctx, bundle: Bundle, t: int, holders: dict) -> list[tuple[int, int, tuple]]:
        raise NotImplementedError


class RucopAdapter(SchemeAdapter):
    """Global-view execution of an optimal policy; one policy per target."""

    tag = "rucop"

    def __init__(self, policies: dict, copies: int, node_count: int):
        self.policies = policies
        self.copies = copies
        self.node_count = node_count
        self._memo: dict = {}

    def decide(self, ctx, bundle, t, holders):
        v = [0] * self.node_count
        for (n, _), k in holders.items():
            v[n] += k
        key = (bundle.target, tuple(v), t)
        rules = self._memo.get(key)
        if rules is None:
            a = self.policies[bundle.target].best_action(NetworkState(tuple(v), t))
            rules = [(0, r.k, r.path) for r in (a or ()) if not r.is_storage]
            self._memo[key] = rules
        return rules


class LRucopAdapter(SchemeAdapter):
    """Each holder consults only its own table, copy count and past decisions."""

    tag = "l-rucop"

    def __init__(self, tables: dict[int, dict[int, LTrTable]], copies: int):
        self.tables = tables
        self.copies = copies

    def begin(self, bundle, realization):
        # node -> (ts_safe, copies it expected to still hold, slot of that decision)
        return {}, {(bundle.source, 0): self.copies}

    def decide(self, ctx, bundle, t, holders):
        table = self.tables[bundle.target]
        out = []
        for (n, _), h in sorted(holders.items()):
            mem = ctx.get(n)
            if mem is None or mem[2] != t - 1 or mem[1] != h:
                ts_safe = t  # new copies arrived or an own transmission failed
            else:
                ts_safe = mem[0]
            a, ts_safe = lookup(table[n], h, ts_safe, t)
            ctx[n] = (ts_safe, kept_copies(a, n), t)
            out.extend((0, r.k, r.path) for r in a if not r.is_storage)
        return out


class CgrAdapter(SchemeAdapter):
    """Single-copy CGR variants that recompute the route at every slot."""

    def __init__(self, tag: str, finders: dict[int, cgr.RouteFinder], route_cap: int,
                 pr_tables: dict[int, cgr.PrTable] | None = None):
        if tag not in ("cgr", "cgr-hop", "cgr-ucop", "cgr-2cp"):
            raise ValueError(tag)
        self.tag = tag
        self.copies = FIXED_COPIES[tag]
        self.finders = finders
        self.route_cap = route_cap
        self.pr_tables = pr_tables or {}
        self._memo: dict = {}

    def _choose(self, selector: str, n: int, t: int, target: int):
        key = (selector, n, t, target)
        if key in self._memo:
            return self._memo[key]
        routes = self.finders[target].routes(n, t, self.route_cap)
        path = None
        if routes:
            if selector == "cgr":
                r = cgr.select_cgr(routes)
            elif selector == "cgr-hop":
                r = cgr.select_cgr_hop(routes)
            else:
                r = cgr.select_cgr_ucop(routes, t, self.pr_tables[target])
            path = cgr.first_slot_path(r, t)
        self._memo[key] = path
        return path

    def begin(self, bundle, realization):
        if self.tag != "cgr-2cp":
            return None, {(bundle.source, 0): 1}
        # the second copy is generated only if the two routes differ
        routes = self.finders[bundle.target].routes(bundle.source, bundle.creation_slot,
                                                    self.route_cap)
        held = {(bundle.source, 0): 1}
        if routes and cgr.select_cgr_2cp(routes)[1] is not None:
            held[(bundle.source, 1)] = 1
        return None, held

    def decide(self, ctx, bundle, t, holders):
        out = []
        for (n, tag), k in sorted(holders.items()):
            if self.tag == "cgr-2cp":
                sel = "cgr" if tag == 0 else "cgr-hop"
            else:
                sel = self.tag
            path = self._choose(sel, n, t, bundle.target)
            if path is not None:
                out.append((tag, k, path))
        return out


class CgrFaAdapter(SchemeAdapter):
    """CGR on the plan with every failing contact removed."""

    tag = "cgr-fa"

    def __init__(self, g: UncertainContactGraph):
        self.g = g
        self._realization = None
        self._finders: dict[int, cgr.RouteFinder] = {}
        self._memo: dict = {}

    def begin(self, bundle, realization):
        if realization is not self._realization:
            self._realization = realization
            self._pruned = cgr.prune_failed_contacts(self.g, realization.failed)
            self._finders = {}
            self._memo = {}
        return None, {(bundle.source, 0): 1}

    def decide(self, ctx, bundle, t, holders):
        out = []
        for (n, tag), k in holders.items():
            key = (n, t, bundle.target)
            if key not in self._memo:
                f = self._finders.get(bundle.target)
                if f is None:
                    f = self._finders[bundle.target] = cgr.RouteFinder(self._pruned, bundle.target)
                routes = f.routes(n, t, 1)
                self._memo[key] = cgr.first_slot_path(routes[0], t) if routes else None
            path = self._memo[key]
            if path is not None:
                out.append((tag, k, path))
        return out


class SprayAndWaitAdapter(SchemeAdapter):
    """Vanilla spray: one copy per newly met neighbor of the source, then direct delivery only."""

    tag = "snw"

    def __init__(self, g: UncertainContactGraph, copies: int):
        if copies < 2:
            raise ValueError("spray-and-wait needs at least 2 copies")
        self.g = g
        self.copies = copies
        self._out = [[[] for _ in range(g.node_count)] for _ in range(g.slot_count)]
        for c in g.contacts:
            self._out[c.slot][c.src].append(c.dst)

    def begin(self, bundle, realization):
        # sprayed: neighbors known to hold a copy; pending: (neighbor, contact id) sent last slot
        return {"sprayed": set(), "pending": [], "failed": realization.failed}, \
            {(bundle.source, 0): self.copies}

    def decide(self, ctx, bundle, t, holders):
        for v, cid in ctx["pending"]:
            if not ctx["failed"][cid]:
                ctx["sprayed"].add(v)
        ctx["pending"] = []
        return snw_forward(self.g, self._out[t], bundle, t, holders, ctx)


def snw_forward(g, out_t, bundle, t, holders, ctx) -> list[tuple[int, int, tuple]]:
    rules = []
    for (n, tag), h in sorted(holders.items()):
        nbrs = out_t[n]
        if bundle.target in nbrs:
            rules.append((tag, 1, (n, bundle.target)))
            h -= 1
        if n != bundle.source:
            continue
        for v in nbrs:
            if h <= 1:
                break
            if v == bundle.target or v in ctx["sprayed"]:
                continue
            rules.append((tag, 1, (n, v)))
            ctx["pending"].append((v, g.contact_id(g.contact(n, v, t))))
            h -= 1
    return rules


# -- execution ---------------------------------------------------------------------


def run_bundle(g: UncertainContactGraph, scheme: SchemeAdapter, bundle: Bundle,
               realization: FailureRealization, index: dict | None = None) -> Outcome:
    """Execute one bundle until its first delivery or the end of the horizon."""
    if index is None:
        index = {c.key: i for i, c in enumerate(g.contacts)}
    failed = realization.failed
    if bundle.source == bundle.target:
        return Outcome(bundle.id, True, bundle.creation_slot, 0, 0)
    ctx, holders = scheme.begin(bundle, realization)
    tx = 0
    for t in range(bundle.creation_slot, g.slot_count):
        rules = scheme.decide(ctx, bundle, t, holders)
        if not rules:
            continue
        new = dict(holders)
        hit = False
        for tag, k, path in rules:
            if len(path) < 2 or k == 0:
                continue
            key = (path[0], tag)
            if new.get(key, 0) < k:
                raise SimulationError(
                    f"{scheme.name}: node {path[0]} sends {k} copies it does not hold at slot {t}")
            new[key] -= k
            cur = path[0]
            for v in path[1:]:
                cid = index.get((cur, v, t))
                if cid is None:
                    raise SimulationError(f"{scheme.name}: no contact {cur}->{v} at slot {t}")
                tx += k
                if failed[cid]:
                    break
                cur = v
            new[(cur, tag)] = new.get((cur, tag), 0) + k
            if cur == bundle.target:
                hit = True
        holders = {key: k for key, k in new.items() if k}
        if hit:
            return Outcome(bundle.id, True, t, t - bundle.creation_slot, tx)
    return Outcome(bundle.id, False, None, None, tx)


def run(g: UncertainContactGraph, scheme: SchemeAdapter, traffic: Iterable[Bundle],
        realization: FailureRealization, cell: int = 0) -> list[Outcome]:
    index = {c.key: i for i, c in enumerate(g.contacts)}
    out = []
    for b in traffic:
        o = run_bundle(g, scheme, b, realization, index)
        o.cell = cell
        out.append(o)
    return out


# -- metrics -----------------------------------------------------------------------


@dataclass
class Metrics:
    generated: int
    delivered: int
    delivery_ratio: float
    delivery_ratio_stderr: float | None
    mean_delay_slots: float | None
    mean_delay_stderr: float | None
    energy_efficiency: float | None
    transmissions_total: int
    cells: int

    def mean_delay_seconds(self, slot_seconds: float) -> float | None:
        return None if self.mean_delay_slots is None else self.mean_delay_slots * slot_seconds


def _stderr(xs: Sequence[float]) -> float | None:
    if len(xs) < 2:
        return None
    return float(np.std(xs, ddof=1) / math.sqrt(len(xs)))


def compute_metrics(outcomes: Sequence[Outcome], generated: int) -> Metrics:
    """Delivery ratio, delay over delivered bundles and deliveries per transmission.

    The delivery-ratio error is taken across cells (``Outcome.cell``), each
    cell being one topology and failure realization.
    """
    if generated < len(outcomes):
        raise ValueError("more outcomes than generated bundles")
    delivered = [o for o in outcomes if o.delivered]
    tx = sum(o.transmissions for o in outcomes)
    per_cell: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for o in outcomes:
        per_cell[o.cell][0] += 1
        per_cell[o.cell][1] += o.delivered
    ratios = [d / n for n, d in per_cell.values()]
    delays = [o.delay for o in delivered]
    return Metrics(
        generated=generated,
        delivered=len(delivered),
        delivery_ratio=len(delivered) / generated if generated else 0.0,
        delivery_ratio_stderr=_stderr(ratios),
        mean_delay_slots=float(np.mean(delays)) if delays else None,
        mean_delay_stderr=_stderr(delays) if delays else None,
        energy_efficiency=len(delivered) / tx if tx else None,
        transmissions_total=tx,
        cells=len(per_cell),
    )


# -- campaigns ---------------------------------------------------------------------


def parse_scheme(name: str) -> tuple[str, int]:
    """``rucop-2`` -> ("rucop", 2); fixed-copy schemes take no suffix."""
    name = name.strip().lower()
    if name in FIXED_COPIES:
        return name, FIXED_COPIES[name]
    m = re.fullmatch(r"(rucop|l-rucop|snw)-(\d+)", name)
    if not m:
        raise ValueError(f"unknown scheme {name!r}")
    tag, k = m.group(1), int(m.group(2))
    if k < 1 or (tag == "snw" and k < 2):
        raise ValueError(f"illegal copy count for {tag}: {k}")
    return tag, k


BENCHMARK_SCHEMES = (
    "rucop-1", "rucop-2", "rucop-3", "rucop-4", "l-rucop-1", "l-rucop-2", "l-rucop-3",
    "l-rucop-4", "cgr-ucop", "cgr", "cgr-hop", "cgr-2cp", "cgr-fa", "snw-2", "snw-3", "snw-4",
)


@dataclass
class CampaignConfig:
    """A benchmark: random topologies (or one plan), traffic, schemes and a pf sweep.

    ``pf_sweep=None`` keeps the plan's own failure probabilities.
    """

    schemes: Sequence[str] = BENCHMARK_SCHEMES
    pf_sweep: Sequence[float] | None = DEFAULT_PF_SWEEP
    runs: int = 100
    seed: int = 1
    topologies: int = 10
    nodes: int = 8
    slots: int = 10
    density: float = 0.2
    plan: UncertainContactGraph | None = None
    traffic: str = "all-to-all"
    route_cap: int = cgr.DEFAULT_ROUTE_CAP
    slot_seconds: float = 10.0

    def validate(self) -> None:
        if not self.schemes:
            raise ValueError("no schemes given")
        for s in self.schemes:
            parse_scheme(s)
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.plan is None and self.topologies < 1:
            raise ValueError("topologies must be >= 1")
        if self.pf_sweep is not None:
            if not self.pf_sweep:
                raise ValueError("empty pf sweep")
            if any(not 0.0 <= p <= 1.0 for p in self.pf_sweep):
                raise ValueError("pf values must lie in [0, 1]")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")

    @property
    def topology_count(self) -> int:
        return 1 if self.plan is not None else self.topologies

    def topology(self, i: int) -> UncertainContactGraph:
        if self.plan is not None:
            return self.plan
        seed = int(np.random.SeedSequence([self.seed, 0, i]).generate_state(1, np.uint64)[0])
        pf = self.pf_sweep[0] if self.pf_sweep else 0.5
        return generate_random_network(self.nodes, self.slots, self.density, pf, seed)


@dataclass
class CellSeries:
    """Per-cell counters of one (scheme, pf) pair, cells ordered by (topology, run)."""

    generated: list[int] = field(default_factory=list)
    delivered: list[int] = field(default_factory=list)
    transmissions: list[int] = field(default_factory=list)
    delays: list[int] = field(default_factory=list)

    def extend(self, other: "CellSeries") -> None:
        self.generated += other.generated
        self.delivered += other.delivered
        self.transmissions += other.transmissions
        self.delays += other.delays

    def metrics(self) -> Metrics:
        gen = sum(self.generated)
        dl = sum(self.delivered)
        tx = sum(self.transmissions)
        ratios = [d / g for d, g in zip(self.delivered, self.generated) if g]
        return Metrics(gen, dl, dl / gen if gen else 0.0, _stderr(ratios),
                       float(np.mean(self.delays)) if self.delays else None,
                       _stderr(self.delays) if self.delays else None,
                       dl / tx if tx else None, tx, len(self.generated))

    def ratios(self) -> np.ndarray:
        return np.array([d / g for d, g in zip(self.delivered, self.generated)])


@dataclass
class CampaignResult:
    config: CampaignConfig
    series: dict[tuple[str, int], CellSeries]
    solve_seconds: float = 0.0
    sim_seconds: float = 0.0

    def metrics(self, scheme: str, pf_index: int = 0) -> Metrics:
        return self.series[(scheme, pf_index)].metrics()

    def paired(self, a: str, b: str, pf_index: int) -> tuple[float, float | None]:
        """Mean and standard error of the per-cell delivery-ratio difference a - b."""
        d = self.series[(a, pf_index)].ratios() - self.series[(b, pf_index)].ratios()
        return float(d.mean()), _stderr(list(d))

    def rows(self) -> list[dict]:
        cfg = self.config
        pfs = list(cfg.pf_sweep) if cfg.pf_sweep is not None else [None]
        order = sorted(cfg.schemes, key=lambda s: parse_scheme(s))
        rows = []
        for s in order:
            tag, k = parse_scheme(s)
            for j in sorted(range(len(pfs)), key=lambda j: (pfs[j] is not None, pfs[j])):
                m = self.metrics(s, j)
                rows.append({
                    "scheme": tag, "copies": k, "pf": pfs[j],
                    "topologies": cfg.topology_count, "runs": cfg.runs,
                    "delivery_ratio": m.delivery_ratio,
                    "delivery_ratio_stderr": m.delivery_ratio_stderr,
                    "mean_delay_slots": m.mean_delay_slots,
                    "mean_delay_stderr": m.mean_delay_stderr,
                    "energy_efficiency": m.energy_efficiency,
                    "transmissions_total": m.transmissions_total,
                })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows():
            w.writerow(["" if r[c] is None else _fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def _engine_fingerprint() -> str:
    from . import engine
    return hashlib.sha256(Path(engine.__file__).read_bytes()).hexdigest()[:16]


def cached_solve(g: UncertainContactGraph, target: int, max_copies: int, pf_matrix,
                 cache_dir: str | os.PathLike | None = None) -> CompiledSolution:
    """``solve_compiled`` with an optional on-disk memo keyed by every input."""
    if cache_dir is None:
        return solve_compiled(g, target, max_copies, pf_matrix)
    h = hashlib.sha256()
    for part in (g.topology_hash(), repr([(c.key, c.pf) for c in g.contacts]), str(target),
                 str(max_copies), _engine_fingerprint()):
        h.update(part.encode())
    if pf_matrix is not None:
        h.update(np.asarray(pf_matrix, dtype=np.float64).tobytes())
    path = Path(cache_dir) / f"solve-{h.hexdigest()[:32]}.pkl"
    if path.exists():
        with open(path, "rb") as f:
            return pickle.load(f)
    sol = solve_compiled(g, target, max_copies, pf_matrix)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as f:
        pickle.dump(sol, f, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)
    return sol


def _topology_series(cfg: CampaignConfig, i: int, cache_dir) -> tuple[dict, float, float]:
    import time

    g = cfg.topology(i)
    traffic = make_traffic(cfg.traffic, g.node_count)
    targets = sorted({b.target for b in traffic})
    parsed = {s: parse_scheme(s) for s in cfg.schemes}
    need_k = max([k for tag, k in parsed.values() if tag in ("rucop", "l-rucop")]
                 + [1 if any(tag == "cgr-ucop" for tag, _ in parsed.values()) else 0])
    pfs = list(cfg.pf_sweep) if cfg.pf_sweep is not None else [None]
    t0 = time.perf_counter()
    sols = {}
    if need_k:
        for d in targets:
            sols[d] = cached_solve(g, d, need_k, None if pfs == [None] else pfs, cache_dir)
            log.info("topology %d target %d solved (%s)", i, d, sols[d].stats)
    t_solve = time.perf_counter() - t0
    finders = {d: cgr.RouteFinder(g, d) for d in targets}
    series: dict[tuple[str, int], CellSeries] = {}
    t1 = time.perf_counter()
    for j, pf in enumerate(pfs):
        gp = g if pf is None else g.with_pf(pf)
        policies = {d: sols[d].policy(j) for d in sols}
        adapters: dict[str, SchemeAdapter] = {}
        for s, (tag, k) in parsed.items():
            if tag == "rucop":
                adapters[s] = RucopAdapter(policies, k, g.node_count)
            elif tag == "l-rucop":
                tables = {d: build_tables(gp, d, k, policies[d]) for d in targets}
                adapters[s] = LRucopAdapter(tables, k)
            elif tag == "cgr-ucop":
                # route scores read contact pf, so search the graph of this sweep point
                prs = {d: cgr.PrTable.from_policy(policies[d], gp) for d in targets}
                fp = {d: cgr.RouteFinder(gp, d) for d in targets}
                adapters[s] = CgrAdapter(tag, fp, cfg.route_cap, prs)
            elif tag in ("cgr", "cgr-hop", "cgr-2cp"):
                adapters[s] = CgrAdapter(tag, finders, cfg.route_cap)
            elif tag == "cgr-fa":
                adapters[s] = CgrFaAdapter(gp)
            else:
                adapters[s] = SprayAndWaitAdapter(gp, k)
        index = {c.key: n for n, c in enumerate(g.contacts)}
        for s in cfg.schemes:
            series[(s, j)] = CellSeries()
        for r in range(cfg.runs):
            u = contact_uniforms(len(g.contacts), cfg.seed, 1, i, r)
            rz = realization_from_uniforms(gp, u, pf, (cfg.seed, i, r))
            for s in cfg.schemes:
                ad = adapters[s]
                dl = tx = 0
                cs = series[(s, j)]
                for b in traffic:
                    o = run_bundle(gp, ad, b, rz, index)
                    tx += o.transmissions
                    if o.delivered:
                        dl += 1
                        cs.delays.append(o.delay)
                cs.generated.append(len(traffic))
                cs.delivered.append(dl)
                cs.transmissions.append(tx)
    return series, t_solve, time.perf_counter() - t1


def _topology_job(args):
    cfg, i, cache_dir = args
    return _topology_series(cfg, i, cache_dir)


def run_campaign(cfg: CampaignConfig, jobs: int = 1,
                 cache_dir: str | os.PathLike | None = None) -> CampaignResult:
    """Simulate every (scheme, pf, topology, run) cell; results do not depend on ``jobs``."""
    cfg.validate()
    n = cfg.topology_count
    work = [(cfg, i, cache_dir) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_topology_job, work))
    else:
        parts = [_topology_job(w) for w in work]
    series: dict[tuple[str, int], CellSeries] = {}
    ts = tm = 0.0
    for part, a, b in parts:
        ts += a
        tm += b
        for key, cs in part.items():
            series.setdefault(key, CellSeries()).extend(cs)
    return CampaignResult(cfg, series, ts, tm)


def relative_to(rows: list[dict], metric: str, baseline: str = "cgr") -> list[dict]:
    """Each row's ``metric`` divided by the baseline scheme's value at the same pf."""
    base = {r["pf"]: r for r in rows if r["scheme"] == baseline}
    if not base:
        raise ValueError(f"no {baseline} rows to normalize against")
    out = []
    for r in rows:
        b = base.get(r["pf"])
        v, bv = r.get(metric), (b or {}).get(metric)
        rel = None
        if v is not None and bv not in (None, 0, 0.0):
            rel = v / bv
        out.append({"scheme": r["scheme"], "copies": r["copies"], "pf": r["pf"], metric: v,
                    "relative": rel})
    return out

