"""Acceptance checks; each test records one PASS/FAIL line in the terminal summary."""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from rucop import cgr
from rucop.contact_model import generate_random_network, slot_digraph
from rucop.core import (
    Action, NetworkState, Rule, actions_to_state, compatible_rule_sets, enumerate_paths, solve,
    successful_states,
)
from rucop.lrucop import build_tables
from rucop.oracle import oracle_sdp
from rucop.sim import (
    Bundle, CampaignConfig, LRucopAdapter, RucopAdapter, contact_uniforms, make_traffic,
    realization_from_uniforms, run_bundle, run_campaign,
)

from conftest import A, B, C, D, S, record_criterion

R = Rule


def test_reroute_golden_value(net):
    t0 = time.perf_counter()
    v = solve(net, S, D, 1).sdp_root
    dt = time.perf_counter() - t0
    ok = abs(v - 0.21875) <= 1e-9 and dt < 1.0
    record_criterion(1, ok, f"sdp_root={v!r} (want 0.21875 within 1e-9) in {dt:.3f} s (< 1 s)")
    assert ok


def test_no_reroute_variant(net_no_detour):
    v = solve(net_no_detour, S, D, 1).sdp_root
    ok = abs(v - 0.125) <= 1e-9
    record_criterion(2, ok, f"sdp_root={v!r} without C->E and E->D (want 0.125 within 1e-9)")
    assert ok


def test_two_copy_structure(net):
    finals = successful_states(net, D, 2)
    best = solve(net, S, D, 2).best_action(NetworkState.single(6, S, 2, 0))
    want = Action([R(1, (S, A, B)), R(1, (S, C))])
    ok = len(finals) == 6 and best == want
    record_criterion(3, ok, f"{len(finals)} successful states (want 6); best action {best} "
                            f"(want {want})")
    assert ok


def test_rule_set_worked_example(net):
    paths = enumerate_paths(slot_digraph(net, 0), B)
    got = set(compatible_rule_sets(B, 2, paths))
    p = [(B,), (A, B), (S, B), (S, A, B)]
    listed = {Action([R(2, q)]) for q in p}
    listed |= {Action([R(1, q1), R(1, q2)]) for i, q1 in enumerate(p) for q2 in p[i + 1:]}
    acts = actions_to_state(NetworkState((0, 0, 2, 1, 0, 0), 1), net)
    r_c = {Action([R(1, (C,))]), Action([R(1, (S, C))])}
    combos = {Action(list(x) + list(y)) for x in listed for y in r_c}
    ok = got == listed and len(listed) == 10 and len(acts) == 20 and set(acts) == combos
    record_criterion(4, ok, f"{len(got)} compatible rule sets for B (want the 10 listed), "
                            f"{len(acts)} actions to [B^2 C^1 | t1] (want 20)")
    assert ok


def _oracle_instance(i):
    rng = np.random.default_rng(np.random.SeedSequence([5, i]))
    n = int(rng.integers(2, 6))
    T = int(rng.integers(1, 5))
    k = int(rng.integers(1, 3))
    g = generate_random_network(n, T, float(rng.uniform(0.2, 0.6)), 0.5, int(rng.integers(2**32)))
    g = replace(g, contacts=tuple(replace(c, pf=float(rng.random())) for c in g.contacts))
    src, dst = (int(x) for x in rng.choice(n, size=2, replace=False))
    return g, src, dst, k


def test_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    nontrivial = 0
    for i in range(100):
        g, src, dst, k = _oracle_instance(i)
        a = solve(g, src, dst, k).sdp_root
        b = oracle_sdp(g, src, dst, k)
        worst = max(worst, abs(a - b))
        nontrivial += 0.0 < b < 1.0
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 300
    record_criterion(5, ok, f"100 instances, worst |solve - oracle| = {worst:.2e} (<= 1e-9), "
                            f"{nontrivial} with 0 < sdp < 1, {dt:.1f} s (< 300 s)")
    assert ok


def _mc_instances(count):
    """First ``count`` seeded instances whose optimum lies strictly between 0 and 1."""
    out, seed = [], 0
    while len(out) < count:
        g = generate_random_network(6, 6, 0.3, 0.5, seed=10_000 + seed)
        k = 1 + seed % 2
        sol = solve(g, None, 5, k)
        p = sol.sdp_from(0)
        if 0.0 < p < 1.0:
            out.append((seed, g, k, sol, p))
        seed += 1
    return out


def test_monte_carlo_consistency():
    M = 10_000
    worst, lines, ok = 0.0, [], True
    for seed, g, k, sol, p in _mc_instances(10):
        ad = RucopAdapter({5: sol}, k, g.node_count)
        hits = 0
        for r in range(M):
            real = realization_from_uniforms(g, contact_uniforms(len(g.contacts), 6, seed, r))
            hits += run_bundle(g, ad, Bundle(0, 0, 5), real).delivered
        bound = 3 * math.sqrt(p * (1 - p) / M)
        z = abs(hits / M - p) / (bound / 3)
        worst = max(worst, z)
        ok &= abs(hits / M - p) <= bound
        lines.append(f"{hits / M:.4f}/{p:.4f}")
    record_criterion(6, ok, f"10 instances x {M} runs, worst deviation {worst:.2f} sigma "
                            f"(<= 3); empirical/optimal: {' '.join(lines)}")
    assert ok


def _local_vs_global(g, runs, seed):
    N = g.node_count
    traffic = make_traffic("all-to-all", N)
    sols = {d: solve(g, None, d, 1) for d in range(N)}
    glob = RucopAdapter(sols, 1, N)
    local = LRucopAdapter({d: build_tables(g, d, 1, {1: sols[d]}) for d in range(N)}, 1)
    diffs = 0
    delivered = 0
    for r in range(runs):
        real = realization_from_uniforms(g, contact_uniforms(len(g.contacts), seed, r))
        for b in traffic:
            x = run_bundle(g, glob, b, real)
            y = run_bundle(g, local, b, real)
            diffs += (x.delivered, x.delivery_slot) != (y.delivered, y.delivery_slot)
            delivered += x.delivered
    return diffs, delivered, runs * len(traffic)


def test_single_copy_local_equivalence(net):
    d0, dl0, n0 = _local_vs_global(net, 500, 7)
    total_diff, total, total_dl = d0, n0, dl0
    for i in range(20):
        g = generate_random_network(8, 10, 0.2, 0.5, seed=20_000 + i)
        d, dl, n = _local_vs_global(g, 20, 7 + i)
        total_diff += d
        total += n
        total_dl += dl
    ok = total_diff == 0
    record_criterion(7, ok, f"{total_diff} differing outcomes out of {total} bundle runs "
                            f"({total_dl} delivered) on the reroute network and 20 random "
                            f"instances")
    assert ok


def test_ucop_route_selection(net):
    pol = solve(net, None, D, 1)
    pr = cgr.PrTable.from_policy(pol, net)
    routes = cgr.compute_routes(net, S, 0, D)
    best = cgr.select_cgr_ucop(routes, 0, pr)
    scores = {}
    for r in routes:
        if r.start_slot == 0:
            p = cgr.partial_route(r, 0)
            scores[p.path] = cgr.sdp_cgr(p, 0, pr)
    chosen = cgr.route_score(best, S, 0, pr)
    ok = (best.nodes[1] == C and abs(chosen - 0.21875) <= 1e-9
          and abs(scores[(S, A, B)] - 0.125) <= 1e-9 and abs(scores[(S, B)] - 0.1) <= 1e-9
          and abs(chosen - pol.sdp_from(S)) <= 1e-9)
    listing = ", ".join(f"{'->'.join('SABCDE'[n] for n in k)}={v:.5f}" for k, v in
                        sorted(scores.items(), key=lambda kv: -kv[1]))
    record_criterion(8, ok, f"selected {'->'.join('SABCDE'[n] for n in best.nodes)}; "
                            f"scores {listing}; Pr_S(t0)={pol.sdp_from(S):.5f}")
    assert ok


ORDER = ("cgr-fa", "rucop-4", "rucop-2", "rucop-1", "cgr")
PLAN_SCHEMES = ("rucop-1", "rucop-2", "rucop-3", "rucop-4", "l-rucop-1", "l-rucop-2",
                "l-rucop-3", "l-rucop-4", "cgr-ucop", "cgr-hop", "cgr-2cp", "cgr-fa")


def test_benchmark_trends():
    cfg = CampaignConfig(seed=1)
    t0 = time.perf_counter()
    res = run_campaign(cfg, jobs=os.cpu_count() or 1)
    minutes = (time.perf_counter() - t0) / 60
    pfs = list(cfg.pf_sweep)
    dr = {s: [res.metrics(s, j).delivery_ratio for j in range(len(pfs))] for s in cfg.schemes}
    j0 = pfs.index(0.0)
    gap0 = max(abs(dr[s][j0] - dr["cgr"][j0]) for s in PLAN_SCHEMES)
    ok_a = gap0 <= 0.01
    broken = []
    for pf in (0.4, 0.5, 0.6, 0.7, 0.8):
        j = pfs.index(pf)
        for hi, lo in zip(ORDER, ORDER[1:]):
            mean, se = res.paired(hi, lo, j)
            if mean < -(se or 0.0):
                broken.append(f"{hi}<{lo}@{pf} ({mean:+.4f}, se {se:.4f})")
    ok_b = not broken
    j7 = pfs.index(0.7)
    gain, gain_se = res.paired("cgr-ucop", "cgr", j7)
    ok_c = gain >= 0.04
    ok = ok_a and ok_b and ok_c
    detail = (f"(a) max |dr - dr_cgr| at pf=0: {gap0 * 100:.2f} pp (<= 1) {'ok' if ok_a else 'NO'}; "
              f"(b) ordering {' >= '.join(ORDER)} for pf 0.4..0.8: "
              f"{'ok' if ok_b else 'violated ' + '; '.join(broken)}; "
              f"(c) cgr-ucop - cgr at pf=0.7: {gain * 100:.2f} pp, se {gain_se * 100:.2f} "
              f"(>= 4) {'ok' if ok_c else 'NO'}; "
              f"rucop-1 - cgr at pf=0.7: {res.paired('rucop-1', 'cgr', j7)[0] * 100:.2f} pp; "
              f"runtime {minutes:.1f} min (target < 30 min, "
              f"solve {res.solve_seconds / 60:.1f} + simulate {res.sim_seconds / 60:.1f})")
    record_criterion(9, ok, detail)
    assert ok_a, detail
    assert ok_b, detail
    assert ok_c, detail


@pytest.mark.parametrize("copies", [1, 2])
def test_scalability(copies):
    g = CampaignConfig(seed=1).topology(0).with_pf(0.5)
    t0 = time.perf_counter()
    sol = solve(g, 0, 1, copies)
    dt = time.perf_counter() - t0
    ok = dt < 60
    record_criterion(10, ok, f"{copies} cop{'y' if copies == 1 else 'ies'} on an 8-node, "
                             f"10-slot random network at pf 0.5: {dt:.2f} s (< 60 s), "
                             f"states {sol.stats['states']}, transitions "
                             f"{sol.stats['transitions']}, sdp_root {sol.sdp_root:.4f}")
    assert ok
