import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rucop import cgr
from rucop.cgr import (
    PrTable, RouteFinder, compute_routes, make_route, partial_route, prune_failed_contacts,
    route_score, sdp_cgr, select_cgr, select_cgr_2cp, select_cgr_hop, select_cgr_ucop,
)
from rucop.contact_model import Contact, UncertainContactGraph
from rucop.core import solve
from rucop.sim import Bundle, CgrFaAdapter, contact_uniforms, realization_from_uniforms, run_bundle

from conftest import A, B, C, D, E, S
from strategies import small_graphs


def route(g, *hops):
    return make_route(g, [g.contact(s, d, t) for s, d, t in hops])


@pytest.fixture
def pr(net):
    return PrTable.from_policy(solve(net, None, D, 1), net)


def test_reroute_route_list(net):
    got = {r.nodes for r in compute_routes(net, S, 0, D)}
    assert {(S, A, B, D), (S, B, D), (S, C, D), (S, C, E, D)} <= got
    assert compute_routes(net, D, 0, S) == []
    assert compute_routes(net, E, 3, D) == []
    one = compute_routes(net, S, 0, D, K=1)
    assert [r.nodes for r in one] == [(S, B, D)]
    with pytest.raises(ValueError):
        compute_routes(net, S, 4, D)


def test_route_order(net):
    routes = compute_routes(net, S, 0, D)
    keys = [r.order_key() for r in routes[:-1]]
    assert keys == sorted(keys)


def test_selectors(net):
    routes = compute_routes(net, S, 0, D)
    assert select_cgr(routes).nodes == (S, B, D)
    assert select_cgr_hop(routes).hop_count == 2
    late = route(net, (S, C, 0), (C, E, 2), (E, D, 2))
    early = route(net, (S, B, 0), (B, D, 1))
    assert select_cgr([late, early]) == early
    assert select_cgr([late]) == late
    long_early = route(net, (S, A, 0), (A, B, 0), (B, D, 1))
    short_late = route(net, (S, C, 0), (C, D, 1))
    assert select_cgr_hop([long_early, late, short_late]) == short_late
    for f in (select_cgr, select_cgr_hop, select_cgr_2cp):
        with pytest.raises(ValueError):
            f([])


def test_two_copy_pair(net):
    routes = compute_routes(net, S, 0, D)
    a, b = select_cgr_2cp(routes)
    assert a == select_cgr(routes) and b is None  # best-time route is also the least-hop one
    lone = route(net, (S, C, 0), (C, D, 1))
    assert select_cgr_2cp([lone]) == (lone, None)
    g = UncertainContactGraph(4, 2, (Contact(0, 0, 1, 0.1), Contact(0, 1, 2, 0.1),
                                     Contact(0, 2, 3, 0.1), Contact(1, 0, 3, 0.1)))
    long_early = route(g, (0, 1, 0), (1, 2, 0), (2, 3, 0))
    short_late = route(g, (0, 3, 1))
    assert select_cgr_2cp(compute_routes(g, 0, 0, 3)) == (long_early, short_late)


def test_partial_route(net):
    r = route(net, (S, A, 0), (A, B, 0), (B, D, 1))
    p = partial_route(r, 0)
    assert p.path == (S, A, B) and len(p) == 2 and p[0].dst == A
    single = partial_route(route(net, (S, C, 0), (C, D, 1)), 0)
    assert single.path == (S, C)
    with pytest.raises(ValueError):
        partial_route(r, 1)


def test_make_route_rejects_broken_chains(net):
    with pytest.raises(ValueError):
        route(net, (S, C, 0), (B, D, 1))
    with pytest.raises(ValueError):
        route(net, (C, E, 2), (B, D, 1))


def test_sdp_cgr_values(net, pr):
    assert pr(C, 0) == pytest.approx(0.4375, abs=1e-12)
    via_c = partial_route(route(net, (S, C, 0), (C, D, 1)), 0)
    via_ab = partial_route(route(net, (S, A, 0), (A, B, 0), (B, D, 1)), 0)
    via_b = partial_route(route(net, (S, B, 0), (B, D, 1)), 0)
    assert sdp_cgr(via_c, 0, pr) == pytest.approx(0.21875, abs=1e-9)
    assert sdp_cgr(via_ab, 0, pr) == pytest.approx(0.125, abs=1e-9)
    assert sdp_cgr(via_b, 0, pr) == pytest.approx(0.1, abs=1e-9)
    certain = net.with_pf(0.0)
    pr0 = PrTable.from_policy(solve(certain, None, D, 1), certain)
    r0 = partial_route(route(certain, (S, A, 0), (A, B, 0), (B, D, 1)), 0)
    assert sdp_cgr(r0, 0, pr0) == pr0(B, 0)


def test_ucop_picks_the_detour(net, pr):
    routes = compute_routes(net, S, 0, D)
    best = select_cgr_ucop(routes, 0, pr)
    assert best.nodes[:2] == (S, C)
    assert route_score(best, S, 0, pr) == pytest.approx(0.21875, abs=1e-9)
    assert select_cgr_ucop(routes[:1], 0, pr) == routes[0]
    zero = PrTable()
    assert select_cgr_ucop(routes, 0, zero) == select_cgr(routes)


def test_waiting_route_scores_the_next_slot(net, pr):
    late = route(net, (C, E, 2), (E, D, 2))
    assert route_score(late, C, 1, pr) == pr(C, 2)


def test_pr_table_target_is_one(net, pr):
    for ts in range(net.slot_count + 1):
        assert pr(D, ts) == 1.0
    assert PrTable()(S, 0) == 0.0


def test_prune(net):
    assert prune_failed_contacts(net, []) == net
    assert prune_failed_contacts(net, list(net.contacts)).contacts == ()
    g = prune_failed_contacts(net, [net.contact(C, D, 1)])
    nodes = {r.nodes for r in compute_routes(g, S, 0, D)}
    assert (S, C, E, D) in nodes and (S, C, D) not in nodes
    mask = np.zeros(len(net.contacts), dtype=bool)
    mask[net.contact_id(net.contact(C, D, 1))] = True
    assert prune_failed_contacts(net, mask) == g


def test_first_slot_path(net):
    r = route(net, (S, A, 0), (A, B, 0), (B, D, 1))
    assert cgr.first_slot_path(r, 0) == (S, A, B)
    assert cgr.first_slot_path(r, 1) is None
    assert cgr.first_slot_path(None, 0) is None


# -- properties -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=5, max_slots=4, max_contacts=12), st.data())
def test_routes_are_valid_chains(g, data):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1))
    ts = data.draw(st.integers(0, g.slot_count - 1))
    routes = RouteFinder(g, dst).routes(src, ts, 5)
    assert len(routes) <= 6
    assert len(set(routes)) == len(routes)
    for r in routes:
        assert r.source == src and r.target == dst and r.start_slot >= ts
        assert len(set(r.nodes)) == len(r.nodes)
        for a, b in zip(r.contacts, r.contacts[1:]):
            assert a.dst == b.src and a.slot <= b.slot
        assert r.delivery_slot < g.slot_count


def _reachable(g, src, dst, ts=0):
    reach = {src}
    for t in range(ts, g.slot_count):
        grew = True
        while grew:
            grew = False
            for c in g.slot_contacts(t):
                if c.src in reach and c.dst not in reach:
                    reach.add(c.dst)
                    grew = True
    return dst in reach


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=5, max_slots=4, max_contacts=12), st.data())
def test_route_found_iff_reachable(g, data):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1).filter(lambda d: d != src))
    assert bool(RouteFinder(g, dst).routes(src, 0, 1)) == _reachable(g, src, dst)


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=5, max_slots=4, max_contacts=12), st.data())
def test_failure_aware_delivers_iff_a_route_survives(g, data):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1).filter(lambda d: d != src))
    seed = data.draw(st.integers(0, 1000))
    real = realization_from_uniforms(g, contact_uniforms(len(g.contacts), seed))
    o = run_bundle(g, CgrFaAdapter(g), Bundle(0, src, dst), real)
    assert o.delivered == _reachable(prune_failed_contacts(g, real.failed), src, dst)


class _Scaled(PrTable):
    def __init__(self, base, factor):
        super().__init__()
        self.base, self.factor = base, factor

    def __call__(self, n, ts):
        return self.base(n, ts) * self.factor


@settings(max_examples=40, deadline=None)
@given(small_graphs(max_nodes=5, max_slots=4, max_contacts=12), st.data(),
       st.sampled_from([0.5, 2.0, 8.0]))
def test_ucop_ignores_uniform_rescaling(g, data, factor):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1).filter(lambda d: d != src))
    routes = RouteFinder(g, dst).routes(src, 0)
    if not routes:
        return
    pr = PrTable.from_policy(solve(g, None, dst, 1), g)
    assert select_cgr_ucop(routes, 0, pr) == select_cgr_ucop(routes, 0, _Scaled(pr, factor))


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=5, max_slots=4, max_contacts=12), st.data())
def test_route_scores_do_not_beat_the_optimum(g, data):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1).filter(lambda d: d != src))
    ts = data.draw(st.integers(0, g.slot_count - 1))
    pr = PrTable.from_policy(solve(g, None, dst, 1), g)
    for r in RouteFinder(g, dst).routes(src, ts):
        assert route_score(r, src, ts, pr) <= pr(src, ts) + 1e-9
