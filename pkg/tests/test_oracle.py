import pytest
from hypothesis import given, settings, strategies as st

from rucop.core import solve
from rucop.oracle import ExplicitMdp, build_explicit_mdp, oracle_sdp, oracle_value_iteration

from conftest import D, S
from strategies import small_graphs


def test_reroute_value(net):
    assert oracle_sdp(net, S, D, 1) == pytest.approx(0.21875, abs=1e-12)


def test_start_in_goal(net):
    mdp = build_explicit_mdp(net, D, D, 1)
    V, _ = oracle_value_iteration(mdp)
    assert V[mdp.initial] == 1.0


def test_rows_are_distributions(net):
    mdp = build_explicit_mdp(net, S, D, 2)
    for acts in mdp.transitions.values():
        for outs in acts:
            assert sum(p for p, _ in outs) == pytest.approx(1.0, abs=1e-9)


def test_malformed_rows_rejected():
    s0 = ((1, 0), 0)
    bad = ExplicitMdp(1, 1, s0, {s0: [[(0.3, ((0, 1), 1))]]})
    with pytest.raises(ValueError):
        oracle_value_iteration(bad)


def test_two_copy_reroute_matches_solver(net):
    assert oracle_sdp(net, S, D, 2) == pytest.approx(solve(net, S, D, 2).sdp_root, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=4, max_slots=3, max_contacts=8), st.integers(1, 2), st.data())
def test_solver_matches_oracle(g, copies, data):
    src = data.draw(st.integers(0, g.node_count - 1))
    dst = data.draw(st.integers(0, g.node_count - 1))
    assert solve(g, src, dst, copies).sdp_root == pytest.approx(oracle_sdp(g, src, dst, copies),
                                                                abs=1e-9)
