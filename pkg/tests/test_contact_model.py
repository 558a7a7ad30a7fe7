import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rucop.contact_model import (
    Contact, PlanError, UncertainContactGraph, generate_random_network, parse_contact_plan,
    serialize_contact_plan, slot_digraph, validate,
)

from conftest import B, C, D

FIG_PLAN = """\
nodes 6
slots 4
alias S 0
alias A 1
alias B 2
alias C 3
alias D 4
alias E 5
contact S A 0 0.5
contact A B 0 0.5
contact S B 0 0.80
contact S C 0 0.5
contact C D 1 0.75
contact B D 1 0.5
contact C E 2 0.5
contact E D 2 0.5
"""


def test_parse_reroute_plan(net):
    g = parse_contact_plan(FIG_PLAN)
    assert len(g.contacts) == 8
    assert g == net
    assert g.node_id("E") == 5 and g.node_name(3) == "C"


def test_empty_plan():
    g = parse_contact_plan("nodes 1\nslots 1\n")
    assert g.contacts == ()


@pytest.mark.parametrize("text, fragment", [
    ("nodes 2\nslots 1\ncontact 0 0 0 0.5\n", "self-loop"),
    ("nodes 2\nslots 1\ncontact 0 1 0 0.5\ncontact 0 1 0 0.2\n", "duplicate"),
    ("nodes 2\nslots 1\ncontact 0 5 0 0.5\n", "out of range"),
    ("nodes 2\nslots 1\ncontact 0 1 3 0.5\n", "slot out of range"),
    ("nodes 2\nslots 1\ncontact 0 1 0 1.5\n", "outside"),
    ("nodes 2\nslots 1\ncontact 0 1 zero 0.5\n", "integer"),
    ("slots 1\n", "nodes"),
    ("nodes 2\nslots 1\nbogus 1\n", "unknown keyword"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(PlanError) as e:
        parse_contact_plan(text)
    assert fragment in str(e.value)
    if "contact" in text.splitlines()[-1] or "bogus" in text:
        assert e.value.line == len(text.splitlines())


def test_comments_and_optional_delays():
    g = parse_contact_plan("# made by hand\nnodes 3\nslots 2\ncontact 0 1 1 0.25 0 2  # slow ack\n")
    c = g.contacts[0]
    assert (c.varsigma, c.fdd) == (0, 2)
    assert g.comments == ("made by hand",)
    assert any("f_dd unsupported" in m for m in validate(g))


def test_slot_digraph_examples(net):
    d1 = slot_digraph(net, 1)
    assert {(c.src, c.dst, c.pf) for c in d1.contacts} == {(C, D, 0.75), (B, D, 0.5)}
    assert all(not out for out in slot_digraph(net, 3).adjacency)
    with pytest.raises(IndexError):
        slot_digraph(net, net.slot_count)


def test_validate_examples(net):
    assert validate(net) == []
    g = UncertainContactGraph(2, 1, (Contact(0, 0, 1, 1.0),))
    assert validate(g) == []


def test_generator_small_cases():
    assert generate_random_network(2, 1, 0.0, 0.4, seed=3).contacts == ()
    g = generate_random_network(2, 1, 1.0, 0.3, seed=3)
    assert {c.key for c in g.contacts} == {(0, 1, 0), (1, 0, 0)}
    assert all(c.pf == 0.3 for c in g.contacts)


def test_generator_is_pure_and_records_seed():
    a = generate_random_network(8, 10, 0.2, 0.5, seed=11)
    b = generate_random_network(8, 10, 0.2, 0.5, seed=11)
    assert a == b
    assert "seed 11" in a.comments[0] and "PCG64" in a.comments[0]


def test_generator_mean_contact_count():
    counts = [len(generate_random_network(8, 10, 0.2, 0.5, seed=s).contacts) for s in range(1000)]
    sigma = np.sqrt(560 * 0.2 * 0.8) / np.sqrt(len(counts))
    assert abs(np.mean(counts) - 112) < 3 * sigma


@st.composite
def graphs(draw):
    n = draw(st.integers(2, 5))
    T = draw(st.integers(1, 4))
    keys = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1),
                                  st.integers(0, T - 1)).filter(lambda k: k[0] != k[1]),
                        max_size=12))
    pfs = draw(st.lists(st.floats(0, 1, allow_nan=False), min_size=len(keys),
                        max_size=len(keys)))
    return UncertainContactGraph(n, T, tuple(Contact(t, s, d, p)
                                             for (s, d, t), p in zip(sorted(keys), pfs)))


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_round_trip(g):
    text = serialize_contact_plan(g)
    g2 = parse_contact_plan(text)
    assert g2 == g
    assert serialize_contact_plan(g2) == text


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_slot_views_partition_contacts(g):
    pieces = [c for t in range(g.slot_count) for c in slot_digraph(g, t).contacts]
    assert sorted(pieces) == list(g.contacts)
    assert len(set(c.key for c in pieces)) == len(pieces)
