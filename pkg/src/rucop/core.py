"""Backward construction and solution of the multi-copy routing MDP.

States are copy distributions over nodes at the start of a slot. Starting
from the successful distributions at the horizon, every slot is walked
backwards: for each explored state we enumerate the actions (sets of
copy-carrying rules over intra-slot paths) that produce it without failures,
derive the predecessor state, and score the action by summing, over every
subset of its contacts that could fail, the probability of that failure
pattern times the value of the resulting state.

Only zero transmission delay and one-slot failure detection are supported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from .contact_model import SlotDigraph, UncertainContactGraph, slot_digraph, validate

EPS_TIE = 1e-12
DEFAULT_STATE_CAP = 10_000_000

Path = tuple[int, ...]


class SolverError(ValueError):
    pass


class StateCapExceeded(RuntimeError):
    pass


class Rule(NamedTuple):
    """``k`` copies sent along ``path``; a one-node path keeps them stored."""

    k: int
    path: Path

    @property
    def is_storage(self) -> bool:
        return len(self.path) == 1

    @property
    def first(self) -> int:
        return self.path[0]

    @property
    def last(self) -> int:
        return self.path[-1]

    def hops(self) -> list[tuple[int, int]]:
        return list(zip(self.path, self.path[1:]))

    def sort_key(self):
        return (self.path, self.k)


class Action(tuple):
    """A set of rules, kept sorted by (path, copies) so equal sets compare equal."""

    def __new__(cls, rules: Iterable[Rule | tuple] = ()):
        rules = [r if isinstance(r, Rule) else Rule(*r) for r in rules]
        return super().__new__(cls, sorted(rules, key=Rule.sort_key))

    def contacts(self) -> list[tuple[int, int]]:
        """Distinct hops used by the action, in first-use order."""
        seen: dict[tuple[int, int], None] = {}
        for r in self:
            for h in r.hops():
                seen.setdefault(h, None)
        return list(seen)

    def copies_moved(self) -> int:
        return sum(r.k for r in self)

    def is_storage(self) -> bool:
        return all(r.is_storage for r in self)

    def key(self):
        return tuple(r.sort_key() for r in self)

    def __repr__(self):
        inner = ", ".join(f"({r.k}, {'->'.join(map(str, r.path))})" for r in self)
        return "{" + inner + "}"


@dataclass(frozen=True)
class NetworkState:
    copies: tuple[int, ...]
    slot: int

    @property
    def carriers(self) -> list[int]:
        return [n for n, k in enumerate(self.copies) if k > 0]

    @property
    def total(self) -> int:
        return sum(self.copies)

    @classmethod
    def single(cls, node_count: int, node: int, copies: int, slot: int) -> "NetworkState":
        v = [0] * node_count
        v[node] = copies
        return cls(tuple(v), slot)


# -- building blocks -------------------------------------------------------


def successful_states(g: UncertainContactGraph, target: int, num_copies: int) -> list[NetworkState]:
    if num_copies < 1:
        raise SolverError("num_copies must be >= 1")
    if not 0 <= target < g.node_count:
        raise SolverError(f"target {target} out of range")
    return [
        NetworkState(v, g.slot_count)
        for v in compositions(num_copies, g.node_count)
        if v[target] >= 1
    ]


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All vectors of ``parts`` non-negative ints summing to ``total`` (lexicographic)."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_paths(d: SlotDigraph, c: int) -> list[Path]:
    """The storage path ``(c,)`` plus every simple path of ``d`` ending at ``c``."""
    preds: dict[int, list[int]] = {}
    for out in d.adjacency:
        for e in out:
            preds.setdefault(e.dst, []).append(e.src)
    found: list[Path] = []

    def walk(suffix: Path):
        found.append(suffix)
        for p in preds.get(suffix[0], ()):
            if p not in suffix:
                walk((p,) + suffix)

    walk((c,))
    return sorted(found)


def compatible_rule_sets(c: int, cp_c: int, paths: Sequence[Path]) -> list[Action]:
    """All rule sets over distinct paths to ``c`` whose copy counts sum to ``cp_c``."""
    if cp_c < 1:
        raise SolverError("carrier must hold at least one copy")
    if any(p[-1] != c for p in paths):
        raise SolverError(f"every path must end at {c}")
    out = []
    for counts in _bounded_compositions(cp_c, len(paths)):
        out.append(Action(Rule(k, p) for k, p in zip(counts, paths) if k))
    return sorted(out, key=Action.key)


def _bounded_compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    yield from compositions(total, parts)


class _SlotPaths:
    """Per-slot cache of the rule sets that can deliver ``k`` copies to node ``c``."""

    def __init__(self, d: SlotDigraph):
        self.d = d
        self._paths: dict[int, list[Path]] = {}
        self._rule_sets: dict[tuple[int, int], list[Action]] = {}

    def paths(self, c: int) -> list[Path]:
        if c not in self._paths:
            self._paths[c] = enumerate_paths(self.d, c)
        return self._paths[c]

    def rule_sets(self, c: int, k: int) -> list[Action]:
        key = (c, k)
        if key not in self._rule_sets:
            self._rule_sets[key] = compatible_rule_sets(c, k, self.paths(c))
        return self._rule_sets[key]


def actions_to_state(s: NetworkState, g: UncertainContactGraph, _cache: _SlotPaths | None = None) -> list[Action]:
    """Every action played in slot ``s.slot - 1`` that yields ``s`` when nothing fails."""
    if s.slot < 1:
        raise SolverError("no actions lead into slot 0")
    sp = _cache or _SlotPaths(slot_digraph(g, s.slot - 1))
    per_carrier = [sp.rule_sets(c, s.copies[c]) for c in s.carriers]
    return [Action(itertools.chain.from_iterable(combo)) for combo in itertools.product(*per_carrier)]


def previous_state(s: NetworkState, a: Action) -> NetworkState:
    v = [0] * len(s.copies)
    for r in a:
        v[r.first] += r.k
    return NetworkState(tuple(v), s.slot - 1)


def state_after_failures(a: Action, s_prev: NetworkState, fs: Iterable[tuple[int, int]]) -> NetworkState:
    """Advance every rule up to its first failed hop; copies strand before that hop."""
    fs = set(fs)
    unknown = fs - set(a.contacts())
    if unknown:
        raise SolverError(f"failed contacts {sorted(unknown)} not used by the action")
    v = [0] * len(s_prev.copies)
    for r in a:
        stop = r.path[0]
        for u, w in r.hops():
            if (u, w) in fs:
                break
            stop = w
        v[stop] += r.k
    return NetworkState(tuple(v), s_prev.slot + 1)


def failure_sets(contacts: Sequence) -> Iterator[frozenset]:
    for m in range(len(contacts) + 1):
        for fs in itertools.combinations(contacts, m):
            yield frozenset(fs)


def sdp_of_action(
    a: Action,
    s_prev: NetworkState,
    t: int,
    pr: Mapping[NetworkState, float],
    g: UncertainContactGraph,
) -> float:
    """Success probability of playing ``a`` from ``s_prev`` in slot ``t``.

    States missing from ``pr`` contribute zero.
    """
    hops = a.contacts()
    pf = {h: g.contact(h[0], h[1], t).pf for h in hops}
    total = 0.0
    for fs in failure_sets(hops):
        nxt = state_after_failures(a, s_prev, fs)
        value = pr.get(nxt)
        if value is None:
            continue
        p = 1.0
        for h in hops:
            p *= pf[h] if h in fs else 1.0 - pf[h]
        total += p * value
    return total


# -- solving --------------------------------------------------------------


@dataclass
class Solution:
    """Explored states, their optimal success probability and the maximizing action."""

    graph: UncertainContactGraph
    target: int
    num_copies: int
    source: int | None
    pr_by_slot: list[dict[tuple[int, ...], float]]
    best_by_slot: list[dict[tuple[int, ...], Action]]
    transitions: int = 0
    stats: dict = field(default_factory=dict)

    def pr(self, s: NetworkState) -> float | None:
        return self.pr_by_slot[s.slot].get(s.copies)

    def value(self, s: NetworkState) -> float:
        """``pr`` with unexplored states read as 0."""
        return self.pr_by_slot[s.slot].get(s.copies, 0.0)

    def is_explored(self, s: NetworkState) -> bool:
        return s.copies in self.pr_by_slot[s.slot]

    @property
    def explored(self) -> set[NetworkState]:
        return {NetworkState(v, t) for t, d in enumerate(self.pr_by_slot) for v in d}

    @property
    def state_count(self) -> int:
        return sum(len(d) for d in self.pr_by_slot)

    def initial_state(self, source: int) -> NetworkState:
        return NetworkState.single(self.graph.node_count, source, self.num_copies, 0)

    def sdp_from(self, source: int, slot: int = 0) -> float:
        """Optimal success probability when ``source`` holds every copy at ``slot``."""
        return self.value(NetworkState.single(self.graph.node_count, source, self.num_copies, slot))

    @property
    def sdp_root(self) -> float:
        if self.source is None:
            raise SolverError("solution was built without a source; use sdp_from()")
        return self.sdp_from(self.source)

    def best_action(self, s: NetworkState) -> Action | None:
        if s.slot >= len(self.best_by_slot):
            return None
        return self.best_by_slot[s.slot].get(s.copies)

    def pr_mapping(self) -> dict[NetworkState, float]:
        return {NetworkState(v, t): p for t, d in enumerate(self.pr_by_slot) for v, p in d.items()}


def best_action_of(sol: Solution, s: NetworkState) -> Action:
    if not sol.is_explored(s):
        raise SolverError(f"state {s} was not explored")
    a = sol.best_action(s)
    if a is None:
        raise SolverError(f"state {s} is final; it has no action")
    return a


def check_solvable(g: UncertainContactGraph) -> None:
    problems = validate(g)
    if problems:
        raise SolverError("graph rejected: " + "; ".join(problems))


def solve(
    g: UncertainContactGraph,
    source: int | None,
    target: int,
    num_copies: int,
    state_cap: int = DEFAULT_STATE_CAP,
) -> Solution:
    """Build the MDP backwards from the horizon and solve it by the Bellman max.

    The result serves every source at once (only the initial state depends
    on it); ``source`` merely selects what :attr:`Solution.sdp_root` reports.
    """
    check_solvable(g)
    if source is not None and not 0 <= source < g.node_count:
        raise SolverError(f"source {source} out of range")
    finals = successful_states(g, target, num_copies)
    T = g.slot_count
    pr_by_slot: list[dict] = [dict() for _ in range(T + 1)]
    best_by_slot: list[dict] = [dict() for _ in range(T)]
    pr_by_slot[T] = {s.copies: 1.0 for s in finals}
    transitions = 0
    explored = len(finals)
    for t in range(T - 1, -1, -1):
        sp = _SlotPaths(slot_digraph(g, t))
        pf = {(c.src, c.dst): c.pf for c in g.slot_contacts(t)}
        nxt = pr_by_slot[t + 1]
        prs, best, keys = pr_by_slot[t], best_by_slot[t], {}
        for copies in sorted(nxt):
            s = NetworkState(copies, t + 1)
            for a in actions_to_state(s, g, sp):
                prev = previous_state(s, a).copies
                p = _sdp_fast(a, prev, pf, nxt)
                transitions += 1
                old = prs.get(prev)
                if old is None:
                    explored += 1
                    if explored > state_cap:
                        raise StateCapExceeded(f"explored more than {state_cap} states")
                if old is None or p > old + EPS_TIE or (p >= old - EPS_TIE and a.key() < keys[prev]):
                    prs[prev], best[prev], keys[prev] = p, a, a.key()
    return Solution(g, target, num_copies, source, pr_by_slot, best_by_slot, transitions,
                    {"states": explored, "transitions": transitions})


def _sdp_fast(a: Action, prev: tuple[int, ...], pf: dict, nxt: dict) -> float:
    """Bitmask version of :func:`sdp_of_action` used inside :func:`solve`."""
    hops = a.contacts()
    bit = {h: i for i, h in enumerate(hops)}
    base = [0] * len(prev)
    moving = []
    for r in a:
        if r.is_storage:
            base[r.first] += r.k
        else:
            moving.append((r.k, r.path, [bit[h] for h in r.hops()]))
    probs = [pf[h] for h in hops]
    m = len(hops)
    total = 0.0
    for mask in range(1 << m):
        v = base[:]
        for k, path, bits in moving:
            j = 0
            for b in bits:
                if mask >> b & 1:
                    break
                j += 1
            v[path[j]] += k
        value = nxt.get(tuple(v))
        if value is None or value == 0.0:
            continue
        p = 1.0
        for i in range(m):
            p *= probs[i] if mask >> i & 1 else 1.0 - probs[i]
        total += p * value
    return total
