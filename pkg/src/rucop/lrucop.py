"""Per-node routing tables for copy routing with local knowledge only.

A node knows how many copies it holds and what it did itself. The table of
node ``n`` maps ``(ts_safe, copies, ts_now)`` to the part of a globally
optimal action that ``n`` executes: ``ts_safe`` is the slot at which ``n``
last had no knowledge of other copies (it held everything it knows about),
and later entries refine the decision using what ``n`` itself sent since.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

from .contact_model import UncertainContactGraph
from .core import Action, NetworkState, Rule, SolverError, solve


class Policy(Protocol):
    def is_explored(self, s: NetworkState) -> bool: ...

    def best_action(self, s: NetworkState) -> Action | None: ...


Key = tuple[int, int, int]


@dataclass
class LTrTable:
    node: int
    target: int
    budget: int
    entries: dict[Key, Action] = field(default_factory=dict)

    def get(self, ts_safe: int, copies: int, ts_now: int) -> Action | None:
        return self.entries.get((ts_safe, copies, ts_now))

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "target": self.target,
            "N": self.budget,
            "entries": [
                {
                    "ts_safe": k[0],
                    "copies": k[1],
                    "ts_current": k[2],
                    "action": [[r.k, list(r.path)] for r in a],
                }
                for k, a in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LTrTable":
        t = cls(d["node"], d["target"], d["N"])
        for e in d["entries"]:
            t.entries[(e["ts_safe"], e["copies"], e["ts_current"])] = Action(
                Rule(k, tuple(p)) for k, p in e["action"]
            )
        return t


def safe_state(n: int, c: int, ts: int, node_count: int) -> NetworkState:
    if c < 1:
        raise SolverError("a safe state needs at least one copy")
    return NetworkState.single(node_count, n, c, ts)


def restrict(a: Action, n: int) -> Action:
    return Action(r for r in a if r.first == n)


def kept_copies(a: Action, n: int) -> int:
    return sum(r.k for r in a if r.is_storage and r.first == n)


def post_state(a: Action, n: int, ts: int, node_count: int,
               known: tuple[int, ...] | None = None) -> NetworkState:
    """What ``n`` believes after executing ``a`` at ``ts``: every send succeeded.

    ``known`` is the belief before the action; copies ``n`` handed out earlier
    stay where it sent them. Without it only the action's own copies appear.
    """
    v = [0] * node_count if known is None else list(known)
    v[n] = 0
    for r in a:
        if r.first != n:
            raise SolverError(f"rule {r} is not rooted at node {n}")
        v[r.last] += r.k
    return NetworkState(tuple(v), ts + 1)


def _policy_for(policies, copies: int) -> Policy:
    if isinstance(policies, Mapping):
        return policies[copies]
    return policies


def build_tables(
    g: UncertainContactGraph,
    target: int,
    budget: int,
    policies: Mapping[int, Policy] | Policy | None = None,
) -> dict[int, LTrTable]:
    """Fill one table per node from optimal policies for every budget ``1..budget``.

    ``policies`` maps a copy count to a policy over states with that many
    copies, or is one object serving every count; by default the reference
    solver is run once per count.
    """
    if budget < 1:
        raise SolverError("budget must be >= 1")
    if policies is None:
        policies = {c: solve(g, None, target, c) for c in range(1, budget + 1)}
    N, T = g.node_count, g.slot_count
    tables = {n: LTrTable(n, target, budget) for n in range(N)}
    for n in range(N):
        table = tables[n].entries
        for ts in range(T):
            for c in range(1, budget + 1):
                s = safe_state(n, c, ts, N)
                pol = _policy_for(policies, c)
                if not pol.is_explored(s):
                    continue
                a = restrict(pol.best_action(s), n)
                table[(ts, c, ts)] = a
                belief = s
                rc = kept_copies(a, n)
                while rc > 0:
                    belief = post_state(a, n, belief.slot, N, belief.copies)
                    if belief.slot >= T or belief.copies[target] > 0:
                        break
                    if belief.copies[n] == c:
                        # nothing handed out: the next slot's safe entry applies
                        break
                    pol = _policy_for(policies, c)
                    if not pol.is_explored(belief):
                        break
                    a = restrict(pol.best_action(belief), n)
                    table[(ts, rc, belief.slot)] = a
                    rc = kept_copies(a, n)
    return tables


def lookup(table: LTrTable, held: int, ts_safe: int, ts_now: int) -> tuple[Action, int]:
    """Action for ``held`` copies at ``ts_now`` and the safe slot to remember.

    Falls back to the safe entry of the current slot, then to keeping every
    copy.
    """
    if held < 1:
        raise SolverError("lookup needs at least one held copy")
    a = table.get(ts_safe, held, ts_now)
    if a is not None:
        return a, ts_safe
    a = table.get(ts_now, held, ts_now)
    if a is not None:
        return a, ts_now
    return Action([Rule(held, (table.node,))]), ts_now
