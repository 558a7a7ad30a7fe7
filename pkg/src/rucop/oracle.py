"""Forward-built explicit MDP used to check the solvers on small instances.

Everything here is derived directly from the contact graph: the MDP is
unrolled forward from an initial state, every combination of intra-slot
paths is an action, every subset of the used contacts is a failure outcome,
and the optimum comes from plain value iteration. Nothing is shared with the
backward construction in :mod:`rucop.core`.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

from .contact_model import UncertainContactGraph

State = tuple[tuple[int, ...], int]


@dataclass
class ExplicitMdp:
    """``transitions[state]`` lists, per action, its ``[(probability, next_state)]`` outcomes."""

    target: int
    horizon: int
    initial: State
    transitions: dict[State, list[list[tuple[float, State]]]] = field(default_factory=dict)

    @property
    def states(self) -> list[State]:
        seen = set(self.transitions)
        for acts in self.transitions.values():
            for outs in acts:
                seen.update(s for _, s in outs)
        return sorted(seen, key=lambda s: (s[1], s[0]))

    def is_goal(self, s: State) -> bool:
        return s[1] == self.horizon and s[0][self.target] > 0


def _paths_from(succ: dict[int, list[int]], u: int) -> list[tuple[int, ...]]:
    out = []
    stack = [(u,)]
    while stack:
        p = stack.pop()
        out.append(p)
        for w in succ.get(p[-1], ()):
            if w not in p:
                stack.append(p + (w,))
    return sorted(out)


def _node_choices(paths: list[tuple[int, ...]], k: int):
    """Ways of sending ``k`` copies along ``paths`` (multisets of size k)."""
    return list(itertools.combinations_with_replacement(paths, k))


def build_explicit_mdp(g: UncertainContactGraph, source: int, target: int, copies: int) -> ExplicitMdp:
    n, T = g.node_count, g.slot_count
    start = tuple(copies if i == source else 0 for i in range(n))
    mdp = ExplicitMdp(target, T, (start, 0))
    queue = deque([(start, 0)])
    seen = {(start, 0)}
    while queue:
        vec, t = queue.popleft()
        if t == T:
            continue
        contacts = {(c.src, c.dst): c.pf for c in g.slot_contacts(t)}
        succ: dict[int, list[int]] = {}
        for (a, b) in contacts:
            succ.setdefault(a, []).append(b)
        per_node = []
        for u, k in enumerate(vec):
            if k:
                per_node.append(_node_choices(_paths_from(succ, u), k))
        actions = []
        for combo in itertools.product(*per_node):
            paths = [p for group in combo for p in group]
            used = sorted({h for p in paths for h in zip(p, p[1:])})
            outcomes: dict[State, float] = {}
            for bits in itertools.product((False, True), repeat=len(used)):
                failed = {h for h, f in zip(used, bits) if f}
                prob = 1.0
                for h, f in zip(used, bits):
                    prob *= contacts[h] if f else 1.0 - contacts[h]
                if prob == 0.0:
                    continue
                nxt = [0] * n
                for p in paths:
                    stop = p[-1]
                    for a, b in zip(p, p[1:]):
                        if (a, b) in failed:
                            stop = a
                            break
                    nxt[stop] += 1
                s2 = (tuple(nxt), t + 1)
                outcomes[s2] = outcomes.get(s2, 0.0) + prob
            actions.append(sorted((p, s) for s, p in outcomes.items()))
            for s2 in outcomes:
                if s2 not in seen:
                    seen.add(s2)
                    queue.append(s2)
        mdp.transitions[(vec, t)] = actions
    return mdp


def oracle_value_iteration(mdp: ExplicitMdp, tol: float = 1e-12, max_iter: int = 100_000):
    """Maximal probability of ending in a goal state, by value iteration.

    States that cannot reach a goal with positive probability are fixed at 0
    beforehand so the iteration converges to the least fixed point. Returns
    ``(values, iterations)``. Raises ValueError if an action's outcome
    probabilities do not sum to 1.
    """
    for s, acts in mdp.transitions.items():
        for outs in acts:
            total = sum(p for p, _ in outs)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"outcomes of an action at {s} sum to {total}")
    states = mdp.states
    # backward reachability over positive-probability edges
    preds: dict[State, set[State]] = {s: set() for s in states}
    for s, acts in mdp.transitions.items():
        for outs in acts:
            for p, s2 in outs:
                if p > 0:
                    preds[s2].add(s)
    can = {s for s in states if mdp.is_goal(s)}
    frontier = list(can)
    while frontier:
        s = frontier.pop()
        for q in preds[s]:
            if q not in can:
                can.add(q)
                frontier.append(q)
    V = {s: (1.0 if mdp.is_goal(s) else 0.0) for s in states}
    for it in range(1, max_iter + 1):
        delta = 0.0
        for s, acts in mdp.transitions.items():
            if s not in can or not acts:
                continue
            best = max(sum(p * V[s2] for p, s2 in outs) for outs in acts)
            delta = max(delta, abs(best - V[s]))
            V[s] = best
        if delta < tol:
            return V, it
    return V, max_iter


def oracle_sdp(g: UncertainContactGraph, source: int, target: int, copies: int) -> float:
    mdp = build_explicit_mdp(g, source, target, copies)
    V, _ = oracle_value_iteration(mdp)
    return V[mdp.initial]
