"""Contact-plan route search, CGR-style forwarding choices and the route SDP metric."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .contact_model import Contact, UncertainContactGraph
from .core import NetworkState

DEFAULT_ROUTE_CAP = 10
INF = math.inf


@dataclass(frozen=True)
class Route:
    """A temporally ordered chain of contacts from ``source`` to ``target``."""

    contacts: tuple[Contact, ...]
    ids: tuple[int, ...]

    @property
    def source(self) -> int:
        return self.contacts[0].src

    @property
    def target(self) -> int:
        return self.contacts[-1].dst

    @property
    def delivery_slot(self) -> int:
        return self.contacts[-1].slot

    @property
    def start_slot(self) -> int:
        return self.contacts[0].slot

    @property
    def hop_count(self) -> int:
        return len(self.contacts)

    @property
    def nodes(self) -> tuple[int, ...]:
        return (self.contacts[0].src,) + tuple(c.dst for c in self.contacts)

    def order_key(self):
        return (self.delivery_slot, self.hop_count, self.ids)

    def hop_key(self):
        return (self.hop_count, self.delivery_slot, self.ids)

    def __str__(self):
        return " ".join(str(c) for c in self.contacts)


@dataclass(frozen=True)
class PartialRoute:
    """Leading hops of a route that all fall in one slot."""

    contacts: tuple[Contact, ...]

    @property
    def slot(self) -> int:
        return self.contacts[0].slot

    @property
    def path(self) -> tuple[int, ...]:
        return (self.contacts[0].src,) + tuple(c.dst for c in self.contacts)

    def __len__(self):
        return len(self.contacts)

    def __getitem__(self, i) -> Contact:
        return self.contacts[i]


def make_route(g: UncertainContactGraph, contacts: Sequence[Contact]) -> Route:
    contacts = tuple(contacts)
    if not contacts:
        raise ValueError("a route needs at least one contact")
    for a, b in zip(contacts, contacts[1:]):
        if a.dst != b.src or b.slot < a.slot:
            raise ValueError(f"contacts {a} and {b} do not chain")
    return Route(contacts, tuple(g.contact_id(c) for c in contacts))


class _Bounds:
    """Earliest delivery slot and fewest hops to ``target`` from (node, slot), loops allowed."""

    def __init__(self, g: UncertainContactGraph, target: int):
        N, T = g.node_count, g.slot_count
        ea = np.full((T + 1, N), INF)
        hops = np.full((T + 1, N), INF)
        for t in range(T - 1, -1, -1):
            ea[t] = ea[t + 1]
            hops[t] = hops[t + 1]
            cs = g.slot_contacts(t)
            changed = True
            while changed:
                changed = False
                for c in cs:
                    if c.src == target:
                        continue
                    e = t if c.dst == target else ea[t, c.dst]
                    h = 1 if c.dst == target else 1 + hops[t, c.dst]
                    if e < ea[t, c.src]:
                        ea[t, c.src] = e
                        changed = True
                    if h < hops[t, c.src]:
                        hops[t, c.src] = h
                        changed = True
        self.ea = ea
        self.hops = hops


class RouteFinder:
    """Ranked route lists for one graph and target, with cached search bounds."""

    def __init__(self, g: UncertainContactGraph, target: int):
        self.g = g
        self.target = target
        self.bounds = _Bounds(g, target)
        self._out = [[[] for _ in range(g.node_count)] for _ in range(g.slot_count)]
        for c in g.contacts:
            self._out[c.slot][c.src].append(c)
        # successors of u from slot t onwards, in contact-id order
        self._later: dict[tuple[int, int], list[Contact]] = {}

    def _succ(self, u: int, t: int) -> list[Contact]:
        key = (u, t)
        got = self._later.get(key)
        if got is None:
            got = [c for s in range(t, self.g.slot_count) for c in self._out[s][u]]
            self._later[key] = got
        return got

    def _search(self, n: int, ts: int, K: int, by_hops: bool) -> list[Route]:
        """Best-first search returning the K smallest routes under the chosen order."""
        g, target, b = self.g, self.target, self.bounds
        if n == target or ts >= g.slot_count or b.ea[ts, n] == INF:
            return []
        heap = []
        tie = 0

        def prio(d, h, ids):
            return (h, d, ids) if by_hops else (d, h, ids)

        heap.append((prio(b.ea[ts, n], b.hops[ts, n], ()), tie, n, ts, 1 << n, ()))
        found: list[Route] = []
        while heap and len(found) < K:
            pr, _, u, t, seen, path = heapq.heappop(heap)
            if u == target:
                found.append(make_route(g, path))
                continue
            for c in self._succ(u, t):
                v = c.dst
                if seen >> v & 1:
                    continue
                ids = pr[2] + (g.contact_id(c),)
                tie += 1
                if v == target:
                    key = prio(c.slot, len(path) + 1, ids)
                else:
                    if b.ea[c.slot, v] == INF:
                        continue
                    key = prio(b.ea[c.slot, v], len(path) + 1 + b.hops[c.slot, v], ids)
                heapq.heappush(heap, (key, tie, v, c.slot, seen | (1 << v), path + (c,)))
        return found

    def routes(self, n: int, ts: int, K: int = DEFAULT_ROUTE_CAP) -> list[Route]:
        """Up to K routes in delivery order, plus the fewest-hop route if it was cut off."""
        best = self._search(n, ts, K, by_hops=False)
        if best:
            least = self._search(n, ts, 1, by_hops=True)[0]
            if least not in best:
                best.append(least)
        return best


def compute_routes(g: UncertainContactGraph, n: int, ts: int, target: int,
                   K: int = DEFAULT_ROUTE_CAP) -> list[Route]:
    if not 0 <= ts < g.slot_count:
        raise ValueError(f"slot {ts} out of range")
    return RouteFinder(g, target).routes(n, ts, K)


def select_cgr(routes: Sequence[Route]) -> Route:
    if not routes:
        raise ValueError("no route to choose from")
    return min(routes, key=Route.order_key)


def select_cgr_hop(routes: Sequence[Route]) -> Route:
    if not routes:
        raise ValueError("no route to choose from")
    return min(routes, key=Route.hop_key)


def select_cgr_2cp(routes: Sequence[Route]) -> tuple[Route, Route | None]:
    a, b = select_cgr(routes), select_cgr_hop(routes)
    return a, (None if a == b else b)


def partial_route(r: Route, ts: int) -> PartialRoute:
    if r.start_slot != ts:
        raise ValueError(f"route starts at slot {r.start_slot}, not {ts}")
    hops = []
    for c in r.contacts:
        if c.slot != ts:
            break
        hops.append(c)
    return PartialRoute(tuple(hops))


class PrTable:
    """Single-copy success probability of a node holding the bundle at a slot."""

    def __init__(self, values: dict[tuple[int, int], float] | None = None):
        self.values = dict(values or {})

    def __call__(self, n: int, ts: int) -> float:
        return self.values.get((n, ts), 0.0)

    @classmethod
    def from_policy(cls, policy, g: UncertainContactGraph) -> "PrTable":
        """Read ``Pr_n(ts)`` from any solved policy serving one-copy states."""
        vals = {}
        for ts in range(g.slot_count + 1):
            for n in range(g.node_count):
                s = NetworkState.single(g.node_count, n, 1, ts)
                if policy.is_explored(s):
                    vals[(n, ts)] = policy.value(s)
        return cls(vals)


def sdp_cgr(r: PartialRoute, ts: int, pr: PrTable) -> float:
    """Success probability of attempting ``r`` and continuing optimally afterwards."""
    total = 0.0
    alive = 1.0
    for e in r.contacts:
        total += alive * e.pf * pr(e.src, ts + e.fdd)
        alive *= 1.0 - e.pf
    last = r.contacts[-1]
    return total + alive * pr(last.dst, ts + last.varsigma)


def route_score(r: Route, n: int, ts: int, pr: PrTable) -> float:
    """``sdp_cgr`` of the route's first-slot hops; a route starting later means waiting."""
    if r.start_slot == ts:
        return sdp_cgr(partial_route(r, ts), ts, pr)
    return pr(n, ts + 1)


def select_cgr_ucop(routes: Sequence[Route], ts: int, pr: PrTable) -> Route:
    if not routes:
        raise ValueError("no route to choose from")
    best, best_score = None, -1.0
    for r in sorted(routes, key=Route.order_key):
        s = route_score(r, r.source, ts, pr)
        if s > best_score + 1e-12:
            best, best_score = r, s
    return best


def prune_failed_contacts(g: UncertainContactGraph, failed: Iterable[Contact] | np.ndarray):
    """``g`` without the contacts that fail; accepts contacts or a per-contact-id mask."""
    if isinstance(failed, np.ndarray):
        failed = [c for c, f in zip(g.contacts, failed) if f]
    return g.without(failed)


def first_slot_path(r: Route | None, ts: int) -> tuple[int, ...] | None:
    """Node path to transmit along at ``ts`` for route ``r``, or None to wait."""
    if r is None or r.start_slot != ts:
        return None
    return partial_route(r, ts).path
