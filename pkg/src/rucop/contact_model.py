"""Uncertain time-varying graphs: contacts, slot views, plan files and random scenarios."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

GENERATOR_NAME = "numpy.PCG64"


class PlanError(ValueError):
    """Raised for malformed or inconsistent contact plans."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, order=True)
class Contact:
    """Directed contact ``src -> dst`` during one slot.

    ``pf`` is the probability that the contact does not materialize.
    ``varsigma`` is the transmission delay and ``fdd`` the failure detection
    delay, both in slots.
    """

    slot: int
    src: int
    dst: int
    pf: float = field(compare=False)
    varsigma: int = field(default=0, compare=False)
    fdd: int = field(default=1, compare=False)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.src, self.dst, self.slot)

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}@{self.slot}"


@dataclass(frozen=True)
class SlotDigraph:
    slot: int
    adjacency: tuple[tuple[Contact, ...], ...]

    def successors(self, node: int) -> tuple[Contact, ...]:
        return self.adjacency[node]

    def predecessors(self, node: int) -> list[int]:
        return [c.src for out in self.adjacency for c in out if c.dst == node]

    @property
    def contacts(self) -> list[Contact]:
        return [c for out in self.adjacency for c in out]


@dataclass(frozen=True)
class UncertainContactGraph:
    """Immutable uncertain contact plan over ``node_count`` nodes and ``slot_count`` slots.

    Contacts are kept in canonical order (slot, src, dst); the position of a
    contact in :attr:`contacts` is its contact id.
    """

    node_count: int
    slot_count: int
    contacts: tuple[Contact, ...] = ()
    aliases: tuple[tuple[str, int], ...] = ()
    comments: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(sorted(self.contacts)))
        object.__setattr__(self, "_index", {c.key: i for i, c in enumerate(self.contacts)})
        by_slot: list[list[Contact]] = [[] for _ in range(max(self.slot_count, 0))]
        for c in self.contacts:
            if 0 <= c.slot < self.slot_count:
                by_slot[c.slot].append(c)
        object.__setattr__(self, "_by_slot", tuple(tuple(cs) for cs in by_slot))

    def __eq__(self, other):
        if not isinstance(other, UncertainContactGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.slot_count == other.slot_count
            and self.aliases == other.aliases
            and [(c.key, c.pf, c.varsigma, c.fdd) for c in self.contacts]
            == [(c.key, c.pf, c.varsigma, c.fdd) for c in other.contacts]
        )

    def __hash__(self):
        return hash((self.node_count, self.slot_count, self.contacts))

    def contact(self, src: int, dst: int, slot: int) -> Contact | None:
        i = self._index.get((src, dst, slot))
        return None if i is None else self.contacts[i]

    def contact_id(self, c: Contact) -> int:
        return self._index[c.key]

    def slot_contacts(self, t: int) -> tuple[Contact, ...]:
        return self._by_slot[t]

    def node_id(self, name: str | int) -> int:
        if isinstance(name, int):
            return name
        for alias, nid in self.aliases:
            if alias == name:
                return nid
        try:
            return int(name)
        except ValueError:
            raise PlanError(f"unknown node {name!r}") from None

    def node_name(self, nid: int) -> str:
        for alias, i in self.aliases:
            if i == nid:
                return alias
        return str(nid)

    def with_pf(self, pf: float) -> "UncertainContactGraph":
        """Same topology with every contact carrying failure probability ``pf``."""
        return replace(self, contacts=tuple(replace(c, pf=pf) for c in self.contacts))

    def without(self, removed: Iterable[Contact]) -> "UncertainContactGraph":
        drop = {c.key for c in removed}
        return replace(self, contacts=tuple(c for c in self.contacts if c.key not in drop))

    def topology_hash(self) -> str:
        h = hashlib.sha256(serialize_contact_plan(self).encode())
        return h.hexdigest()[:16]


def slot_digraph(g: UncertainContactGraph, t: int) -> SlotDigraph:
    if not 0 <= t < g.slot_count:
        raise IndexError(f"slot {t} out of range [0, {g.slot_count})")
    adj: list[list[Contact]] = [[] for _ in range(g.node_count)]
    for c in g.slot_contacts(t):
        adj[c.src].append(c)
    return SlotDigraph(t, tuple(tuple(a) for a in adj))


def validate(g: UncertainContactGraph) -> list[str]:
    """Return every problem preventing ``g`` from being solved; empty if none."""
    report = []
    if g.node_count < 1:
        report.append("node_count must be positive")
    if g.slot_count < 1:
        report.append("slot_count must be positive")
    seen = set()
    for c in g.contacts:
        if not (0 <= c.src < g.node_count and 0 <= c.dst < g.node_count):
            report.append(f"contact {c}: node out of range")
        if not 0 <= c.slot < g.slot_count:
            report.append(f"contact {c}: slot out of range")
        if c.src == c.dst:
            report.append(f"contact {c}: self-loop")
        if c.key in seen:
            report.append(f"contact {c}: duplicate")
        seen.add(c.key)
        if not 0.0 <= c.pf <= 1.0:
            report.append(f"contact {c}: pf {c.pf} outside [0, 1]")
        if c.varsigma != 0:
            report.append(f"contact {c}: general varsigma unsupported by solver (got {c.varsigma})")
        if c.fdd != 1:
            report.append(f"contact {c}: general f_dd unsupported by solver (got {c.fdd})")
    return report


def _structural_errors(g: UncertainContactGraph) -> list[str]:
    return [m for m in validate(g) if "unsupported by solver" not in m]


# -- plan format -----------------------------------------------------------


def parse_contact_plan(text: str) -> UncertainContactGraph:
    """Parse the line-oriented plan format.

    ``nodes N`` and ``slots T`` come first, then optional ``alias name id``
    lines and ``contact from to slot pf [varsigma fdd]`` lines. ``#`` starts
    a comment. Node fields of contact lines may use aliases.
    """
    nodes = slots = None
    aliases: list[tuple[str, int]] = []
    comments: list[str] = []
    raw_contacts: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        if comment.strip() and not line.strip():
            comments.append(comment.strip())
        fields = line.split()
        if not fields:
            continue
        kw, args = fields[0], fields[1:]
        if kw == "nodes":
            if nodes is not None or len(args) != 1:
                raise PlanError("expected a single 'nodes <N>' line", lineno)
            nodes = _int(args[0], lineno)
            if nodes < 1:
                raise PlanError("node count must be positive", lineno)
        elif kw == "slots":
            if nodes is None or slots is not None or len(args) != 1:
                raise PlanError("'slots <T>' must follow 'nodes' exactly once", lineno)
            slots = _int(args[0], lineno)
            if slots < 1:
                raise PlanError("slot count must be positive", lineno)
        elif kw == "alias":
            if slots is None or len(args) != 2:
                raise PlanError("malformed alias line", lineno)
            nid = _int(args[1], lineno)
            if not 0 <= nid < nodes:
                raise PlanError(f"alias id {nid} out of range", lineno)
            if any(a == args[0] for a, _ in aliases):
                raise PlanError(f"duplicate alias {args[0]!r}", lineno)
            aliases.append((args[0], nid))
        elif kw == "contact":
            if slots is None:
                raise PlanError("contact before header", lineno)
            if len(args) not in (4, 6):
                raise PlanError("contact needs 4 or 6 fields", lineno)
            raw_contacts.append((lineno, args))
        else:
            raise PlanError(f"unknown keyword {kw!r}", lineno)
    if nodes is None or slots is None:
        raise PlanError("missing 'nodes' or 'slots' header")

    names = dict(aliases)
    contacts: list[Contact] = []
    seen: set[tuple[int, int, int]] = set()
    for lineno, args in raw_contacts:
        src, dst = (_node(a, names, lineno) for a in args[:2])
        slot = _int(args[2], lineno)
        try:
            pf = float(args[3])
        except ValueError:
            raise PlanError(f"bad probability {args[3]!r}", lineno) from None
        varsigma, fdd = (_int(a, lineno) for a in args[4:6]) if len(args) == 6 else (0, 1)
        if not (0 <= src < nodes and 0 <= dst < nodes):
            raise PlanError("node out of range", lineno)
        if not 0 <= slot < slots:
            raise PlanError("slot out of range", lineno)
        if src == dst:
            raise PlanError("self-loop contact", lineno)
        if not 0.0 <= pf <= 1.0:
            raise PlanError(f"pf {pf} outside [0, 1]", lineno)
        if varsigma < 0 or fdd < 1:
            raise PlanError("varsigma must be >= 0 and fdd >= 1", lineno)
        if (src, dst, slot) in seen:
            raise PlanError(f"duplicate contact {src} {dst} {slot}", lineno)
        seen.add((src, dst, slot))
        contacts.append(Contact(slot, src, dst, pf, varsigma, fdd))
    return UncertainContactGraph(nodes, slots, tuple(contacts), tuple(aliases), tuple(comments))


def serialize_contact_plan(g: UncertainContactGraph) -> str:
    lines = [f"# {c}" for c in g.comments]
    lines += [f"nodes {g.node_count}", f"slots {g.slot_count}"]
    lines += [f"alias {name} {nid}" for name, nid in g.aliases]
    for c in g.contacts:
        tail = f" {c.varsigma} {c.fdd}" if (c.varsigma, c.fdd) != (0, 1) else ""
        lines.append(f"contact {c.src} {c.dst} {c.slot} {c.pf!r}{tail}")
    return "\n".join(lines) + "\n"


def _int(s: str, lineno: int) -> int:
    try:
        return int(s)
    except ValueError:
        raise PlanError(f"expected integer, got {s!r}", lineno) from None


def _node(s: str, names: dict[str, int], lineno: int) -> int:
    if s in names:
        return names[s]
    return _int(s, lineno)


# -- scenarios -------------------------------------------------------------


def generate_random_network(
    nodes: int, slots: int, density: float, pf: float, seed: int
) -> UncertainContactGraph:
    """Every ordered pair gets a contact in every slot with probability ``density``.

    Draws come from PCG64 seeded with ``seed``, in slot-major, then
    (src, dst) order, so a given seed yields the same plan on any platform.
    """
    if nodes < 2:
        raise ValueError("need at least two nodes")
    if slots < 1:
        raise ValueError("need at least one slot")
    if not (0.0 <= density <= 1.0 and 0.0 <= pf <= 1.0):
        raise ValueError("density and pf must lie in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.random((slots, nodes, nodes))
    contacts = [
        Contact(t, i, j, pf)
        for t in range(slots)
        for i in range(nodes)
        for j in range(nodes)
        if i != j and draws[t, i, j] < density
    ]
    note = (
        f"generator {GENERATOR_NAME} seed {seed} nodes {nodes} slots {slots} "
        f"density {density!r} pf {pf!r}"
    )
    return UncertainContactGraph(nodes, slots, tuple(contacts), comments=(note,))


REROUTE_NAMES = ("S", "A", "B", "C", "D", "E")


def reroute_example(include_detour: bool = True) -> UncertainContactGraph:
    """Six-node, four-slot network where rerouting after a failure pays off.

    Source S=0, destination D=4. From S at slot 0 the single-copy optimum
    goes via C (0.21875); without the C->E->D detour it drops to 0.125.
    """
    S, A, B, C, D, E = range(6)
    contacts = [
        Contact(0, S, A, 0.5),
        Contact(0, A, B, 0.5),
        Contact(0, S, B, 0.8),
        Contact(0, S, C, 0.5),
        Contact(1, C, D, 0.75),
        Contact(1, B, D, 0.5),
    ]
    if include_detour:
        contacts += [Contact(2, C, E, 0.5), Contact(2, E, D, 0.5)]
    aliases = tuple((n, i) for i, n in enumerate(REROUTE_NAMES))
    return UncertainContactGraph(6, 4, tuple(contacts), aliases)
