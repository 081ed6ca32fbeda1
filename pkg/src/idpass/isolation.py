"""Function isolation: relocate disconnected member subgraphs across clusters.

For every class we build an undirected graph over its methods and fields
(intra-class calls and field accesses only), split it into connected
components, and move a component to another cluster when that cluster is the
only one touching it from outside.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from .facts import (
    AccessEdge,
    CallEdge,
    ClassDecl,
    CodeFacts,
    build_facts,
    cross_cluster_edges,
    field_ref,
    method_ref,
)

FIXPOINT = "fixpoint"


class UnknownClass(KeyError):
    pass


class ConflictingDecisions(ValueError):
    pass


class Policy(str, Enum):
    PAPER_SIMPLE = "paper-simple"
    NET_REDUCTION = "net-reduction"


class KeepReason(str, Enum):
    MULTI_CLUSTER_ACCESS = "MultiClusterAccess"
    HOME_CLUSTER_ACCESS = "HomeClusterAccess"
    NO_EXTERNAL_ACCESS = "NoExternalAccess"
    NET_INCREASE = "NetIncrease"


@dataclass(frozen=True)
class IntraClassGraph:
    class_name: str
    nodes: frozenset
    edges: frozenset  # of frozenset({a, b})
    order: tuple = ()  # member declaration order, methods then fields

    def rank(self) -> dict[str, int]:
        rank = {n: i for i, n in enumerate(self.order)}
        offset = len(rank)
        for i, n in enumerate(sorted(self.nodes - rank.keys())):
            rank[n] = offset + i
        return rank

    def adjacency(self) -> dict[str, set]:
        adj: dict[str, set] = {n: set() for n in self.nodes}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass(frozen=True)
class Subgraph:
    class_name: str
    ordinal: int
    nodes: frozenset

    @property
    def id(self) -> tuple[str, int]:
        return (self.class_name, self.ordinal)

    def methods(self) -> list[str]:
        return sorted(n for n in self.nodes if "/" in n)

    def fields(self) -> list[str]:
        return sorted(n for n in self.nodes if "/" not in n)


@dataclass(frozen=True)
class RelocationDecision:
    subgraph: Subgraph
    target_cluster: Optional[str]  # set iff the verdict is Relocate
    keep_reason: Optional[KeepReason]
    accessing_clusters: frozenset
    new_class_name: Optional[str] = None

    @property
    def relocate(self) -> bool:
        return self.target_cluster is not None

    def verdict(self) -> str:
        if self.relocate:
            return f"Relocate({self.target_cluster})"
        return f"Keep({self.keep_reason.value})"

    def to_json(self) -> dict:
        return {
            "class": self.subgraph.class_name,
            "ordinal": self.subgraph.ordinal,
            "nodes": sorted(self.subgraph.nodes),
            "verdict": "relocate" if self.relocate else "keep",
            "target_cluster": self.target_cluster,
            "reason": None if self.keep_reason is None else self.keep_reason.value,
            "accessing_clusters": sorted(self.accessing_clusters),
            "new_class_name": self.new_class_name,
        }


@dataclass
class IsolationReport:
    subgraphs_per_class: dict = field(default_factory=dict)
    total_subgraphs: int = 0
    relocated: int = 0
    cross_edges_before: int = 0
    cross_edges_after: int = 0
    iterations: int = 0
    rounds: list = field(default_factory=list)
    decisions: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "subgraphs_per_class": dict(sorted(self.subgraphs_per_class.items())),
            "total_subgraphs": self.total_subgraphs,
            "relocated": self.relocated,
            "cross_edges_before": self.cross_edges_before,
            "cross_edges_after": self.cross_edges_after,
            "iterations": self.iterations,
            "rounds": self.rounds,
            "decisions": self.decisions,
        }

    def csv_rows(self) -> list[dict]:
        relocated_by_class: dict[str, int] = {}
        for d in self.decisions:
            if d["verdict"] == "relocate":
                relocated_by_class[d["class"]] = relocated_by_class.get(d["class"], 0) + 1
        return [
            {"class": name, "subgraphs": n, "relocated": relocated_by_class.get(name, 0)}
            for name, n in sorted(self.subgraphs_per_class.items())
        ]


# ---------------------------------------------------------------------------


def _members(cls: ClassDecl) -> list[str]:
    return [method_ref(cls.name, m.name, m.arity) for m in cls.methods] + [
        field_ref(cls.name, f.name) for f in cls.fields
    ]


def build_intraclass_graph(facts: CodeFacts, class_name: str) -> IntraClassGraph:
    if class_name not in facts.class_map:
        raise UnknownClass(class_name)
    members = _members(facts.class_map[class_name])
    nodes = frozenset(members)
    edges = set()
    for e in facts.edges():
        a, b = e.source, e.target
        if a != b and a in nodes and b in nodes:
            edges.add(frozenset((a, b)))
    return IntraClassGraph(class_name, nodes, frozenset(edges), tuple(members))


def disconnected_subgraphs(graph: IntraClassGraph) -> list[Subgraph]:
    adj = graph.adjacency()
    seen: set = set()
    comps = []
    for start in sorted(graph.nodes):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    comp.add(nxt)
                    stack.append(nxt)
        comps.append(frozenset(comp))
    # ordinals follow the earliest-declared member of each component
    rank = graph.rank()
    comps.sort(key=lambda c: min(rank[n] for n in c))
    return [Subgraph(graph.class_name, i + 1, c) for i, c in enumerate(comps)]


def class_subgraphs(facts: CodeFacts, class_name: str) -> list[Subgraph]:
    return disconnected_subgraphs(build_intraclass_graph(facts, class_name))


def accessing_clusters(facts: CodeFacts, subgraph: Subgraph) -> frozenset:
    out = set()
    for e in facts.edges():
        if e.target in subgraph.nodes and e.source not in subgraph.nodes:
            out.add(facts.cluster_of(e.source))
    return frozenset(out)


def _cross_count(facts: CodeFacts, nodes, moved_to: Optional[str] = None) -> int:
    """Cross-cluster edges touching ``nodes``, optionally as if they lived in ``moved_to``."""
    def cluster(ref: str) -> str:
        if moved_to is not None and ref in nodes:
            return moved_to
        return facts.cluster_of(ref)

    n = 0
    for e in facts.edges():
        if e.source in nodes or e.target in nodes:
            if cluster(e.source) != cluster(e.target):
                n += 1
    return n


def _has_constructor(facts: CodeFacts, subgraph: Subgraph) -> bool:
    return any(facts.method_map[m].is_constructor for m in subgraph.methods())


def _decide(facts: CodeFacts, sg: Subgraph, policy: Policy) -> RelocationDecision:
    home = facts.class_map[sg.class_name].cluster
    ac = accessing_clusters(facts, sg)
    foreign = ac - {home}

    def keep(reason):
        return RelocationDecision(sg, None, reason, ac)

    if not foreign:
        return keep(KeepReason.NO_EXTERNAL_ACCESS)
    if len(foreign) > 1:
        return keep(KeepReason.MULTI_CLUSTER_ACCESS)
    if home in ac or _has_constructor(facts, sg):
        return keep(KeepReason.HOME_CLUSTER_ACCESS)
    (target,) = foreign
    if policy is Policy.NET_REDUCTION:
        if _cross_count(facts, sg.nodes, target) >= _cross_count(facts, sg.nodes):
            return keep(KeepReason.NET_INCREASE)
    return RelocationDecision(sg, target, None, ac)


def _unique_name(base: str, taken: set) -> str:
    name = base
    while name in taken:
        name += "_x"
    return name


def relocation_candidates(facts: CodeFacts, policy: Union[Policy, str] = Policy.PAPER_SIMPLE) -> list[RelocationDecision]:
    policy = Policy(policy)
    taken = set(facts.class_map)
    out = []
    for cls in facts.classes:
        for sg in class_subgraphs(facts, cls.name):
            d = _decide(facts, sg, policy)
            if d.relocate:
                name = _unique_name(f"{cls.name}_Iso{sg.ordinal}", taken)
                taken.add(name)
                d = replace(d, new_class_name=name)
            out.append(d)
    return out


def apply_relocations(facts: CodeFacts, decisions) -> CodeFacts:
    moves = [d for d in decisions if d.relocate]
    if not moves:
        return facts
    rename: dict[str, str] = {}
    taken = set(facts.class_map)
    new_classes: dict[str, ClassDecl] = {}
    stripped: dict[str, set] = {}
    for d in moves:
        sg = d.subgraph
        if sg.class_name not in facts.class_map:
            raise ConflictingDecisions(f"decision refers to unknown class {sg.class_name!r}")
        members = set(_members(facts.class_map[sg.class_name]))
        if not sg.nodes <= members:
            raise ConflictingDecisions(f"subgraph {sg.id} does not match class members")
        clash = sg.nodes & rename.keys()
        if clash:
            raise ConflictingDecisions(f"{sorted(clash)[0]} relocated twice")
        if _has_constructor(facts, sg):
            raise ConflictingDecisions(f"subgraph {sg.id} contains a constructor")
        name = d.new_class_name or f"{sg.class_name}_Iso{sg.ordinal}"
        name = _unique_name(name, taken) if name in taken else name
        taken.add(name)
        orig = facts.class_map[sg.class_name]
        moved_methods = tuple(m for m in orig.methods if method_ref(orig.name, m.name, m.arity) in sg.nodes)
        moved_fields = tuple(f for f in orig.fields if field_ref(orig.name, f.name) in sg.nodes)
        new_classes[name] = ClassDecl(name, d.target_cluster, moved_fields, moved_methods)
        stripped.setdefault(orig.name, set()).update(sg.nodes)
        for node in sg.nodes:
            rename[node] = name + node[len(orig.name):]

    classes = []
    for c in facts.classes:
        gone = stripped.get(c.name)
        if gone:
            c = replace(
                c,
                methods=tuple(m for m in c.methods if method_ref(c.name, m.name, m.arity) not in gone),
                fields=tuple(f for f in c.fields if field_ref(c.name, f.name) not in gone),
            )
        classes.append(c)
    classes.extend(new_classes.values())
    calls = [CallEdge(rename.get(e.caller, e.caller), rename.get(e.callee, e.callee), e.count) for e in facts.calls]
    accesses = [
        AccessEdge(rename.get(e.accessor, e.accessor), rename.get(e.field, e.field), e.mode, e.count)
        for e in facts.accesses
    ]
    return build_facts(classes, calls, accesses, facts.clusters)


def isolate(facts: CodeFacts, iterations: Union[int, str] = 1,
            policy: Union[Policy, str] = Policy.PAPER_SIMPLE) -> tuple[CodeFacts, IsolationReport]:
    policy = Policy(policy)
    if iterations == FIXPOINT:
        # every relocation removes a foreign-accessed subgraph; bound defensively
        budget = sum(len(c.methods) + len(c.fields) for c in facts.classes) + 1
    else:
        budget = int(iterations)
        if budget < 1:
            raise ValueError("iterations must be positive or 'fixpoint'")

    report = IsolationReport()
    report.cross_edges_before = len(cross_cluster_edges(facts))
    for cls in facts.classes:
        report.subgraphs_per_class[cls.name] = len(class_subgraphs(facts, cls.name))
    report.total_subgraphs = sum(report.subgraphs_per_class.values())

    current = facts
    for round_no in itertools.count(1):
        if round_no > budget:
            break
        decisions = relocation_candidates(current, policy)
        moves = [d for d in decisions if d.relocate]
        if policy is Policy.NET_REDUCTION:
            moves = _greedy_net(current, moves)
        if not moves:
            break
        before = len(cross_cluster_edges(current))
        current = apply_relocations(current, moves)
        report.iterations = round_no
        report.relocated += len(moves)
        report.decisions.extend(d.to_json() for d in moves)
        report.rounds.append({
            "iteration": round_no,
            "relocated": len(moves),
            "cross_edges_before": before,
            "cross_edges_after": len(cross_cluster_edges(current)),
        })
    report.cross_edges_after = len(cross_cluster_edges(current))
    return current, report


def _greedy_net(facts: CodeFacts, moves: list) -> list:
    """Keep only moves that still reduce cross edges given the ones accepted before."""
    accepted = []
    placed: dict[str, str] = {}

    def cluster(ref: str) -> str:
        return placed.get(ref) or facts.cluster_of(ref)

    for d in moves:
        nodes = d.subgraph.nodes
        before = after = 0
        for e in facts.edges():
            if e.source in nodes or e.target in nodes:
                src, dst = cluster(e.source), cluster(e.target)
                before += src != dst
                src2 = d.target_cluster if e.source in nodes else src
                dst2 = d.target_cluster if e.target in nodes else dst
                after += src2 != dst2
        if after < before:
            accepted.append(d)
            for n in nodes:
                placed[n] = d.target_cluster
    return accepted


__all__ = [
    "FIXPOINT",
    "ConflictingDecisions",
    "IntraClassGraph",
    "IsolationReport",
    "KeepReason",
    "Policy",
    "RelocationDecision",
    "Subgraph",
    "UnknownClass",
    "accessing_clusters",
    "apply_relocations",
    "build_intraclass_graph",
    "class_subgraphs",
    "disconnected_subgraphs",
    "isolate",
    "relocation_candidates",
]
