"""Independent reference implementations used to check the package."""

from __future__ import annotations

import random
from collections import Counter

import networkx as nx

from idpass.isolation import IntraClassGraph


def naive_components(nodes, edges) -> set:
    """Grow each node's component by repeated edge sweeps until nothing changes."""
    label = {n: n for n in nodes}
    changed = True
    while changed:
        changed = False
        for e in edges:
            a, b = tuple(e)
            low = min(label[a], label[b])
            for x in (a, b):
                if label[x] != low:
                    label[x] = low
                    changed = True
    groups: dict = {}
    for n, lab in label.items():
        groups.setdefault(lab, set()).add(n)
    return {frozenset(g) for g in groups.values()}


def networkx_components(nodes, edges) -> set:
    g = nx.Graph()
    g.add_nodes_from(nodes)
    g.add_edges_from(tuple(e) for e in edges)
    return {frozenset(c) for c in nx.connected_components(g)}


def random_intraclass_graph(rng: random.Random, max_nodes: int = 200) -> IntraClassGraph:
    n = rng.randint(0, max_nodes)
    density = rng.uniform(0.0, 0.2)
    # mix method-like and field-like refs so ordering code sees both
    nodes = [f"K.m{i}/0" if i % 2 else f"K.f{i}" for i in range(n)]
    # sample an expected density*n*(n-1)/2 edges without touching every pair
    target = int(density * n * (n - 1) / 2)
    target = min(target, 4 * n)
    edges = set()
    for _ in range(target):
        a, b = rng.sample(nodes, 2)
        edges.add(frozenset((a, b)))
    return IntraClassGraph("K", frozenset(nodes), frozenset(edges), tuple(nodes))


def member_multiset(facts) -> Counter:
    """(method name, arity) and (field name, type) pairs across all classes."""
    out: Counter = Counter()
    for c in facts.classes:
        for m in c.methods:
            if not m.is_constructor:
                out[("method", m.name, m.arity)] += 1
        for f in c.fields:
            out[("field", f.name, str(f.type))] += 1
    return out
