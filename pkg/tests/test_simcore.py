from __future__ import annotations

import json
import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st
from networkx.algorithms.isomorphism import DiGraphMatcher

from idpass import data_path
from idpass.facts import SchemaError, parse_facts
from idpass.randomgen import random_case
from idpass.simcore import (
    MONOLITH,
    Alias,
    FinalState,
    Heap,
    HeapObject,
    New,
    Ref,
    ScenarioScript,
    SetField,
    SetRef,
    default_construct,
    heap_fingerprint,
    load_scenario,
    parse_scenario,
    run_monolith,
    scenario_from_json,
    scenario_to_json,
)

from conftest import fixture_facts, loss_case

NODE_FACTS = parse_facts(json.dumps({
    "clusters": ["c1"],
    "classes": [
        {"name": "Node", "cluster": "c1", "fields": [
            {"name": "a", "type": {"kind": "declared", "class": "Node"}},
            {"name": "b", "type": {"kind": "declared", "class": "Node"}},
            {"name": "v", "type": {"kind": "primitive"}},
        ]},
        {"name": "Solo", "cluster": "c1", "singleton": True, "fields": [{"name": "v", "type": {"kind": "primitive"}}]},
    ],
}))


def test_alias_scenario_parses_to_six_steps():
    _, scenario = loss_case("loss-alias")
    assert len(scenario) == 6


def test_empty_scenario():
    assert len(parse_scenario("[]")) == 0


def test_undeclared_field_rejected():
    text = json.dumps([{"op": "new", "var": "n", "class": "Node"}, {"op": "set", "path": "n.nope", "value": 1}])
    with pytest.raises(SchemaError):
        parse_scenario(text, NODE_FACTS)


def test_scenario_json_round_trip():
    _, scenario = loss_case("loss-alias")
    assert scenario_from_json(scenario_to_json(scenario)) == scenario


def test_default_construct_with_model():
    facts = fixture_facts("loss-constructor.facts.json")
    heap, counters = Heap(), {}
    oid = default_construct(facts, "Records", heap, counters)
    assert heap.get(oid).fields["recordsCount"] == 100
    assert counters["dbReads"] == 1


def test_default_construct_plain():
    heap, counters = Heap(), {}
    oid = default_construct(NODE_FACTS, "Node", heap, counters)
    assert set(heap.get(oid).fields.values()) == {None}


def test_singleton_constructed_once():
    state = run_monolith(NODE_FACTS, ScenarioScript((New("x", "Solo"), New("y", "Solo"))))
    assert state.roots["x"] == state.roots["y"]
    assert state.counters.get("instances:Solo") == 1


def test_monolith_alias_rename():
    facts, scenario = loss_case("loss-alias")
    state = run_monolith(facts, scenario)
    assert state.read_path("root.left.name") == state.read_path("root.right.name") == "abc"


def test_literal_graph_without_calls():
    steps = (New("p", "Node"), New("q", "Node"), SetRef("p.a", "q"), SetField("q.v", 7))
    state = run_monolith(NODE_FACTS, ScenarioScript(steps))
    assert state.read_path("p.a.v") == 7 and state.read_path("p.b") is None
    assert state.resident_objects() == 2


def test_monolith_sees_nested_rebinding():
    facts, scenario = loss_case("loss-stale-frame")
    state = run_monolith(facts, scenario)
    assert state.assertion_failures == []


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=5), st.integers(min_value=-3, max_value=3))
def test_monolith_aliasing_property(depth, value):
    steps = [New("b", "Node"), New("x", "Node"), SetRef("b.a", "x")]
    path = "b.a"
    for i in range(depth):
        steps += [New(f"n{i}", "Node"), SetRef(f"{path}.a", f"n{i}")]
        path += ".a"
    steps += [Alias("al", path), SetField("al.v", value)]
    state = run_monolith(NODE_FACTS, ScenarioScript(tuple(steps)))
    assert state.read_path(f"{path}.v") == value


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_singleton_counter_bounded(seed):
    facts, scenario = random_case(seed)
    state = run_monolith(facts, scenario)
    for key, n in state.counters.items():
        if key.startswith("instances:"):
            assert n in (0, 1)


# -- fingerprint oracle -------------------------------------------------------


def _state(objects: dict, roots: dict) -> FinalState:
    return FinalState(heaps={MONOLITH: objects}, static_store={MONOLITH: {}}, roots=roots)


def _random_heap(rng: random.Random):
    """Shape of a small heap: per object (class, a, b, v) plus root targets."""
    k = rng.randint(1, 12)
    objs = []
    for _ in range(k):
        a = rng.choice([None, rng.randrange(k)])
        b = rng.choice([None, rng.randrange(k)])
        objs.append([rng.choice(["Node", "Leaf"]), a, b, rng.randint(0, 2)])
    roots = {name: rng.choice([None, rng.randrange(k)]) for name in ("r0", "r1")}
    return objs, roots


def _materialize(shape, rng: random.Random) -> FinalState:
    objs, roots = shape
    oids = rng.sample(range(100, 200), len(objs))  # arbitrary numbering

    def ref(i):
        return None if i is None else Ref(oids[i])

    heap = {
        oids[i]: HeapObject(oids[i], cls, {"a": ref(a), "b": ref(b), "v": v})
        for i, (cls, a, b, v) in enumerate(objs)
    }
    return _state(heap, {k: ref(v) for k, v in roots.items()})


def _mutate(shape, rng: random.Random):
    objs, roots = [list(o) for o in shape[0]], dict(shape[1])
    i = rng.randrange(len(objs))
    slot = rng.randrange(4)
    if slot == 0:
        objs[i][0] = "Leaf" if objs[i][0] == "Node" else "Node"
    elif slot == 3:
        objs[i][3] = (objs[i][3] + 1) % 3
    else:
        objs[i][slot] = rng.choice([None, rng.randrange(len(objs))])
    if rng.random() < 0.3:
        roots["r1"] = rng.choice([None, rng.randrange(len(objs))])
    return objs, roots


def _reachable_digraph(state: FinalState) -> nx.DiGraph:
    heap = state.heaps[MONOLITH]
    g = nx.DiGraph()
    stack = []
    for name, v in state.roots.items():
        g.add_node(("root", name), label=("root", name))
        if v is not None:
            g.add_edge(("root", name), v.oid, label=frozenset({"root"}))
            stack.append(v.oid)
    seen = set()
    while stack:
        oid = stack.pop()
        if oid in seen:
            continue
        seen.add(oid)
        obj = heap[oid]
        g.add_node(oid, label=(obj.class_name, obj.fields["v"]))
        for f in ("a", "b"):
            t = obj.fields[f]
            if t is not None:
                labels = g.edges[oid, t.oid]["label"] if g.has_edge(oid, t.oid) else frozenset()
                g.add_edge(oid, t.oid, label=labels | {f})
                stack.append(t.oid)
    return g


def _isomorphic(s1: FinalState, s2: FinalState) -> bool:
    same = lambda x, y: x["label"] == y["label"]  # noqa: E731
    return DiGraphMatcher(_reachable_digraph(s1), _reachable_digraph(s2), node_match=same, edge_match=same).is_isomorphic()


def test_fingerprint_matches_isomorphism_oracle():
    rng = random.Random(5)
    equal = unequal = 0
    for _ in range(400):
        shape = _random_heap(rng)
        other = shape if rng.random() < 0.5 else _mutate(shape, rng)
        s1, s2 = _materialize(shape, rng), _materialize(other, rng)
        iso = _isomorphic(s1, s2)
        assert (heap_fingerprint(s1) == heap_fingerprint(s2)) == iso
        equal += iso
        unequal += not iso
    assert equal > 50 and unequal > 50


def test_oid_numbering_irrelevant():
    shape = ([["Node", 1, None, 0], ["Node", None, None, 4]], {"r0": 0, "r1": None})
    assert heap_fingerprint(_materialize(shape, random.Random(1))) == heap_fingerprint(_materialize(shape, random.Random(2)))


def test_alias_vs_copy_differ():
    shared = _state({1: HeapObject(1, "Node", {"a": Ref(2), "b": Ref(2), "v": 0}),
                     2: HeapObject(2, "Leaf", {"a": None, "b": None, "v": 1})}, {"r0": Ref(1)})
    copied = _state({1: HeapObject(1, "Node", {"a": Ref(2), "b": Ref(3), "v": 0}),
                     2: HeapObject(2, "Leaf", {"a": None, "b": None, "v": 1}),
                     3: HeapObject(3, "Leaf", {"a": None, "b": None, "v": 1})}, {"r0": Ref(1)})
    assert heap_fingerprint(shared) != heap_fingerprint(copied)


def test_statics_and_counters_enter_digest():
    base = _state({}, {"r0": None})
    with_static = _state({}, {"r0": None})
    with_static.static_view = {"C.s": 1}
    with_counter = _state({}, {"r0": None})
    with_counter.counters = {"dbReads": 1}
    digests = {heap_fingerprint(s) for s in (base, with_static, with_counter)}
    assert len(digests) == 3


def test_fingerprint_stable_value():
    facts = fixture_facts("loss-alias.facts.json")
    scenario = load_scenario(data_path("loss-alias.scenario.json"), facts)
    first = heap_fingerprint(run_monolith(facts, scenario))
    assert first == heap_fingerprint(run_monolith(facts, scenario))
    assert len(first) == 64 and int(first, 16) >= 0
