from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from idpass.classify import (
    ApiKind,
    TransferCategory,
    api_surface,
    classification_report,
    classify_api,
    library_taint,
    referenced_taint,
    singleton_taint,
    static_taint,
)
from idpass.facts import TypeKind, TypeRef, declared, parse_facts
from idpass.protocols import compare_protocols, exercise_scenario, static_write_scenario
from idpass.randomgen import random_facts

from conftest import FACT_FIXTURES, fixture_facts

PRIM = TypeRef(TypeKind.PRIMITIVE)


def _facts(classes, calls=(), accesses=(), clusters=("c1", "c2")):
    return parse_facts(json.dumps({
        "clusters": list(clusters), "classes": classes, "calls": list(calls), "accesses": list(accesses),
    }))


def _field(name, kind="primitive", cls=None, static=False):
    t = {"kind": kind}
    if cls:
        t["class"] = cls
    return {"name": name, "type": t, "static": static}


def test_pbw_surface(pbw):
    apis = api_surface(pbw)
    assert [(a.kind, a.member_ref) for a in apis] == [
        (ApiKind.CONSTRUCTOR, "CatalogMgr.CatalogMgr/0"),
        (ApiKind.METHOD, "CatalogMgr.addItem/1"),
    ]
    assert all(a.client_clusters == {"c1"} and a.server_cluster == "c2" for a in apis)


def test_single_cluster_surface_empty():
    facts = _facts([
        {"name": "A", "cluster": "c1", "methods": [{"name": "m"}]},
        {"name": "B", "cluster": "c1", "methods": [{"name": "n"}]},
    ], calls=[{"from": "A.m/0", "to": "B.n/0"}], clusters=["c1"])
    assert api_surface(facts) == []


def test_field_set_descriptor():
    apis = api_surface(fixture_facts("accessor-heavy.json"))
    kinds = {a.api_id: a.kind for a in apis}
    assert kinds == {
        "FieldGet:Point.x": ApiKind.FIELD_GET,
        "FieldGet:Point.y": ApiKind.FIELD_GET,
        "FieldSet:Point.y": ApiKind.FIELD_SET,
    }


def test_static_taint_basics(pbw):
    assert not static_taint(pbw, PRIM)
    assert static_taint(pbw, declared("CatalogMgr"))


def test_static_taint_transitive():
    facts = _facts([
        {"name": "A", "cluster": "c1", "fields": [_field("b", "declared", "B")]},
        {"name": "B", "cluster": "c1", "fields": [_field("s", static=True)]},
    ])
    assert static_taint(facts, declared("A"))


def test_referenced_taint_cases():
    facts = fixture_facts("loss-stale-field.facts.json")
    assert referenced_taint(facts, declared("Account"))
    lonely = _facts([{"name": "L", "cluster": "c1", "fields": [_field("x")]}])
    assert not referenced_taint(lonely, declared("L"))
    # C points at B, which only sits inside A's graph
    nested = _facts([
        {"name": "A", "cluster": "c1", "fields": [_field("b", "declared", "B")]},
        {"name": "B", "cluster": "c1", "fields": [_field("x")]},
        {"name": "C", "cluster": "c2", "fields": [_field("bb", "declared", "B")]},
    ])
    assert referenced_taint(nested, declared("A"))
    alone = _facts([
        {"name": "A", "cluster": "c1", "fields": [_field("b", "declared", "B")]},
        {"name": "B", "cluster": "c1", "fields": [_field("x")]},
    ])
    assert not referenced_taint(alone, declared("A"))


def test_singleton_and_library_taint():
    facts = fixture_facts("mixed-classes.json")
    assert singleton_taint(facts, declared("Registry"))
    assert not singleton_taint(facts, declared("Item"))
    assert library_taint(facts, declared("FileHolder"))
    assert library_taint(facts, TypeRef(TypeKind.LIBRARY))
    assert not library_taint(facts, declared("Item"))


def test_add_item_is_static(pbw):
    api = next(a for a in api_surface(pbw) if a.kind is ApiKind.METHOD)
    cats, primary = classify_api(pbw, api)
    assert TransferCategory.STATIC in cats and primary is TransferCategory.STATIC


def test_primitive_api_passes():
    facts = fixture_facts("two-clients.json")
    [api] = api_surface(facts)
    assert classify_api(facts, api) == (frozenset({TransferCategory.PASS_JSON}), TransferCategory.PASS_JSON)


def test_resource_param_is_library():
    facts = fixture_facts("mixed-classes.json")
    api = next(a for a in api_surface(facts) if a.member_ref == "Store.save/1")
    assert TransferCategory.LIBRARY in classify_api(facts, api)[0]


def test_pbw_report(pbw):
    report = classification_report(pbw)
    assert report.total == 2 and report.counts["Static"] >= 1


def test_empty_report():
    report = classification_report(fixture_facts("pbw-mini.json"), apis=[])
    assert report.total == 0 and set(report.counts.values()) == {0}


# worked out by hand from the mixed fixture before running the classifier
MIXED_ORACLE = {
    "StaticBox.StaticBox/0": "Static",
    "StaticBox.bump/0": "Static",
    "Store.save/1": "Library",
    "Registry.Registry/0": "Singleton",
    "Registry.lookup/1": "Singleton",
    "Bank.deposit/1": "Referenced",
    "Catalog.price/1": "PassJson",
}


def test_mixed_fixture_oracle_table():
    report = classification_report(fixture_facts("mixed-classes.json"))
    assert {r["api"]: r["primary"] for r in report.rows} == MIXED_ORACLE
    expected = {c: list(MIXED_ORACLE.values()).count(c) for c in ("Static", "Library", "Singleton", "Referenced", "PassJson")}
    assert report.counts == expected


@pytest.mark.parametrize("name", FACT_FIXTURES)
def test_counts_sum_to_total(name):
    report = classification_report(fixture_facts(name))
    assert sum(report.counts.values()) == report.total


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_primary_is_first_of_set(seed):
    facts = random_facts(random.Random(seed))
    order = list(TransferCategory)
    for api in api_surface(facts):
        cats, primary = classify_api(facts, api)
        assert primary in cats
        assert primary == min(cats, key=order.index)


@pytest.mark.parametrize("name", FACT_FIXTURES)
def test_soundness_link(name):
    facts = fixture_facts(name)
    for api in api_surface(facts):
        _, primary = classify_api(facts, api)
        if primary is TransferCategory.PASS_JSON:
            report = compare_protocols(facts, exercise_scenario(facts, api))
            assert report.categories("json") == [], api.api_id
        elif primary is TransferCategory.STATIC:
            probe_facts, scenario = static_write_scenario(facts, api)
            report = compare_protocols(probe_facts, scenario)
            assert "StaticLoss" in report.categories("json"), api.api_id


def _two_service(methods_s2, extra_classes=()):
    return _facts([
        {"name": "Box", "cluster": "c1", "fields": [_field("v")], "methods": [{"name": "poke"}]},
        {"name": "Svc", "cluster": "c2", "methods": methods_s2},
        {"name": "Main", "cluster": "c1", "methods": [{"name": "main", "static": True}]},
        *extra_classes,
    ], calls=[{"from": "Main.main/0", "to": "Svc.run/1"}])


BOX = {"kind": "declared", "class": "Box"}


def test_returned_parameter_is_referenced():
    facts = _two_service([{"name": "run", "static": True, "params": [BOX], "returns": BOX,
                           "effects": [{"do": "return", "from": "p0"}]}])
    api = next(a for a in api_surface(facts) if a.member_ref == "Svc.run/1")
    assert classify_api(facts, api)[1] is TransferCategory.REFERENCED


def test_parameter_forwarded_to_other_service_is_referenced():
    facts = _two_service([{"name": "run", "static": True, "params": [BOX],
                           "effects": [{"do": "call", "method": "poke", "target": "p0"}]}])
    api = next(a for a in api_surface(facts) if a.member_ref == "Svc.run/1")
    assert classify_api(facts, api)[1] is TransferCategory.REFERENCED


def test_fresh_object_return_stays_passjson():
    facts = _two_service([{"name": "run", "static": True, "params": [BOX], "returns": BOX,
                           "effects": [{"do": "new", "var": "n", "class": "Box"}, {"do": "return", "from": "n"}]}])
    api = next(a for a in api_surface(facts) if a.member_ref == "Svc.run/1")
    assert classify_api(facts, api)[1] is TransferCategory.PASS_JSON


def test_inherited_self_reference_is_referenced():
    facts = _facts([
        {"name": "Base", "cluster": "c1", "fields": [_field("next", "declared", "Base")]},
        {"name": "Leaf", "cluster": "c1", "extends": "Base", "fields": [_field("x")]},
    ])
    assert referenced_taint(facts, declared("Leaf"))


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_soundness_link_random(seed):
    facts = random_facts(random.Random(seed))
    for api in api_surface(facts):
        _, primary = classify_api(facts, api)
        if primary is TransferCategory.PASS_JSON:
            assert compare_protocols(facts, exercise_scenario(facts, api)).categories("json") == []
        elif primary is TransferCategory.STATIC:
            probe_facts, scenario = static_write_scenario(facts, api)
            assert "StaticLoss" in compare_protocols(probe_facts, scenario).categories("json")
