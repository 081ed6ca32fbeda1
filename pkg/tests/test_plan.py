from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from idpass.classify import api_surface
from idpass.facts import parse_facts
from idpass.plan import WireType, dispatch_table, generate_plan
from idpass.randomgen import random_facts

from conftest import FACT_FIXTURES, fixture_facts


def test_pbw_plan(pbw):
    plan = generate_plan(pbw)
    [server] = plan.server_wrappers()
    assert server.wrapper_class_name == "CatalogMgrWrapper"
    assert server.renamed_original == "CatalogMgrServer"
    assert plan.routes() == ["/catalogmgr/create", "/catalogmgr/addItem"]
    [client] = plan.client_wrappers()
    assert (client.cluster, client.wrapper_class_name, client.holds) == ("c1", "CatalogMgr", "IdField")
    assert {"from": "CatalogMgr", "to": "CatalogMgrServer", "reason": "server original"} in plan.renames


def test_empty_surface_empty_plan():
    facts = parse_facts(json.dumps({"clusters": ["c"], "classes": [{"name": "A", "cluster": "c"}]}))
    plan = generate_plan(facts)
    assert plan.empty and plan.routes() == [] and plan.dispatch_table == {}


def test_two_clients():
    plan = generate_plan(fixture_facts("two-clients.json"))
    assert len(plan.server_wrappers()) == 1
    assert sorted(w.cluster for w in plan.client_wrappers()) == ["c1", "c2"]


def test_dispatch_subclass_override():
    table = dispatch_table(fixture_facts("dispatch-z.json"))
    assert table == {
        "CatalogMgr.addItem/1": [("CatalogMgr", "/catalogmgr/addItem"), ("Z", "/z/addItem")],
    }
    # removeItem is overridden by Z but never called across clusters
    assert not any("removeItem" in k for k in table)


def test_no_extends_no_dispatch(pbw):
    assert dispatch_table(pbw) == {}


def test_accessor_lint():
    plan = generate_plan(fixture_facts("accessor-heavy.json"), lint=True)
    assert "accessor endpoints: 3" in plan.warnings
    assert plan.routes() == ["/point/getX", "/point/getY", "/point/setY"]


def test_overload_routes_get_arity_suffix():
    facts = parse_facts(json.dumps({
        "clusters": ["c1", "c2"],
        "classes": [
            {"name": "S", "cluster": "c2", "methods": [
                {"name": "put", "params": [{"kind": "primitive"}], "static": True},
                {"name": "put", "params": [{"kind": "primitive"}, {"kind": "primitive"}], "static": True},
            ]},
            {"name": "C", "cluster": "c1", "methods": [{"name": "main", "static": True}]},
        ],
        "calls": [{"from": "C.main/0", "to": "S.put/1"}, {"from": "C.main/0", "to": "S.put/2"}],
    }))
    assert sorted(generate_plan(facts).routes()) == ["/s/put_1", "/s/put_2"]


def test_wrapper_name_clash_is_renamed():
    facts = parse_facts(json.dumps({
        "clusters": ["c1", "c2"],
        "classes": [
            {"name": "S", "cluster": "c2", "methods": [{"name": "go", "static": True}]},
            {"name": "SWrapper", "cluster": "c2"},
            {"name": "C", "cluster": "c1", "methods": [{"name": "main", "static": True}]},
        ],
        "calls": [{"from": "C.main/0", "to": "S.go/0"}],
    }))
    plan = generate_plan(facts)
    assert plan.server_wrappers()[0].wrapper_class_name == "SWrapper_x"
    assert {"from": "SWrapper", "to": "SWrapper_x", "reason": "server wrapper name clash"} in plan.renames


def _check_plan(facts):
    plan = generate_plan(facts)
    apis = api_surface(facts)
    assert len(plan.server_endpoints()) == len(apis)
    assert {e.api.api_id for e in plan.server_endpoints()} == {a.api_id for a in apis}
    generated = {w.wrapper_class_name for w in plan.server_wrappers()}
    assert not generated & set(facts.class_map)
    for e in plan.server_endpoints():
        for _name, wire in e.request_fields + e.response_fields:
            assert isinstance(wire, WireType)


@pytest.mark.parametrize("name", FACT_FIXTURES)
def test_coverage_on_fixtures(name):
    _check_plan(fixture_facts(name))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_coverage_on_random_facts(seed):
    _check_plan(random_facts(random.Random(seed)))
