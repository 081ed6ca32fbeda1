"""Wrapper-based refactoring plan.

The plan is a declarative document: for every exposed class, a server-side
adapter (``<Class>Wrapper``, holding the id-to-object map) and a client-side
stub per consuming cluster (same name as the original class, holding only an
id).  Declared types cross the wire as global ids; primitives pass through.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .classify import ApiDescriptor, ApiKind, TransferCategory, api_surface, classify_api
from .facts import CodeFacts, TypeKind, TypeRef, ref_member, split_method_ref


class WireType(str, Enum):
    GID = "Gid"
    PRIMITIVE = "Primitive"


def wire_type(t: TypeRef) -> WireType:
    return WireType.PRIMITIVE if t.kind is TypeKind.PRIMITIVE else WireType.GID


@dataclass(frozen=True)
class EndpointSpec:
    route: str
    api: ApiDescriptor
    request_fields: tuple = ()
    response_fields: tuple = ()

    def to_json(self) -> dict:
        return {
            "route": self.route,
            "api": self.api.api_id,
            "kind": self.api.kind.value,
            "request": [[n, w.value] for n, w in self.request_fields],
            "response": [[n, w.value] for n, w in self.response_fields],
        }


@dataclass(frozen=True)
class WrapperSpec:
    side: str  # "client" or "server"
    cluster: str
    wrapper_class_name: str
    wrapped_class_name: str
    renamed_original: Optional[str]
    holds: str  # "IdField" or "IdToObjectMap"
    endpoints: tuple = ()

    def to_json(self) -> dict:
        return {
            "side": self.side,
            "cluster": self.cluster,
            "wrapper_class": self.wrapper_class_name,
            "wraps": self.wrapped_class_name,
            "renamed_original": self.renamed_original,
            "holds": self.holds,
            "endpoints": [e.to_json() for e in self.endpoints],
        }


@dataclass
class RefactoringPlan:
    wrappers: dict = field(default_factory=dict)  # cluster -> list[WrapperSpec]
    dispatch_table: dict = field(default_factory=dict)
    renames: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def server_wrappers(self) -> list[WrapperSpec]:
        return [w for ws in self.wrappers.values() for w in ws if w.side == "server"]

    def client_wrappers(self) -> list[WrapperSpec]:
        return [w for ws in self.wrappers.values() for w in ws if w.side == "client"]

    def server_endpoints(self) -> list[EndpointSpec]:
        return [e for w in self.server_wrappers() for e in w.endpoints]

    def routes(self) -> list[str]:
        return [e.route for e in self.server_endpoints()]

    @property
    def empty(self) -> bool:
        return not self.wrappers

    def to_json(self) -> dict:
        return {
            "clusters": {c: [w.to_json() for w in ws] for c, ws in sorted(self.wrappers.items())},
            "dispatch_table": {k: [list(p) for p in v] for k, v in sorted(self.dispatch_table.items())},
            "renames": self.renames,
            "warnings": self.warnings,
        }


def _endpoint_name(api: ApiDescriptor) -> str:
    member = ref_member(api.member_ref)
    if api.kind is ApiKind.CONSTRUCTOR:
        return "create"
    if api.kind is ApiKind.FIELD_GET:
        return "get" + member[:1].upper() + member[1:]
    if api.kind is ApiKind.FIELD_SET:
        return "set" + member[:1].upper() + member[1:]
    return member


def _routes_for(class_name: str, apis: list) -> dict:
    base = {id(a): _endpoint_name(a) for a in apis}
    clashes = Counter(base.values())
    routes = {}
    for a in apis:
        name = base[id(a)]
        if clashes[name] > 1:
            name = f"{name}_{len(a.param_types)}"
        routes[a.api_id] = f"/{class_name.lower()}/{name}"
    return routes


def _fields(api: ApiDescriptor) -> tuple[tuple, tuple]:
    req = []
    if api.caller_type is not None:
        req.append(("callerId", WireType.GID))
    for i, p in enumerate(api.param_types):
        w = wire_type(p)
        req.append((f"arg{i}Id" if w is WireType.GID else f"arg{i}", w))
    resp = []
    if api.kind is ApiKind.CONSTRUCTOR:
        resp.append(("id", WireType.GID))
    elif api.return_type is not None:
        w = wire_type(api.return_type)
        resp.append(("returnId" if w is WireType.GID else "returnValue", w))
    return tuple(req), tuple(resp)


def _unique(name: str, taken: set, renames: list, reason: str) -> str:
    out = name
    while out in taken:
        out += "_x"
    if out != name:
        renames.append({"from": name, "to": out, "reason": reason})
    taken.add(out)
    return out


def dispatch_table(facts: CodeFacts, apis: Optional[list] = None) -> dict:
    apis = api_surface(facts) if apis is None else apis
    exposed = {a.member_ref: a for a in apis if a.kind is ApiKind.METHOD}
    class_routes = {}
    by_class: dict[str, list] = {}
    for a in apis:
        by_class.setdefault(a.owner_class, []).append(a)
    for cls, group in by_class.items():
        class_routes.update(_routes_for(cls, group))
    table: dict[str, list] = {}
    for mref in sorted(exposed):
        cls, name, arity = split_method_ref(mref)
        entries = []
        for sub in facts.subclasses(cls):
            sub_ref = f"{sub}.{name}/{arity}"
            if sub_ref in exposed:
                entries.append((sub, class_routes[sub_ref]))
        if entries:
            table[f"{cls}.{name}/{arity}"] = [(cls, class_routes[mref])] + entries
    return table


def generate_plan(facts: CodeFacts, lint: bool = False) -> RefactoringPlan:
    apis = api_surface(facts)
    plan = RefactoringPlan()
    if not apis:
        return plan
    taken = set(facts.class_map)
    by_class: dict[str, list] = {}
    for a in apis:
        by_class.setdefault(a.owner_class, []).append(a)

    for cls in sorted(by_class):
        group = by_class[cls]
        routes = _routes_for(cls, group)
        endpoints = {a.api_id: EndpointSpec(routes[a.api_id], a, *_fields(a)) for a in group}
        server_cluster = facts.class_map[cls].cluster
        server_name = _unique(f"{cls}Wrapper", taken, plan.renames, "server wrapper name clash")
        renamed = f"{cls}Server"
        plan.renames.append({"from": cls, "to": renamed, "reason": "server original"})
        plan.wrappers.setdefault(server_cluster, []).append(WrapperSpec(
            "server", server_cluster, server_name, cls, renamed, "IdToObjectMap",
            tuple(endpoints[a.api_id] for a in group),
        ))
        clients = sorted(set().union(*(a.client_clusters for a in group)))
        for client in clients:
            used = tuple(endpoints[a.api_id] for a in group if client in a.client_clusters)
            plan.wrappers.setdefault(client, []).append(WrapperSpec(
                "client", client, cls, cls, None, "IdField", used,
            ))
    plan.dispatch_table = dispatch_table(facts, apis)
    if lint:
        plan.warnings = lint_warnings(facts, apis)
    return plan


def lint_warnings(facts: CodeFacts, apis: Optional[list] = None) -> list[str]:
    apis = api_surface(facts) if apis is None else apis
    out = []
    accessors = sum(1 for a in apis if a.kind in (ApiKind.FIELD_GET, ApiKind.FIELD_SET))
    if accessors:
        out.append(f"accessor endpoints: {accessors}")
    static = sorted(a.api_id for a in apis if TransferCategory.STATIC in classify_api(facts, a)[0])
    if static:
        out.append(f"static state shared across services: {len(static)} ({', '.join(static)})")
    resource = sorted(
        a.api_id for a in apis
        if any(t.kind in (TypeKind.RESOURCE, TypeKind.LIBRARY) for t in a.param_types)
        or (a.return_type is not None and a.return_type.kind in (TypeKind.RESOURCE, TypeKind.LIBRARY))
    )
    if resource:
        out.append(f"resource-typed parameters: {len(resource)} ({', '.join(resource)})")
    return out
