"""API surface extraction and transfer-safety classification.

Each remotely callable member is labelled with the constructs that JSON
transfer cannot carry: static state, library/resource values, singleton
construction, and objects that other objects point at.  An API with none of
them is safe to pass as JSON.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .facts import (
    AccessMode,
    CodeFacts,
    TypeKind,
    TypeRef,
    cross_cluster_edges,
    declared,
    method_ref,
    ref_class,
    split_method_ref,
    CallEdge,
)


class ApiKind(str, Enum):
    CONSTRUCTOR = "Constructor"
    METHOD = "Method"
    FIELD_GET = "FieldGet"
    FIELD_SET = "FieldSet"


_KIND_ORDER = {ApiKind.CONSTRUCTOR: 0, ApiKind.METHOD: 1, ApiKind.FIELD_GET: 2, ApiKind.FIELD_SET: 3}


class TransferCategory(str, Enum):
    STATIC = "Static"
    LIBRARY = "Library"
    SINGLETON = "Singleton"
    REFERENCED = "Referenced"
    PASS_JSON = "PassJson"


# legend order doubles as primary-label priority
CATEGORY_ORDER = [
    TransferCategory.STATIC,
    TransferCategory.LIBRARY,
    TransferCategory.SINGLETON,
    TransferCategory.REFERENCED,
    TransferCategory.PASS_JSON,
]


@dataclass(frozen=True)
class ApiDescriptor:
    kind: ApiKind
    owner_class: str
    member_ref: str
    server_cluster: str
    client_clusters: frozenset
    caller_type: Optional[TypeRef] = None
    param_types: tuple = ()
    return_type: Optional[TypeRef] = None

    @property
    def api_id(self) -> str:
        if self.kind in (ApiKind.FIELD_GET, ApiKind.FIELD_SET):
            return f"{self.kind.value}:{self.member_ref}"
        return self.member_ref

    def involved_types(self) -> list[TypeRef]:
        types = [self.caller_type, *self.param_types, self.return_type]
        return [t for t in types if t is not None]

    def sort_key(self) -> tuple:
        return (self.owner_class, _KIND_ORDER[self.kind], self.member_ref)

    def to_json(self) -> dict:
        def t(x):
            return None if x is None else x.to_json()

        return {
            "kind": self.kind.value,
            "owner_class": self.owner_class,
            "member": self.member_ref,
            "server_cluster": self.server_cluster,
            "client_clusters": sorted(self.client_clusters),
            "caller_type": t(self.caller_type),
            "param_types": [p.to_json() for p in self.param_types],
            "return_type": t(self.return_type),
        }


def _constructor_ref(facts: CodeFacts, class_name: str, called: Iterable[str]) -> list[str]:
    called = sorted(called)
    if called:
        return called
    ctor = facts.class_map[class_name].default_constructor()
    if ctor is not None:
        return [method_ref(class_name, ctor.name, 0)]
    # implicit default constructor
    return [method_ref(class_name, class_name, 0)]


def api_surface(facts: CodeFacts) -> list[ApiDescriptor]:
    methods: dict[str, set] = {}
    ctors: dict[str, dict[str, set]] = {}
    implied: dict[str, set] = {}
    fields: dict[tuple, set] = {}
    for edge, src, _dst in cross_cluster_edges(facts):
        if isinstance(edge, CallEdge):
            m = facts.method_map[edge.callee]
            cls = ref_class(edge.callee)
            if m.is_constructor:
                ctors.setdefault(cls, {}).setdefault(edge.callee, set()).add(src)
            else:
                methods.setdefault(edge.callee, set()).add(src)
                if not m.is_static:
                    # holding an instance of a foreign class means it was created remotely
                    implied.setdefault(cls, set()).add(src)
        else:
            kind = ApiKind.FIELD_GET if edge.mode is AccessMode.READ else ApiKind.FIELD_SET
            fields.setdefault((edge.field, kind), set()).add(src)

    out: list[ApiDescriptor] = []
    for mref, clients in methods.items():
        cls, _name, _arity = split_method_ref(mref)
        m = facts.method_map[mref]
        out.append(ApiDescriptor(
            ApiKind.METHOD, cls, mref, facts.class_map[cls].cluster, frozenset(clients),
            None if m.is_static else declared(cls), tuple(m.params), m.return_type,
        ))
    for cls in sorted(set(ctors) | set(implied)):
        explicit = ctors.get(cls, {})
        for cref in _constructor_ref(facts, cls, explicit):
            clients = set(explicit.get(cref, set()))
            if not explicit:
                clients |= implied[cls]
            m = facts.method_map.get(cref)
            params = tuple(m.params) if m is not None else ()
            out.append(ApiDescriptor(
                ApiKind.CONSTRUCTOR, cls, cref, facts.class_map[cls].cluster,
                frozenset(clients), None, params, declared(cls),
            ))
    for (fref, kind), clients in fields.items():
        cls = ref_class(fref)
        f = facts.field_map[fref]
        params = (f.type,) if kind is ApiKind.FIELD_SET else ()
        ret = f.type if kind is ApiKind.FIELD_GET else None
        out.append(ApiDescriptor(
            kind, cls, fref, facts.class_map[cls].cluster, frozenset(clients),
            declared(cls), params, ret,
        ))
    out.sort(key=ApiDescriptor.sort_key)
    return out


# ---------------------------------------------------------------------------
# Taint analyses
# ---------------------------------------------------------------------------


def _lineage(facts: CodeFacts, class_name: str) -> list[str]:
    """``class_name`` followed by its ancestors."""
    out: list[str] = []
    cur: Optional[str] = class_name
    while cur is not None and cur not in out and cur in facts.class_map:
        out.append(cur)
        cur = facts.class_map[cur].extends
    return out


def reachable_classes(facts: CodeFacts, class_name: str) -> list[str]:
    """Classes whose declarations shape an object of ``class_name``.

    That is the class, its ancestors (inherited fields), its subclasses (what
    the value may really be at run time), and the same again for every
    declared field type, transitively.
    """
    seen = {class_name}
    order = [class_name]
    queue = deque([class_name])

    def push(name: str) -> None:
        if name not in seen:
            seen.add(name)
            order.append(name)
            queue.append(name)

    while queue:
        name = queue.popleft()
        cls = facts.class_map.get(name)
        if cls is None:
            continue
        for related in _lineage(facts, name)[1:] + facts.subclasses(name):
            push(related)
        for f in cls.fields:
            if f.type.is_declared:
                push(f.type.class_name)
    return order


def static_taint(facts: CodeFacts, t: Optional[TypeRef]) -> bool:
    if t is None or not t.is_declared:
        return False
    return any(
        f.is_static
        for name in reachable_classes(facts, t.class_name)
        if name in facts.class_map
        for f in facts.class_map[name].fields
    )


def _external_constructor(cls) -> bool:
    """Default constructor touches outside state (a DB read, a counter, ...)."""
    ctor = cls.default_constructor()
    model = ctor.constructor_effects if ctor is not None else None
    return model is not None and bool(model.side_effect_counter_name) and model.counter_delta != 0


def library_taint(facts: CodeFacts, t: Optional[TypeRef]) -> bool:
    if t is None:
        return False
    if t.kind in (TypeKind.LIBRARY, TypeKind.RESOURCE):
        return True
    if not t.is_declared:
        return False
    for name in reachable_classes(facts, t.class_name):
        cls = facts.class_map.get(name)
        if cls is None:
            continue
        if _external_constructor(cls):
            return True
        if any(f.type.kind in (TypeKind.LIBRARY, TypeKind.RESOURCE) for f in cls.fields):
            return True
    return False


def singleton_taint(facts: CodeFacts, t: Optional[TypeRef]) -> bool:
    if t is None or not t.is_declared or t.class_name not in facts.class_map:
        return False
    return facts.class_map[t.class_name].singleton_like


def referenced_taint(facts: CodeFacts, t: Optional[TypeRef]) -> bool:
    """Some other class (or a self-typed field) can point into t's object graph."""
    if t is None or not t.is_declared:
        return False
    reach = set(reachable_classes(facts, t.class_name))
    own = set(_lineage(facts, t.class_name))
    for cls in facts.classes:
        for f in cls.fields:
            if not f.type.is_declared or f.type.class_name not in reach:
                continue
            if cls.name not in own or f.type.class_name in own:
                return True
    return False


_TESTS = [
    (TransferCategory.STATIC, static_taint),
    (TransferCategory.LIBRARY, library_taint),
    (TransferCategory.SINGLETON, singleton_taint),
    (TransferCategory.REFERENCED, referenced_taint),
]


def touched_fields(facts: CodeFacts, mref: str) -> set[str]:
    """Field refs read or written by ``mref`` or anything it (transitively) calls.

    Uses the access and call edges, plus static reads/writes in effect bodies.
    """
    callees: dict[str, list] = {}
    for e in facts.calls:
        callees.setdefault(e.caller, []).append(e.callee)
    accessed: dict[str, set] = {}
    for e in facts.accesses:
        accessed.setdefault(e.accessor, set()).add(e.field)
    seen, stack, out = {mref}, [mref], set()
    while stack:
        cur = stack.pop()
        out |= accessed.get(cur, set())
        m = facts.method_map.get(cur)
        for eff in m.effects if m is not None else ():
            if eff.get("do") in ("set_static", "get_static"):
                owner = facts.static_owner(eff["class"], eff["field"])
                if owner is not None:
                    out.add(f"{owner}.{eff['field']}")
        for nxt in callees.get(cur, []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return out


def nested_remote_calls(facts: CodeFacts, mref: str) -> list[str]:
    """Cross-cluster callees reached from ``mref`` through its call graph."""
    callees: dict[str, list] = {}
    for e in facts.calls:
        callees.setdefault(e.caller, []).append(e.callee)
    seen, stack, out = {mref}, [mref], []
    while stack:
        cur = stack.pop()
        for nxt in callees.get(cur, []):
            if facts.cluster_of(nxt) != facts.cluster_of(cur) and nxt not in out:
                out.append(nxt)
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return sorted(out)


def _signature_types(facts: CodeFacts, mref: str) -> list[TypeRef]:
    m = facts.method_map[mref]
    types = [] if m.is_static or m.is_constructor else [declared(ref_class(mref))]
    types += list(m.params)
    if m.return_type is not None:
        types.append(m.return_type)
    return types


def _leaves_cluster(facts: CodeFacts, class_name: Optional[str], home: str) -> bool:
    """A call on ``class_name`` may run outside ``home`` (unknown class: assume so)."""
    if class_name is None or class_name not in facts.class_map:
        return True
    return any(facts.cluster_of(c) != home for c in [class_name, *facts.subclasses(class_name)])


def caller_handles_escape(facts: CodeFacts, mref: str) -> bool:
    """The body returns, or forwards to another service, an object the caller still holds.

    Under JSON passing the caller then ends up with two copies of one object
    (a returned parameter) or keeps a copy that the nested call never
    updates (a forwarded parameter).
    """
    m = facts.method_map[mref]
    owner = ref_class(mref)
    home = facts.cluster_of(owner)
    kinds: dict[str, Optional[str]] = {}
    held = set()
    if not m.is_static and not m.is_constructor:
        kinds["this"] = owner
        held.add("this")
    for i, p in enumerate(m.params):
        if p.is_declared:
            kinds[f"p{i}"] = p.class_name
            held.add(f"p{i}")

    def root(path) -> Optional[str]:
        return path.split(".")[0] if isinstance(path, str) else None

    for eff in m.effects:
        op = eff.get("do")
        if op == "new":
            kinds[eff["var"]] = eff["class"]
            held.discard(eff["var"])
        elif "var" in eff and "from" in eff:
            src = root(eff["from"])
            kinds[eff["var"]] = None
            if src in held:
                held.add(eff["var"])
            else:
                held.discard(eff["var"])
        elif op == "return":
            if m.return_type is not None and m.return_type.is_declared and root(eff.get("from")) in held:
                return True
        elif op == "call":
            target = eff.get("target")
            cls = eff.get("class") if target is None else kinds.get(root(target))
            if not _leaves_cluster(facts, cls, home):
                continue
            refs = [root(target)] + [root(a.get("ref")) for a in eff.get("args", []) if isinstance(a, dict)]
            if any(r in held for r in refs):
                return True
    return False


def _body_categories(facts: CodeFacts, api: ApiDescriptor) -> set:
    if api.kind is not ApiKind.METHOD:
        return set()
    cats = set()
    if caller_handles_escape(facts, api.member_ref):
        cats.add(TransferCategory.REFERENCED)
    # objects the body ships onward to other services face the same transfer
    for callee in nested_remote_calls(facts, api.member_ref):
        for t in _signature_types(facts, callee):
            cats.update(cat for cat, test in _TESTS if test(facts, t))
    for fref in touched_fields(facts, api.member_ref):
        f = facts.field_map.get(fref)
        if f is None:
            continue
        if f.is_static:
            cats.add(TransferCategory.STATIC)
        if f.type.kind in (TypeKind.LIBRARY, TypeKind.RESOURCE):
            cats.add(TransferCategory.LIBRARY)
    return cats


def classify_api(facts: CodeFacts, api: ApiDescriptor) -> tuple[frozenset, TransferCategory]:
    types = api.involved_types()
    body = _body_categories(facts, api)
    cats = [cat for cat, test in _TESTS if cat in body or any(test(facts, t) for t in types)]
    if not cats:
        return frozenset({TransferCategory.PASS_JSON}), TransferCategory.PASS_JSON
    return frozenset(cats), cats[0]


@dataclass
class ClassificationReport:
    rows: list = field(default_factory=list)
    counts: dict = field(default_factory=lambda: {c.value: 0 for c in CATEGORY_ORDER})

    @property
    def total(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        return {"apis": self.rows, "counts": self.counts, "total": self.total}

    def csv_rows(self) -> list[dict]:
        return [
            {"api": r["api"], "kind": r["kind"], "categories": ";".join(r["categories"]), "primary": r["primary"]}
            for r in self.rows
        ]


def classification_report(facts: CodeFacts, apis: Optional[list] = None) -> ClassificationReport:
    report = ClassificationReport()
    for api in api_surface(facts) if apis is None else apis:
        cats, primary = classify_api(facts, api)
        report.rows.append({
            "api": api.api_id,
            "kind": api.kind.value,
            "owner_class": api.owner_class,
            "server_cluster": api.server_cluster,
            "client_clusters": sorted(api.client_clusters),
            "categories": [c.value for c in CATEGORY_ORDER if c in cats],
            "primary": primary.value,
        })
        report.counts[primary.value] += 1
    return report


__all__ = [
    "ApiDescriptor",
    "ApiKind",
    "caller_handles_escape",
    "CATEGORY_ORDER",
    "ClassificationReport",
    "TransferCategory",
    "api_surface",
    "classification_report",
    "classify_api",
    "library_taint",
    "nested_remote_calls",
    "reachable_classes",
    "referenced_taint",
    "singleton_taint",
    "static_taint",
    "touched_fields",
]
