"""Code-facts data model, JSON ingestion, and validation.

A facts document describes a clustered monolith: classes with their fields
and methods, the call/access edges between members, and the cluster each
class is assigned to.  Method references are ``Class.method/arity`` and field
references are ``Class.field``.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Iterator, Optional, Union


class FactsSyntaxError(ValueError):
    """The document is not well-formed JSON."""


class SchemaError(ValueError):
    """The document is JSON but does not follow the facts schema."""


class TypeKind(str, Enum):
    PRIMITIVE = "primitive"
    DECLARED = "declared"
    LIBRARY = "library"
    RESOURCE = "resource"


class Visibility(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class AccessMode(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class Resource:
    """Opaque handle to an external resource (file, socket, ...)."""

    label: str


Literal = Union[None, bool, int, str, Resource]


@dataclass(frozen=True)
class TypeRef:
    kind: TypeKind
    class_name: Optional[str] = None

    @property
    def is_declared(self) -> bool:
        return self.kind is TypeKind.DECLARED

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.class_name is not None:
            out["class"] = self.class_name
        return out

    def __str__(self) -> str:
        return self.class_name if self.is_declared else self.kind.value


PRIMITIVE = TypeRef(TypeKind.PRIMITIVE)


def declared(name: str) -> TypeRef:
    return TypeRef(TypeKind.DECLARED, name)


@dataclass(frozen=True)
class FieldDecl:
    name: str
    type: TypeRef
    is_static: bool = False
    visibility: Visibility = Visibility.PUBLIC


@dataclass(frozen=True)
class ConstructorModel:
    """What a default constructor does besides allocating the object."""

    default_values: dict = field(default_factory=dict)
    side_effect_counter_name: Optional[str] = None
    counter_delta: int = 0


@dataclass(frozen=True)
class MethodDecl:
    name: str
    params: tuple = ()
    return_type: Optional[TypeRef] = None  # None means void
    is_constructor: bool = False
    is_static: bool = False
    constructor_effects: Optional[ConstructorModel] = None
    effects: tuple = ()

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class ClassDecl:
    name: str
    cluster: str
    fields: tuple = ()
    methods: tuple = ()
    is_singleton: bool = False
    has_private_constructor: bool = False
    extends: Optional[str] = None

    def field_named(self, name: str) -> Optional[FieldDecl]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def method(self, name: str, arity: int) -> Optional[MethodDecl]:
        for m in self.methods:
            if m.name == name and m.arity == arity:
                return m
        return None

    def default_constructor(self) -> Optional[MethodDecl]:
        for m in self.methods:
            if m.is_constructor and m.arity == 0:
                return m
        return None

    @property
    def singleton_like(self) -> bool:
        return self.is_singleton or self.has_private_constructor


@dataclass(frozen=True)
class CallEdge:
    caller: str
    callee: str
    count: int = 1

    @property
    def source(self) -> str:
        return self.caller

    @property
    def target(self) -> str:
        return self.callee


@dataclass(frozen=True)
class AccessEdge:
    accessor: str
    field: str
    mode: AccessMode = AccessMode.READ
    count: int = 1

    @property
    def source(self) -> str:
        return self.accessor

    @property
    def target(self) -> str:
        return self.field


Edge = Union[CallEdge, AccessEdge]


def method_ref(class_name: str, name: str, arity: int) -> str:
    return f"{class_name}.{name}/{arity}"


def field_ref(class_name: str, name: str) -> str:
    return f"{class_name}.{name}"


def ref_class(ref: str) -> str:
    return ref.split(".", 1)[0]


def split_method_ref(ref: str) -> tuple[str, str, int]:
    cls, rest = ref.split(".", 1)
    name, arity = rest.rsplit("/", 1)
    return cls, name, int(arity)


def ref_member(ref: str) -> str:
    """Member name without class or arity."""
    return ref.split(".", 1)[1].split("/", 1)[0]


@dataclass(frozen=True)
class CodeFacts:
    classes: tuple = ()
    calls: tuple = ()
    accesses: tuple = ()
    clusters: tuple = ()

    @cached_property
    def class_map(self) -> dict[str, ClassDecl]:
        return {c.name: c for c in self.classes}

    @cached_property
    def method_map(self) -> dict[str, MethodDecl]:
        return {
            method_ref(c.name, m.name, m.arity): m
            for c in self.classes
            for m in c.methods
        }

    @cached_property
    def field_map(self) -> dict[str, FieldDecl]:
        return {field_ref(c.name, f.name): f for c in self.classes for f in c.fields}

    def get_class(self, name: str) -> ClassDecl:
        try:
            return self.class_map[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    def cluster_of(self, ref_or_class: str) -> str:
        return self.class_map[ref_class(ref_or_class)].cluster

    def edges(self) -> Iterator[Edge]:
        yield from self.calls
        yield from self.accesses

    def subclasses(self, name: str) -> list[str]:
        """All transitive subclasses of ``name``, sorted."""
        out: set[str] = set()
        frontier = [name]
        while frontier:
            cur = frontier.pop()
            for c in self.classes:
                if c.extends == cur and c.name not in out:
                    out.add(c.name)
                    frontier.append(c.name)
        return sorted(out)

    def resolve_method(self, class_name: str, name: str, arity: int) -> Optional[tuple[ClassDecl, MethodDecl]]:
        """Virtual dispatch: look up the method on the class, then its ancestors."""
        seen = set()
        cur: Optional[str] = class_name
        while cur is not None and cur not in seen:
            seen.add(cur)
            cls = self.class_map.get(cur)
            if cls is None:
                return None
            m = cls.method(name, arity)
            if m is not None:
                return cls, m
            cur = cls.extends
        return None

    def instance_fields(self, class_name: str) -> list[FieldDecl]:
        """Non-static fields including inherited ones, ancestors first."""
        chain = []
        seen = set()
        cur: Optional[str] = class_name
        while cur is not None and cur not in seen and cur in self.class_map:
            seen.add(cur)
            chain.append(self.class_map[cur])
            cur = self.class_map[cur].extends
        out: dict[str, FieldDecl] = {}
        for cls in reversed(chain):
            for f in cls.fields:
                if not f.is_static:
                    out[f.name] = f
        return list(out.values())

    def static_owner(self, class_name: str, field_name: str) -> Optional[str]:
        """Class that declares static ``field_name``, searching ancestors."""
        seen = set()
        cur: Optional[str] = class_name
        while cur is not None and cur not in seen and cur in self.class_map:
            seen.add(cur)
            f = self.class_map[cur].field_named(field_name)
            if f is not None and f.is_static:
                return cur
            cur = self.class_map[cur].extends
        return None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_CLASS_KEYS = {"name", "cluster", "singleton", "private_constructor", "extends", "fields", "methods"}
_FIELD_KEYS = {"name", "type", "static", "visibility"}
_METHOD_KEYS = {"name", "params", "returns", "constructor", "static", "constructor_model", "effects"}
_MODEL_KEYS = {"defaults", "counter", "delta"}
_TYPE_KEYS = {"kind", "class"}
_CALL_KEYS = {"from", "to", "count"}
_ACCESS_KEYS = {"from", "field", "mode", "count"}
_TOP_KEYS = {"clusters", "classes", "calls", "accesses"}

EFFECT_OPS = {
    "set": {"path", "value"},
    "setref": {"path", "from"},
    "let": {"var", "from"},
    "rebind": {"var", "from"},
    "set_static": {"class", "field"},
    "get_static": {"var", "class", "field"},
    "new": {"var", "class"},
    "return": set(),
    "call": {"method"},
}
_EFFECT_OPTIONAL = {"value", "from", "target", "class", "args", "capture"}


class _Reader:
    def __init__(self, strict: bool):
        self.strict = strict

    def check_keys(self, obj: Any, allowed: set, required: set, where: str) -> dict:
        if not isinstance(obj, dict):
            raise SchemaError(f"{where}: expected an object")
        missing = required - obj.keys()
        if missing:
            raise SchemaError(f"{where}: missing required field(s) {sorted(missing)}")
        extra = obj.keys() - allowed
        if extra:
            msg = f"{where}: unknown key(s) {sorted(extra)}"
            if self.strict:
                raise SchemaError(msg)
            warnings.warn(msg, stacklevel=3)
        return obj

    def enum(self, enum_cls, value: Any, where: str):
        try:
            return enum_cls(value)
        except ValueError:
            raise SchemaError(f"{where}: unknown value {value!r}") from None

    def string(self, obj: dict, key: str, where: str) -> str:
        v = obj[key]
        if not isinstance(v, str) or not v:
            raise SchemaError(f"{where}.{key}: expected a non-empty string")
        return v

    def boolean(self, obj: dict, key: str, where: str) -> bool:
        v = obj.get(key, False)
        if not isinstance(v, bool):
            raise SchemaError(f"{where}.{key}: expected a boolean")
        return v

    def type_ref(self, obj: Any, where: str) -> TypeRef:
        self.check_keys(obj, _TYPE_KEYS, {"kind"}, where)
        kind = self.enum(TypeKind, obj["kind"], f"{where}.kind")
        if kind is TypeKind.DECLARED:
            if "class" not in obj:
                raise SchemaError(f"{where}: declared type needs 'class'")
            return TypeRef(kind, self.string(obj, "class", where))
        if "class" in obj:
            raise SchemaError(f"{where}: only declared types carry 'class'")
        return TypeRef(kind)

    def field_decl(self, obj: Any, where: str) -> FieldDecl:
        self.check_keys(obj, _FIELD_KEYS, {"name", "type"}, where)
        return FieldDecl(
            name=self.string(obj, "name", where),
            type=self.type_ref(obj["type"], f"{where}.type"),
            is_static=self.boolean(obj, "static", where),
            visibility=self.enum(Visibility, obj.get("visibility", "public"), f"{where}.visibility"),
        )

    def model(self, obj: Any, where: str) -> ConstructorModel:
        self.check_keys(obj, _MODEL_KEYS, set(), where)
        defaults = obj.get("defaults", {})
        if not isinstance(defaults, dict):
            raise SchemaError(f"{where}.defaults: expected an object")
        delta = obj.get("delta", 0)
        if isinstance(delta, bool) or not isinstance(delta, int):
            raise SchemaError(f"{where}.delta: expected an integer")
        counter = obj.get("counter")
        if counter is not None and not isinstance(counter, str):
            raise SchemaError(f"{where}.counter: expected a string")
        return ConstructorModel(
            {k: parse_literal(v, f"{where}.defaults.{k}") for k, v in defaults.items()},
            counter,
            delta,
        )

    def effect(self, obj: Any, where: str) -> dict:
        if not isinstance(obj, dict) or "do" not in obj:
            raise SchemaError(f"{where}: effect needs a 'do' key")
        op = obj["do"]
        if op not in EFFECT_OPS:
            raise SchemaError(f"{where}: unknown effect {op!r}")
        required = EFFECT_OPS[op]
        self.check_keys(obj, {"do"} | required | _EFFECT_OPTIONAL | {"var", "path", "field", "method"}, required, where)
        if op == "call" and ("target" in obj) == ("class" in obj):
            raise SchemaError(f"{where}: call needs exactly one of 'target' or 'class'")
        for key in ("value",):
            if key in obj:
                parse_literal(obj[key], f"{where}.{key}")
        for i, arg in enumerate(obj.get("args", [])):
            parse_arg(arg, f"{where}.args[{i}]")
        return dict(obj)

    def method_decl(self, obj: Any, where: str) -> MethodDecl:
        self.check_keys(obj, _METHOD_KEYS, {"name"}, where)
        params = obj.get("params", [])
        if not isinstance(params, list):
            raise SchemaError(f"{where}.params: expected an array")
        ret = obj.get("returns")
        effects = obj.get("effects", [])
        if not isinstance(effects, list):
            raise SchemaError(f"{where}.effects: expected an array")
        model = obj.get("constructor_model")
        return MethodDecl(
            name=self.string(obj, "name", where),
            params=tuple(self.type_ref(p, f"{where}.params[{i}]") for i, p in enumerate(params)),
            return_type=None if ret in (None, "void") else self.type_ref(ret, f"{where}.returns"),
            is_constructor=self.boolean(obj, "constructor", where),
            is_static=self.boolean(obj, "static", where),
            constructor_effects=None if model is None else self.model(model, f"{where}.constructor_model"),
            effects=tuple(self.effect(e, f"{where}.effects[{i}]") for i, e in enumerate(effects)),
        )

    def class_decl(self, obj: Any, where: str) -> ClassDecl:
        self.check_keys(obj, _CLASS_KEYS, {"name", "cluster"}, where)
        name = self.string(obj, "name", where)
        where = f"classes[{name}]"
        fields = obj.get("fields", [])
        methods = obj.get("methods", [])
        if not isinstance(fields, list) or not isinstance(methods, list):
            raise SchemaError(f"{where}: fields and methods must be arrays")
        extends = obj.get("extends")
        if extends is not None and not isinstance(extends, str):
            raise SchemaError(f"{where}.extends: expected a string")
        return ClassDecl(
            name=name,
            cluster=self.string(obj, "cluster", where),
            fields=tuple(self.field_decl(f, f"{where}.fields[{i}]") for i, f in enumerate(fields)),
            methods=tuple(self.method_decl(m, f"{where}.methods[{i}]") for i, m in enumerate(methods)),
            is_singleton=self.boolean(obj, "singleton", where),
            has_private_constructor=self.boolean(obj, "private_constructor", where),
            extends=extends,
        )

    def count(self, obj: dict, where: str) -> int:
        c = obj.get("count", 1)
        if isinstance(c, bool) or not isinstance(c, int) or c < 1:
            raise SchemaError(f"{where}.count: expected a positive integer")
        return c


def parse_literal(value: Any, where: str = "value") -> Literal:
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, dict) and set(value) == {"resource"} and isinstance(value["resource"], str):
        return Resource(value["resource"])
    raise SchemaError(f"{where}: unsupported literal {value!r}")


def literal_to_json(value: Literal) -> Any:
    if isinstance(value, Resource):
        return {"resource": value.label}
    return value


def parse_arg(arg: Any, where: str) -> tuple[str, Any]:
    """Call arguments are ``{"ref": path}`` or ``{"value": literal}``."""
    if isinstance(arg, dict) and set(arg) == {"ref"} and isinstance(arg["ref"], str):
        return ("ref", arg["ref"])
    if isinstance(arg, dict) and set(arg) == {"value"}:
        return ("value", parse_literal(arg["value"], where))
    raise SchemaError(f"{where}: argument must be {{'ref': path}} or {{'value': literal}}")


def _aggregate(edges: Iterable, key) -> list:
    totals: dict = {}
    protos: dict = {}
    for e in edges:
        k = key(e)
        totals[k] = totals.get(k, 0) + e.count
        protos.setdefault(k, e)
    out = []
    for k in sorted(totals):
        e = protos[k]
        if isinstance(e, CallEdge):
            out.append(CallEdge(e.caller, e.callee, totals[k]))
        else:
            out.append(AccessEdge(e.accessor, e.field, e.mode, totals[k]))
    return out


def build_facts(classes: Iterable[ClassDecl], calls: Iterable[CallEdge] = (),
                accesses: Iterable[AccessEdge] = (), clusters: Optional[Iterable[str]] = None) -> CodeFacts:
    """Canonicalize: classes sorted by name, edges aggregated and sorted."""
    classes = sorted(classes, key=lambda c: c.name)
    if clusters is None:
        clusters = {c.cluster for c in classes}
    return CodeFacts(
        classes=tuple(classes),
        calls=tuple(_aggregate(calls, lambda e: (e.caller, e.callee))),
        accesses=tuple(_aggregate(accesses, lambda e: (e.accessor, e.field, e.mode.value))),
        clusters=tuple(sorted(set(clusters))),
    )


def facts_from_dict(doc: Any, strict: bool = True) -> CodeFacts:
    r = _Reader(strict)
    r.check_keys(doc, _TOP_KEYS, {"clusters", "classes"}, "document")
    clusters = doc["clusters"]
    if not isinstance(clusters, list) or not all(isinstance(c, str) for c in clusters):
        raise SchemaError("clusters: expected an array of strings")
    classes = [r.class_decl(c, f"classes[{i}]") for i, c in enumerate(doc["classes"])]
    calls = []
    for i, c in enumerate(doc.get("calls", [])):
        where = f"calls[{i}]"
        r.check_keys(c, _CALL_KEYS, {"from", "to"}, where)
        calls.append(CallEdge(r.string(c, "from", where), r.string(c, "to", where), r.count(c, where)))
    accesses = []
    for i, a in enumerate(doc.get("accesses", [])):
        where = f"accesses[{i}]"
        r.check_keys(a, _ACCESS_KEYS, {"from", "field", "mode"}, where)
        accesses.append(AccessEdge(
            r.string(a, "from", where), r.string(a, "field", where),
            r.enum(AccessMode, a["mode"], f"{where}.mode"), r.count(a, where),
        ))
    facts = build_facts(classes, calls, accesses, clusters)
    dangling = [v for v in validate(facts) if v.code == "DanglingReference"]
    if dangling:
        raise SchemaError("; ".join(f"{v.path}: {v.message}" for v in dangling))
    return facts


def parse_facts(text: Union[str, bytes], strict: bool = True) -> CodeFacts:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FactsSyntaxError(f"malformed facts document: {exc}") from exc
    return facts_from_dict(doc, strict=strict)


def load_facts(path, strict: bool = True) -> CodeFacts:
    with open(path, encoding="utf-8") as fh:
        return parse_facts(fh.read(), strict=strict)


def _model_to_json(m: ConstructorModel) -> dict:
    out: dict[str, Any] = {"defaults": {k: literal_to_json(v) for k, v in m.default_values.items()}}
    if m.side_effect_counter_name is not None:
        out["counter"] = m.side_effect_counter_name
    if m.counter_delta:
        out["delta"] = m.counter_delta
    return out


def facts_to_dict(facts: CodeFacts) -> dict:
    classes = []
    for c in facts.classes:
        obj: dict[str, Any] = {
            "name": c.name,
            "cluster": c.cluster,
            "singleton": c.is_singleton,
            "private_constructor": c.has_private_constructor,
            "fields": [
                {"name": f.name, "type": f.type.to_json(), "static": f.is_static,
                 "visibility": f.visibility.value}
                for f in c.fields
            ],
            "methods": [],
        }
        if c.extends is not None:
            obj["extends"] = c.extends
        for m in c.methods:
            mo: dict[str, Any] = {
                "name": m.name,
                "params": [p.to_json() for p in m.params],
                "returns": None if m.return_type is None else m.return_type.to_json(),
                "constructor": m.is_constructor,
                "static": m.is_static,
            }
            if m.constructor_effects is not None:
                mo["constructor_model"] = _model_to_json(m.constructor_effects)
            if m.effects:
                mo["effects"] = [dict(e) for e in m.effects]
            obj["methods"].append(mo)
        classes.append(obj)
    return {
        "clusters": list(facts.clusters),
        "classes": classes,
        "calls": [{"from": e.caller, "to": e.callee, "count": e.count} for e in facts.calls],
        "accesses": [
            {"from": e.accessor, "field": e.field, "mode": e.mode.value, "count": e.count}
            for e in facts.accesses
        ],
    }


def serialize_facts(facts: CodeFacts) -> str:
    return json.dumps(facts_to_dict(facts), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str = ""

    def to_json(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


def validate(facts: CodeFacts) -> list[Violation]:
    out: list[Violation] = []
    cluster_set = set(facts.clusters)
    for name, n in sorted(Counter(facts.clusters).items()):
        if n > 1:
            out.append(Violation("DuplicateCluster", name))
    names = Counter(c.name for c in facts.classes)
    for name, n in sorted(names.items()):
        if n > 1:
            out.append(Violation("DuplicateClass", name, f"class {name!r} declared {n} times"))

    def check_type(t: Optional[TypeRef], path: str):
        if t is not None and t.is_declared and t.class_name not in names:
            out.append(Violation("UnresolvedType", path, f"type {t.class_name!r} is not declared"))

    for c in facts.classes:
        path = c.name
        if c.cluster not in cluster_set:
            out.append(Violation("UnknownCluster", path, f"cluster {c.cluster!r} not in cluster set"))
        if c.extends is not None and c.extends not in names:
            out.append(Violation("UnknownSuperclass", path, f"superclass {c.extends!r} is not declared"))
        for fname, n in sorted(Counter(f.name for f in c.fields).items()):
            if n > 1:
                out.append(Violation("DuplicateField", field_ref(c.name, fname)))
        for (mname, arity), n in sorted(Counter((m.name, m.arity) for m in c.methods).items()):
            if n > 1:
                out.append(Violation("DuplicateMethod", method_ref(c.name, mname, arity)))
        field_names = {f.name for f in facts.instance_fields(c.name)} if c.name in facts.class_map else set()
        for f in c.fields:
            check_type(f.type, field_ref(c.name, f.name))
        for m in c.methods:
            mref = method_ref(c.name, m.name, m.arity)
            if m.is_constructor and m.name != c.name:
                out.append(Violation("ConstructorName", mref, "constructor name must equal class name"))
            for i, p in enumerate(m.params):
                check_type(p, f"{mref}.params[{i}]")
            check_type(m.return_type, f"{mref}.returns")
            if m.constructor_effects is not None:
                for k in sorted(set(m.constructor_effects.default_values) - field_names):
                    out.append(Violation("UnknownDefaultField", f"{mref}.defaults.{k}"))
    for e in facts.calls:
        for ref in (e.caller, e.callee):
            if ref not in facts.method_map:
                out.append(Violation("DanglingReference", f"calls[{e.caller}->{e.callee}]",
                                     f"undeclared method {ref!r}"))
    for e in facts.accesses:
        if e.accessor not in facts.method_map:
            out.append(Violation("DanglingReference", f"accesses[{e.accessor}->{e.field}]",
                                 f"undeclared method {e.accessor!r}"))
        if e.field not in facts.field_map:
            out.append(Violation("DanglingReference", f"accesses[{e.accessor}->{e.field}]",
                                 f"undeclared field {e.field!r}"))
    return out


def cross_cluster_edges(facts: CodeFacts) -> list[tuple[Edge, str, str]]:
    out = []
    for e in facts.edges():
        src, dst = facts.cluster_of(e.source), facts.cluster_of(e.target)
        if src != dst:
            out.append((e, src, dst))
    out.sort(key=lambda t: (t[0].source, t[0].target, isinstance(t[0], AccessEdge)))
    return out
