"""Object heap, scenario scripts, and the monolith reference interpreter.

Scenarios are small programs over heap objects (create, assign fields, alias,
call methods).  Method bodies are declarative effect lists stored with the
method in the facts document.  The monolith interpreter runs everything in one
shared heap and one static store; its final state is the ground truth the
distributed protocols are compared against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from .facts import (
    CodeFacts,
    Literal,
    Resource,
    SchemaError,
    TypeRef,
    field_ref,
    literal_to_json,
    parse_arg,
    parse_literal,
)

MONOLITH = "monolith"
MAX_CALL_DEPTH = 64


class BindingError(ValueError):
    """A scenario uses a variable before defining it."""


class SimulationError(RuntimeError):
    pass


class RuntimeBindingError(SimulationError):
    """Null dereference or missing member while executing."""


# ---------------------------------------------------------------------------
# Values and heaps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    oid: int


@dataclass(frozen=True, order=True)
class Gid:
    owner_cluster: str
    serial: int

    def __str__(self) -> str:
        return f"{self.owner_cluster}#{self.serial}"


@dataclass(frozen=True)
class RemoteRef:
    gid: Gid


Value = Union[Literal, Ref, RemoteRef]


def is_ref(v: Any) -> bool:
    return isinstance(v, (Ref, RemoteRef))


@dataclass
class HeapObject:
    oid: int
    class_name: str
    fields: dict


class Heap:
    def __init__(self):
        self.objects: dict[int, HeapObject] = {}
        self.singletons: dict[str, int] = {}
        self._next = 1

    def alloc(self, class_name: str, fields: dict) -> int:
        oid = self._next
        self._next += 1
        self.objects[oid] = HeapObject(oid, class_name, fields)
        return oid

    def get(self, oid: int) -> HeapObject:
        try:
            return self.objects[oid]
        except KeyError:
            raise RuntimeBindingError(f"dangling object id {oid}") from None

    def count_of(self, class_name: str) -> int:
        return sum(1 for o in self.objects.values() if o.class_name == class_name)

    def __len__(self) -> int:
        return len(self.objects)


def singleton_counter(class_name: str) -> str:
    return f"instances:{class_name}"


def default_construct(facts: CodeFacts, class_name: str, heap: Heap, counters: dict,
                      honor_singleton: bool = True) -> int:
    """Allocate an instance the way its no-arg constructor would.

    With ``honor_singleton`` a singleton class that already has an instance in
    ``heap`` yields the existing object and nothing fires.  Deserializers pass
    False, which is the bypass being modelled.
    """
    cls = facts.class_map[class_name]
    if honor_singleton and cls.singleton_like and class_name in heap.singletons:
        return heap.singletons[class_name]
    values = {f.name: None for f in facts.instance_fields(class_name)}
    ctor = cls.default_constructor()
    model = ctor.constructor_effects if ctor is not None else None
    if model is not None:
        values.update(model.default_values)
        if model.side_effect_counter_name and model.counter_delta:
            name = model.side_effect_counter_name
            counters[name] = counters.get(name, 0) + model.counter_delta
    oid = heap.alloc(class_name, values)
    if cls.singleton_like:
        label = singleton_counter(class_name)
        counters[label] = counters.get(label, 0) + 1
        heap.singletons.setdefault(class_name, oid)
    return oid


# ---------------------------------------------------------------------------
# Scenario scripts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class New:
    var: str
    class_name: str


@dataclass(frozen=True)
class SetField:
    path: str
    value: Literal


@dataclass(frozen=True)
class SetRef:
    path: str
    target: Optional[str]


@dataclass(frozen=True)
class Alias:
    var: str
    path: str


@dataclass(frozen=True)
class Call:
    method: str
    target: Optional[str] = None
    class_name: Optional[str] = None
    args: tuple = ()
    capture: Optional[str] = None


@dataclass(frozen=True)
class AssertEq:
    path: str
    value: Literal


Step = Union[New, SetField, SetRef, Alias, Call, AssertEq]


@dataclass(frozen=True)
class ScenarioScript:
    steps: tuple = ()
    context: Optional[str] = None
    name: str = "scenario"

    def __len__(self) -> int:
        return len(self.steps)


_STEP_KEYS = {
    "new": ({"var", "class"}, set()),
    "set": ({"path", "value"}, set()),
    "setref": ({"path", "target"}, set()),
    "alias": ({"var", "path"}, set()),
    "call": ({"method"}, {"target", "class", "args", "capture"}),
    "assert": ({"path", "value"}, set()),
}


def _step_from_json(obj: Any, where: str) -> Step:
    if not isinstance(obj, dict) or "op" not in obj:
        raise SchemaError(f"{where}: step needs an 'op'")
    op = obj["op"]
    if op not in _STEP_KEYS:
        raise SchemaError(f"{where}: unknown op {op!r}")
    required, optional = _STEP_KEYS[op]
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"{where}: missing {sorted(missing)}")
    extra = obj.keys() - required - optional - {"op"}
    if extra:
        raise SchemaError(f"{where}: unknown key(s) {sorted(extra)}")
    if op == "new":
        return New(obj["var"], obj["class"])
    if op == "set":
        return SetField(obj["path"], parse_literal(obj["value"], where))
    if op == "setref":
        return SetRef(obj["path"], obj["target"])
    if op == "alias":
        return Alias(obj["var"], obj["path"])
    if op == "assert":
        return AssertEq(obj["path"], parse_literal(obj["value"], where))
    if ("target" in obj) == ("class" in obj):
        raise SchemaError(f"{where}: call needs exactly one of 'target' or 'class'")
    args = tuple(parse_arg(a, f"{where}.args[{i}]") for i, a in enumerate(obj.get("args", [])))
    return Call(obj["method"], obj.get("target"), obj.get("class"), args, obj.get("capture"))


def step_to_json(step: Step) -> dict:
    if isinstance(step, New):
        return {"op": "new", "var": step.var, "class": step.class_name}
    if isinstance(step, SetField):
        return {"op": "set", "path": step.path, "value": literal_to_json(step.value)}
    if isinstance(step, SetRef):
        return {"op": "setref", "path": step.path, "target": step.target}
    if isinstance(step, Alias):
        return {"op": "alias", "var": step.var, "path": step.path}
    if isinstance(step, AssertEq):
        return {"op": "assert", "path": step.path, "value": literal_to_json(step.value)}
    out: dict[str, Any] = {"op": "call", "method": step.method}
    if step.target is not None:
        out["target"] = step.target
    else:
        out["class"] = step.class_name
    out["args"] = [{kind: literal_to_json(x) if kind == "value" else x} for kind, x in step.args]
    if step.capture is not None:
        out["capture"] = step.capture
    return out


def scenario_to_json(script: ScenarioScript) -> dict:
    out: dict[str, Any] = {"name": script.name, "steps": [step_to_json(s) for s in script.steps]}
    if script.context is not None:
        out["context"] = script.context
    return out


def scenario_from_json(doc: Any, facts: Optional[CodeFacts] = None, name: str = "scenario") -> ScenarioScript:
    context = None
    if isinstance(doc, dict):
        extra = doc.keys() - {"name", "context", "steps"}
        if extra or "steps" not in doc:
            raise SchemaError(f"scenario object needs 'steps' and allows only name/context (got {sorted(doc)})")
        name = doc.get("name", name)
        context = doc.get("context")
        doc = doc["steps"]
    if not isinstance(doc, list):
        raise SchemaError("scenario must be an array of steps")
    script = ScenarioScript(tuple(_step_from_json(s, f"steps[{i}]") for i, s in enumerate(doc)), context, name)
    if facts is not None:
        check_scenario(facts, script)
    return script


def parse_scenario(text: Union[str, bytes], facts: Optional[CodeFacts] = None,
                   name: str = "scenario") -> ScenarioScript:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        from .facts import FactsSyntaxError

        raise FactsSyntaxError(f"malformed scenario document: {exc}") from exc
    return scenario_from_json(doc, facts, name)


def load_scenario(path, facts: Optional[CodeFacts] = None) -> ScenarioScript:
    import os

    with open(path, encoding="utf-8") as fh:
        stem = os.path.splitext(os.path.basename(path))[0]
        return parse_scenario(fh.read(), facts, name=stem)


# Static typing of scenario variables: a declared class name, "?" for
# primitives/unknown, or None for null.
_PRIM = "?"


def _path_type(facts: CodeFacts, env: dict, path: str, where: str) -> Optional[str]:
    segs = path.split(".")
    if segs[0] not in env:
        raise BindingError(f"{where}: variable {segs[0]!r} used before definition")
    cur = env[segs[0]]
    for seg in segs[1:]:
        if cur is None or cur == _PRIM:
            # an untyped value may still hold an object; defer to runtime
            return _PRIM
        fields = {f.name: f for f in facts.instance_fields(cur)}
        if seg not in fields:
            raise SchemaError(f"{where}: class {cur!r} has no field {seg!r}")
        t = fields[seg].type
        cur = t.class_name if t.is_declared else _PRIM
    return cur


def _type_name(t: Optional[TypeRef]) -> Optional[str]:
    if t is None:
        return None
    return t.class_name if t.is_declared else _PRIM


def check_scenario(facts: CodeFacts, script: ScenarioScript) -> None:
    """Reject undefined variables and unknown classes, fields, or methods."""
    if script.context is not None and script.context not in facts.clusters:
        raise SchemaError(f"scenario context {script.context!r} is not a cluster")
    env: dict[str, Optional[str]] = {}
    for i, step in enumerate(script.steps):
        where = f"steps[{i}]"
        if isinstance(step, New):
            if step.class_name not in facts.class_map:
                raise SchemaError(f"{where}: unknown class {step.class_name!r}")
            env[step.var] = step.class_name
        elif isinstance(step, (SetField, AssertEq)):
            _path_type(facts, env, step.path, where)
        elif isinstance(step, SetRef):
            _path_type(facts, env, step.path, where)
            if step.target is not None:
                _path_type(facts, env, step.target, where)
        elif isinstance(step, Alias):
            env[step.var] = _path_type(facts, env, step.path, where)
        elif isinstance(step, Call):
            for kind, x in step.args:
                if kind == "ref":
                    _path_type(facts, env, x, where)
            if step.class_name is not None:
                if step.class_name not in facts.class_map:
                    raise SchemaError(f"{where}: unknown class {step.class_name!r}")
                owner = step.class_name
            else:
                owner = _path_type(facts, env, step.target, where)
            ret = None
            if owner not in (None, _PRIM):
                found = facts.resolve_method(owner, step.method, len(step.args))
                if found is None:
                    raise SchemaError(f"{where}: {owner} has no method {step.method}/{len(step.args)}")
                ret = _type_name(found[1].return_type)
            if step.capture is not None:
                env[step.capture] = ret if ret is not None else _PRIM


def default_context(facts: CodeFacts) -> str:
    """Cluster holding a static ``main``, else the first cluster."""
    for cls in facts.classes:
        for m in cls.methods:
            if m.name == "main" and m.is_static:
                return cls.cluster
    return facts.clusters[0]


# ---------------------------------------------------------------------------
# Final state and fingerprints
# ---------------------------------------------------------------------------


@dataclass
class FinalState:
    heaps: dict = field(default_factory=dict)  # context -> {oid: HeapObject}
    static_store: dict = field(default_factory=dict)  # context -> {"C.f": value}
    counters: dict = field(default_factory=dict)
    roots: dict = field(default_factory=dict)
    root_context: str = MONOLITH
    registry: dict = field(default_factory=dict)  # Gid -> (context, oid)
    static_view: dict = field(default_factory=dict)
    assertion_failures: list = field(default_factory=list)
    error: Optional[str] = None

    def deref(self, context: str, v: Value) -> tuple[str, int]:
        if isinstance(v, Ref):
            return (context, v.oid)
        loc = self.registry.get(v.gid)
        if loc is None:
            raise KeyError(f"unknown gid {v.gid}")
        return loc

    def object_at(self, loc: tuple[str, int]) -> HeapObject:
        return self.heaps[loc[0]][loc[1]]

    def read_path(self, path: str) -> Value:
        segs = path.split(".")
        v = self.roots[segs[0]]
        ctx = self.root_context
        for seg in segs[1:]:
            if not is_ref(v):
                raise RuntimeBindingError(f"cannot read {seg!r} of non-object in {path!r}")
            ctx, oid = self.deref(ctx, v)
            v = self.heaps[ctx][oid].fields[seg]
        return v

    def resident_objects(self) -> int:
        return sum(len(h) for h in self.heaps.values())

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, Ref):
                return {"ref": v.oid}
            if isinstance(v, RemoteRef):
                return {"gid": str(v.gid)}
            return literal_to_json(v)

        return {
            "root_context": self.root_context,
            "roots": {k: enc(v) for k, v in sorted(self.roots.items())},
            "heaps": {
                ctx: {
                    str(oid): {"class": o.class_name, "fields": {k: enc(x) for k, x in sorted(o.fields.items())}}
                    for oid, o in sorted(heap.items())
                }
                for ctx, heap in sorted(self.heaps.items())
            },
            "static_store": {
                ctx: {k: enc(v) for k, v in sorted(store.items())}
                for ctx, store in sorted(self.static_store.items())
            },
            "static_view": {k: enc(v) for k, v in sorted(self.static_view.items())},
            "counters": dict(sorted(self.counters.items())),
            "assertion_failures": self.assertion_failures,
            "error": self.error,
        }


def _enc_literal(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "b:" + ("true" if v else "false")
    if isinstance(v, int):
        return f"i:{v}"
    if isinstance(v, str):
        return "s:" + json.dumps(v)
    if isinstance(v, Resource):
        return "r:" + json.dumps(v.label)
    raise TypeError(f"not a literal: {v!r}")


def canonical_form(state: FinalState, roots: Optional[list] = None) -> str:
    """Oid-independent text of everything reachable from ``roots``.

    Objects are numbered in BFS order starting from the roots sorted by name;
    a reference to an already-numbered object is written as that number, so
    shared objects (aliases) and duplicated copies encode differently.
    """
    names = sorted(state.roots if roots is None else roots)
    index: dict[tuple, int] = {}
    queue: list[tuple] = []

    def enc(ctx: str, v: Value) -> str:
        if is_ref(v):
            loc = state.deref(ctx, v)
            if loc not in index:
                index[loc] = len(index)
                queue.append(loc)
            return f"@{index[loc]}"
        return _enc_literal(v)

    lines = []
    for name in names:
        lines.append(f"root {name}={enc(state.root_context, state.roots.get(name))}")
    i = 0
    while i < len(queue):
        loc = queue[i]
        obj = state.object_at(loc)
        parts = [f"{k}={enc(loc[0], obj.fields[k])}" for k in sorted(obj.fields)]
        lines.append(f"#{i} {obj.class_name} " + ",".join(parts))
        i += 1
    for key in sorted(state.static_view):
        v = state.static_view[key]
        if v is not None:
            lines.append(f"static {key}={_enc_literal(v) if not is_ref(v) else 'ref'}")
    for key in sorted(state.counters):
        if state.counters[key]:
            lines.append(f"counter {key}={state.counters[key]}")
    if state.error:
        lines.append(f"error {state.error}")
    return "\n".join(lines) + "\n"


def heap_fingerprint(state: FinalState, roots: Optional[list] = None) -> str:
    return hashlib.sha256(canonical_form(state, roots).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------


@dataclass
class Frame:
    service: str
    vars: dict
    label: str = "main"


@dataclass
class CallSite:
    """A resolved invocation as seen from the calling frame."""

    frame: Frame
    decl_class: str
    method: Any  # MethodDecl
    this: Optional[Value]
    this_loc: Optional[str]
    args: list
    arg_locs: list
    runtime_class: Optional[str] = None


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class Interpreter:
    """Executes scenario steps and method effects; storage is left to subclasses."""

    def __init__(self, facts: CodeFacts):
        self.facts = facts
        self.stack: list[Frame] = []
        self.assertion_failures: list = []

    # -- storage hooks ---------------------------------------------------
    def new_object(self, frame: Frame, class_name: str) -> Value:
        raise NotImplementedError

    def read_field(self, frame: Frame, ref: Value, name: str) -> Value:
        raise NotImplementedError

    def write_field(self, frame: Frame, ref: Value, name: str, value: Value) -> None:
        raise NotImplementedError

    def read_static(self, frame: Frame, owner: str, name: str) -> Value:
        raise NotImplementedError

    def write_static(self, frame: Frame, owner: str, name: str, value: Value) -> None:
        raise NotImplementedError

    def class_of(self, frame: Frame, ref: Value) -> str:
        raise NotImplementedError

    def invoke(self, site: CallSite) -> Value:
        return self.run_method(site.frame.service, site, site.this, site.args)

    # -- evaluation -------------------------------------------------------
    def eval_path(self, frame: Frame, path: str) -> Value:
        segs = path.split(".")
        if segs[0] not in frame.vars:
            raise RuntimeBindingError(f"{frame.label}: unbound variable {segs[0]!r}")
        v = frame.vars[segs[0]]
        for seg in segs[1:]:
            if not is_ref(v):
                raise RuntimeBindingError(f"{frame.label}: null dereference reading {path!r}")
            v = self.read_field(frame, v, seg)
        return v

    def assign(self, frame: Frame, path: str, value: Value) -> None:
        segs = path.split(".")
        if len(segs) == 1:
            frame.vars[path] = value
            return
        holder = self.eval_path(frame, ".".join(segs[:-1]))
        if not is_ref(holder):
            raise RuntimeBindingError(f"{frame.label}: null dereference writing {path!r}")
        self.write_field(frame, holder, segs[-1], value)

    def _static_owner(self, class_name: str, name: str) -> str:
        owner = self.facts.static_owner(class_name, name)
        if owner is None:
            raise RuntimeBindingError(f"{class_name} has no static field {name!r}")
        return owner

    def call(self, frame: Frame, method: str, target: Optional[str], class_name: Optional[str],
             args, capture: Optional[str]) -> Value:
        values, locs = [], []
        for kind, x in args:
            if kind == "ref":
                values.append(self.eval_path(frame, x))
                locs.append(x)
            else:
                values.append(x)
                locs.append(None)
        this = None
        if target is not None:
            this = self.eval_path(frame, target)
            if not is_ref(this):
                raise RuntimeBindingError(f"{frame.label}: call {method} on null {target!r}")
            runtime = self.class_of(frame, this)
        else:
            runtime = class_name
        found = self.facts.resolve_method(runtime, method, len(values))
        if found is None:
            raise RuntimeBindingError(f"{runtime} has no method {method}/{len(values)}")
        decl, m = found
        site = CallSite(frame, decl.name, m, this, target, values, locs, runtime)
        ret = self.invoke(site)
        if capture is not None:
            self.assign(frame, capture, ret)
        return ret

    def run_method(self, service: str, site: CallSite, this: Optional[Value], args: list) -> Value:
        if len(self.stack) >= MAX_CALL_DEPTH:
            raise SimulationError("call depth limit exceeded")
        m = site.method
        env = {"this": this}
        env.update({f"p{i}": a for i, a in enumerate(args)})
        frame = Frame(service, env, f"{site.decl_class}.{m.name}")
        self.stack.append(frame)
        try:
            for eff in m.effects:
                self.exec_effect(frame, eff)
        except _Return as r:
            return r.value
        finally:
            self.stack.pop()
        return None

    def exec_effect(self, frame: Frame, eff: dict) -> None:
        op = eff["do"]
        if op == "set":
            self.assign(frame, eff["path"], parse_literal(eff["value"]))
        elif op == "setref":
            src = eff.get("from")
            self.assign(frame, eff["path"], None if src is None else self.eval_path(frame, src))
        elif op in ("let", "rebind"):
            frame.vars[eff["var"]] = self.eval_path(frame, eff["from"])
        elif op == "set_static":
            owner = self._static_owner(eff["class"], eff["field"])
            if "from" in eff:
                value = self.eval_path(frame, eff["from"])
            else:
                value = parse_literal(eff.get("value"))
            self.write_static(frame, owner, eff["field"], value)
        elif op == "get_static":
            owner = self._static_owner(eff["class"], eff["field"])
            frame.vars[eff["var"]] = self.read_static(frame, owner, eff["field"])
        elif op == "new":
            frame.vars[eff["var"]] = self.new_object(frame, eff["class"])
        elif op == "return":
            if "from" in eff:
                raise _Return(self.eval_path(frame, eff["from"]))
            raise _Return(parse_literal(eff.get("value")))
        elif op == "call":
            args = [parse_arg(a, "effect") for a in eff.get("args", [])]
            self.call(frame, eff["method"], eff.get("target"), eff.get("class"), args, eff.get("capture"))
        else:
            raise SimulationError(f"unknown effect {op!r}")

    def exec_step(self, frame: Frame, step: Step) -> None:
        if isinstance(step, New):
            frame.vars[step.var] = self.new_object(frame, step.class_name)
        elif isinstance(step, SetField):
            self.assign(frame, step.path, step.value)
        elif isinstance(step, SetRef):
            self.assign(frame, step.path, None if step.target is None else self.eval_path(frame, step.target))
        elif isinstance(step, Alias):
            frame.vars[step.var] = self.eval_path(frame, step.path)
        elif isinstance(step, Call):
            self.call(frame, step.method, step.target, step.class_name, step.args, step.capture)
        elif isinstance(step, AssertEq):
            actual = self.eval_path(frame, step.path)
            if actual != step.value or type(actual) is not type(step.value):
                self.assertion_failures.append({
                    "path": step.path,
                    "expected": literal_to_json(step.value),
                    "actual": literal_to_json(actual) if not is_ref(actual) else "<object>",
                })

    def run_steps(self, script: ScenarioScript, context: str) -> tuple[Frame, Optional[str]]:
        top = Frame(context, {}, "main")
        self.stack = [top]
        error = None
        try:
            for step in script.steps:
                self.exec_step(top, step)
        except SimulationError as exc:
            error = f"{type(exc).__name__}: {exc}"
        self.stack = [top]
        return top, error


class MonolithInterpreter(Interpreter):
    def __init__(self, facts: CodeFacts):
        super().__init__(facts)
        self.heap = Heap()
        self.statics: dict[str, Value] = {}
        self.counters: dict[str, int] = {}

    def new_object(self, frame, class_name):
        return Ref(default_construct(self.facts, class_name, self.heap, self.counters))

    def _obj(self, ref: Value) -> HeapObject:
        if not isinstance(ref, Ref):
            raise RuntimeBindingError(f"monolith cannot hold {ref!r}")
        return self.heap.get(ref.oid)

    def read_field(self, frame, ref, name):
        obj = self._obj(ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        return obj.fields[name]

    def write_field(self, frame, ref, name, value):
        obj = self._obj(ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        obj.fields[name] = value

    def read_static(self, frame, owner, name):
        return self.statics.get(field_ref(owner, name))

    def write_static(self, frame, owner, name, value):
        self.statics[field_ref(owner, name)] = value

    def class_of(self, frame, ref):
        return self._obj(ref).class_name


def run_monolith(facts: CodeFacts, scenario: ScenarioScript) -> FinalState:
    interp = MonolithInterpreter(facts)
    top, error = interp.run_steps(scenario, MONOLITH)
    return FinalState(
        heaps={MONOLITH: interp.heap.objects},
        static_store={MONOLITH: dict(interp.statics)},
        counters=dict(interp.counters),
        roots=dict(top.vars),
        root_context=MONOLITH,
        static_view=dict(interp.statics),
        assertion_failures=interp.assertion_failures,
        error=error,
    )
