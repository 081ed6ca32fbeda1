"""Seeded random facts and scenarios for fuzzing the engines and the isolator.

Generated programs always terminate: a method of class ``K<i>`` only calls
methods declared on classes with a larger index, and subclasses always have a
larger index than their parents, so virtual dispatch cannot loop back.
"""

from __future__ import annotations

import random
from typing import Optional

from .facts import (
    PRIMITIVE,
    AccessEdge,
    AccessMode,
    CallEdge,
    ClassDecl,
    CodeFacts,
    ConstructorModel,
    FieldDecl,
    MethodDecl,
    TypeRef,
    Visibility,
    build_facts,
    declared,
    field_ref,
    method_ref,
)
from .simcore import (
    Alias,
    AssertEq,
    Call,
    New,
    ScenarioScript,
    SetField,
    SetRef,
    check_scenario,
)

DEFAULT_SEED = 20240101


class _Draft:
    """Mutable class under construction."""

    def __init__(self, index: int, cluster: str, parent: Optional["_Draft"]):
        self.index = index
        self.name = f"K{index}"
        self.cluster = cluster
        self.parent = parent
        self.fields: list[FieldDecl] = []
        self.methods: list[MethodDecl] = []
        self.singleton = False
        self.model: Optional[ConstructorModel] = None

    def chain(self) -> list["_Draft"]:
        out, cur = [], self
        while cur is not None:
            out.append(cur)
            cur = cur.parent
        return out

    def instance_fields(self) -> list[tuple[str, FieldDecl]]:
        """(declaring class, field) pairs visible on instances."""
        return [(d.name, f) for d in reversed(self.chain()) for f in d.fields if not f.is_static]


def _type_choice(rng: random.Random, drafts: list) -> TypeRef:
    if rng.random() < 0.5:
        return PRIMITIVE
    return declared(rng.choice(drafts).name)


def _subtypes(drafts: list, name: str) -> set:
    out = {name}
    changed = True
    while changed:
        changed = False
        for d in drafts:
            if d.parent is not None and d.parent.name in out and d.name not in out:
                out.add(d.name)
                changed = True
    return out


class _BodyBuilder:
    def __init__(self, rng, drafts, owner: _Draft, method: MethodDecl, calls: list, accesses: list):
        self.rng = rng
        self.drafts = drafts
        self.by_name = {d.name: d for d in drafts}
        self.owner = owner
        self.mref = method_ref(owner.name, method.name, method.arity)
        self.calls = calls
        self.accesses = accesses
        self.env: dict[str, Optional[str]] = {}  # var -> class name or None for primitive
        if not method.is_static:
            self.env["this"] = owner.name
        for i, p in enumerate(method.params):
            self.env[f"p{i}"] = p.class_name if p.is_declared else None
        self.effects: list[dict] = []
        self.counter = 0

    def _obj_vars(self) -> list[str]:
        return sorted(v for v, t in self.env.items() if t is not None)

    def _vars_of(self, class_name: str) -> list[str]:
        ok = _subtypes(self.drafts, class_name)
        return sorted(v for v, t in self.env.items() if t in ok)

    def _fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def _object_of(self, class_name: str) -> str:
        """A variable holding a ``class_name`` object, creating one if needed."""
        cands = self._vars_of(class_name)
        if cands:
            return self.rng.choice(cands)
        var = self._fresh("n")
        self.effects.append({"do": "new", "var": var, "class": class_name})
        self.env[var] = class_name
        return var

    def _access(self, owner: str, name: str, mode: AccessMode) -> None:
        self.accesses.append(AccessEdge(self.mref, field_ref(owner, name), mode))

    def step(self) -> None:
        rng = self.rng
        op = rng.choice(["set", "setref", "set_static", "get_static", "new", "call", "call"])
        objs = self._obj_vars()
        if op == "set" and objs:
            v = rng.choice(objs)
            prims = [(o, f) for o, f in self.by_name[self.env[v]].instance_fields() if not f.type.is_declared]
            if prims:
                o, f = rng.choice(prims)
                self.effects.append({"do": "set", "path": f"{v}.{f.name}", "value": rng.randint(0, 9)})
                self._access(o, f.name, AccessMode.WRITE)
        elif op == "setref" and objs:
            v = rng.choice(objs)
            refs = [(o, f) for o, f in self.by_name[self.env[v]].instance_fields() if f.type.is_declared]
            if refs:
                o, f = rng.choice(refs)
                sources = self._vars_of(f.type.class_name)
                src = rng.choice(sources) if sources and rng.random() < 0.8 else None
                self.effects.append({"do": "setref", "path": f"{v}.{f.name}", "from": src})
                self._access(o, f.name, AccessMode.WRITE)
        elif op in ("set_static", "get_static"):
            statics = [(d.name, f) for d in self.drafts for f in d.fields if f.is_static]
            if statics:
                o, f = rng.choice(statics)
                if op == "set_static":
                    self.effects.append({"do": "set_static", "class": o, "field": f.name, "value": rng.randint(0, 9)})
                    self._access(o, f.name, AccessMode.WRITE)
                else:
                    var = self._fresh("g")
                    self.effects.append({"do": "get_static", "var": var, "class": o, "field": f.name})
                    self.env[var] = None
                    self._access(o, f.name, AccessMode.READ)
        elif op == "new":
            d = rng.choice(self.drafts)
            var = self._fresh("n")
            self.effects.append({"do": "new", "var": var, "class": d.name})
            self.env[var] = d.name
        elif op == "call":
            self._call()

    def _call(self) -> None:
        rng = self.rng
        later = [d for d in self.drafts if d.index > self.owner.index]
        options = []
        for d in later:
            for m in d.methods:
                if m.is_constructor:
                    continue
                if m.is_static:
                    options.append((d, m, None))
                else:
                    targets = self._vars_of(d.name)
                    if targets:
                        options.append((d, m, rng.choice(targets)))
        if not options:
            return
        d, m, target = rng.choice(options)
        args = []
        for p in m.params:
            if p.is_declared:
                args.append({"ref": self._object_of(p.class_name)})
            else:
                args.append({"value": rng.randint(0, 9)})
        eff = {"do": "call", "method": m.name, "args": args}
        if target is None:
            eff["class"] = d.name
        else:
            eff["target"] = target
        if m.return_type is not None:
            var = self._fresh("r")
            eff["capture"] = var
            self.env[var] = m.return_type.class_name if m.return_type.is_declared else None
        self.effects.append(eff)
        self.calls.append(CallEdge(self.mref, method_ref(d.name, m.name, m.arity)))

    def finish(self, ret: Optional[TypeRef]) -> tuple:
        if ret is not None:
            if ret.is_declared:
                self.effects.append({"do": "return", "from": self._object_of(ret.class_name)})
            else:
                self.effects.append({"do": "return", "value": self.rng.randint(0, 9)})
        return tuple(self.effects)


def random_facts(rng: random.Random, min_clusters: int = 2, max_clusters: int = 5,
                 max_classes: Optional[int] = None) -> CodeFacts:
    k = rng.randint(min_clusters, max_clusters)
    clusters = [f"s{i}" for i in range(1, k + 1)]
    n = rng.randint(k, max_classes if max_classes is not None else k + 4)
    drafts: list[_Draft] = []
    for i in range(n):
        cluster = clusters[i] if i < k else rng.choice(clusters)
        parent = rng.choice(drafts) if drafts and rng.random() < 0.2 else None
        drafts.append(_Draft(i, cluster, parent))
    for d in drafts:
        for j in range(rng.randint(1, 3)):
            vis = Visibility.PRIVATE if rng.random() < 0.2 else Visibility.PUBLIC
            d.fields.append(FieldDecl(f"f{d.index}_{j}", _type_choice(rng, drafts), False, vis))
        if rng.random() < 0.3:
            d.fields.append(FieldDecl(f"s{d.index}", PRIMITIVE, True))
        d.singleton = rng.random() < 0.1
        if rng.random() < 0.3:
            prims = [f for f in d.fields if not f.is_static and not f.type.is_declared]
            defaults = {f.name: rng.randint(0, 99) for f in prims[:1]}
            counter = f"ctr{d.index}" if rng.random() < 0.5 else None
            d.model = ConstructorModel(defaults, counter, 1 if counter else 0)

    # signatures first so bodies can call any later class
    sigs: dict[str, list] = {}
    for d in drafts:
        out = []
        if d.model is not None:
            out.append(MethodDecl(d.name, (), None, is_constructor=True, constructor_effects=d.model))
        for j in range(rng.randint(1, 3)):
            params = tuple(_type_choice(rng, drafts) for _ in range(rng.randint(0, 2)))
            ret = None if rng.random() < 0.4 else _type_choice(rng, drafts)
            out.append(MethodDecl(f"m{d.index}_{j}", params, ret, is_static=rng.random() < 0.3))
        if d.parent is not None and rng.random() < 0.5:
            inherited = [m for m in sigs[d.parent.name] if not m.is_constructor and not m.is_static]
            if inherited:
                m = rng.choice(inherited)
                out.append(MethodDecl(m.name, m.params, m.return_type))
        sigs[d.name] = out
        d.methods = out

    calls: list[CallEdge] = []
    accesses: list[AccessEdge] = []
    for d in reversed(drafts):
        bodies = []
        for m in sigs[d.name]:
            if m.is_constructor:
                bodies.append(m)
                continue
            b = _BodyBuilder(rng, drafts, d, m, calls, accesses)
            for _ in range(rng.randint(0, 4)):
                b.step()
            bodies.append(MethodDecl(m.name, m.params, m.return_type, False, m.is_static, None,
                                     b.finish(m.return_type)))
        d.methods = bodies
        # extra intra-class wiring so isolation sees connected and split members
        members = [m for m in bodies if not m.is_constructor]
        for m in members:
            if rng.random() < 0.3 and d.fields:
                f = rng.choice(d.fields)
                accesses.append(AccessEdge(method_ref(d.name, m.name, m.arity), field_ref(d.name, f.name),
                                           rng.choice(list(AccessMode))))
    classes = [
        ClassDecl(d.name, d.cluster, tuple(d.fields), tuple(d.methods), d.singleton, False,
                  d.parent.name if d.parent else None)
        for d in drafts
    ]
    return build_facts(classes, calls, accesses, clusters)


def random_scenario(rng: random.Random, facts: CodeFacts, length: int = 10, name: str = "random") -> ScenarioScript:
    env: dict[str, Optional[str]] = {}
    steps: list = []
    names = [c.name for c in facts.classes]

    def subtypes(cls: str) -> set:
        return {cls, *facts.subclasses(cls)}

    def objs(cls: Optional[str] = None) -> list[str]:
        ok = None if cls is None else subtypes(cls)
        return sorted(v for v, t in env.items() if t is not None and (ok is None or t in ok))

    assigned: set = set()  # (var, field) given a non-null object by the script
    counter = 0

    def object_of(cls: str) -> str:
        nonlocal counter
        cands = objs(cls)
        if cands:
            return rng.choice(cands)
        counter += 1
        var = f"v{counter}"
        steps.append(New(var, cls))
        env[var] = cls
        return var

    for _ in range(length):
        counter += 1
        op = rng.choice(["new", "new", "set", "setref", "alias", "call", "call", "call", "assert"])
        have = objs()
        if op == "new" or not have:
            cls = rng.choice(names)
            var = f"v{counter}"
            steps.append(New(var, cls))
            env[var] = cls
            continue
        v = rng.choice(have)
        fields = facts.instance_fields(env[v])
        if op in ("set", "assert"):
            prims = [f for f in fields if not f.type.is_declared]
            if prims:
                f = rng.choice(prims)
                cls = SetField if op == "set" else AssertEq
                steps.append(cls(f"{v}.{f.name}", rng.randint(0, 9)))
        elif op == "setref":
            refs = [f for f in fields if f.type.is_declared]
            if refs:
                f = rng.choice(refs)
                if rng.random() < 0.1:
                    steps.append(SetRef(f"{v}.{f.name}", None))
                    assigned.discard((v, f.name))
                else:
                    steps.append(SetRef(f"{v}.{f.name}", object_of(f.type.class_name)))
                    assigned.add((v, f.name))
        elif op == "alias":
            refs = [f for f in fields if f.type.is_declared and (v, f.name) in assigned]
            if refs:
                f = rng.choice(refs)
                var = f"v{counter}"
                steps.append(Alias(var, f"{v}.{f.name}"))
                env[var] = f.type.class_name
        else:
            options = []
            for c in facts.classes:
                for m in c.methods:
                    if m.is_constructor:
                        continue
                    if m.is_static:
                        options.append((c.name, m, None))
                    else:
                        targets = objs(c.name)
                        if targets:
                            options.append((c.name, m, rng.choice(targets)))
            if not options:
                continue
            cls, m, target = rng.choice(options)
            args = []
            for p in m.params:
                if p.is_declared:
                    args.append(("ref", object_of(p.class_name)))
                else:
                    args.append(("value", rng.randint(0, 9)))
            # the call may rewrite any field, so earlier assignments are no longer known
            assigned.clear()
            capture = None
            if m.return_type is not None:
                capture = f"v{counter}"
            if target is None:
                steps.append(Call(m.name, class_name=cls, args=tuple(args), capture=capture))
            else:
                steps.append(Call(m.name, target=target, args=tuple(args), capture=capture))
            if capture is not None:
                env[capture] = m.return_type.class_name if m.return_type.is_declared else None
    script = ScenarioScript(tuple(steps), rng.choice(list(facts.clusters)), name)
    check_scenario(facts, script)
    return script


def random_case(seed: int) -> tuple[CodeFacts, ScenarioScript]:
    rng = random.Random(seed)
    facts = random_facts(rng)
    return facts, random_scenario(rng, facts, length=rng.randint(4, 14), name=f"random-{seed}")
