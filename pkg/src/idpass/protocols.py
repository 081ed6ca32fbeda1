"""Distributed execution of scenarios: ID passing and JSON passing.

Each cluster becomes a :class:`ServiceState` with its own heap and static
store.  Services talk through synchronous in-memory calls that are counted in
payload units: one unit per tree node, per field entry, per primitive, or per
global id token.

The ID engine keeps every object in the service that created it and ships
only ids, so its final state must equal the monolith's.  The JSON engine
copies object trees back and forth and rebinds only the variables named at
the call site; the loss modes it exhibits are reported as findings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .facts import (
    PRIMITIVE,
    ClassDecl,
    CodeFacts,
    FieldDecl,
    MethodDecl,
    Resource,
    Visibility,
    build_facts,
    CallEdge,
    declared,
    field_ref,
    ref_class,
    literal_to_json,
)
from .simcore import (
    Alias,
    Call,
    CallSite,
    FinalState,
    Frame,
    Gid,
    Heap,
    HeapObject,
    Interpreter,
    MonolithInterpreter,
    New,
    Ref,
    RemoteRef,
    RuntimeBindingError,
    ScenarioScript,
    SetField,
    SetRef,
    SimulationError,
    default_construct,
    default_context,
    heap_fingerprint,
    is_ref,
)


class UnknownGid(LookupError):
    """A global id is missing from its owner's registry (engine defect)."""


class CycleError(SimulationError):
    def __init__(self, path: str):
        super().__init__(f"reference cycle reached at {path}")
        self.path = path


class Unimplemented(NotImplementedError):
    pass


class Protocol(str, Enum):
    MONOLITH = "monolith"
    ID = "id"
    JSON = "json"
    CACHED_ID = "cached-id"


class FindingCategory(str, Enum):
    STATIC_LOSS = "StaticLoss"
    ALIAS_LOSS = "AliasLoss"
    REFERENCE_REBIND_LOSS = "ReferenceRebindLoss"
    THIS_NOT_UPDATED = "ThisNotUpdated"
    SINGLETON_VIOLATION = "SingletonViolation"
    CONSTRUCTOR_SIDE_EFFECT = "ConstructorSideEffect"
    PRIVATE_EXPOSURE = "PrivateExposure"
    RESOURCE_TRANSFER = "ResourceTransfer"
    CYCLE_ERROR = "CycleError"


# Findings that do not by themselves mean the final state differs.
INFORMATIONAL = frozenset({FindingCategory.PRIVATE_EXPOSURE})


@dataclass(frozen=True)
class Finding:
    category: FindingCategory
    path: str
    monolith_value: Any = None
    protocol_value: Any = None

    @property
    def value_bearing(self) -> bool:
        return self.category not in INFORMATIONAL

    def to_json(self) -> dict:
        return {
            "category": self.category.value,
            "path": self.path,
            "monolith_value": self.monolith_value,
            "protocol_value": self.protocol_value,
        }


class FindingLog:
    """Ordered findings, deduplicated on (category, path)."""

    def __init__(self):
        self.items: list[Finding] = []
        self._seen: set = set()

    def add(self, category: FindingCategory, path: str, monolith_value=None, protocol_value=None) -> None:
        key = (category, path)
        if key not in self._seen:
            self._seen.add(key)
            self.items.append(Finding(category, path, monolith_value, protocol_value))


@dataclass
class Metrics:
    payload_units_sent: int = 0
    payload_units_received: int = 0
    api_calls: int = 0
    resident_objects: int = 0
    per_service: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "api_calls": self.api_calls,
            "payload_units_sent": self.payload_units_sent,
            "payload_units_received": self.payload_units_received,
            "resident_objects_total": self.resident_objects,
        }
        if self.per_service:
            out["per_service"] = {k: v.to_json() for k, v in sorted(self.per_service.items())}
        return out


@dataclass
class ServiceState:
    cluster: str
    heap: Heap = field(default_factory=Heap)
    static_store: dict = field(default_factory=dict)
    registry: dict = field(default_factory=dict)  # Gid -> oid
    counters: dict = field(default_factory=dict)
    metrics: Metrics = field(default_factory=Metrics)
    _gids: dict = field(default_factory=dict)  # oid -> Gid
    _serial: int = 0

    def register(self, oid: int) -> Gid:
        gid = self._gids.get(oid)
        if gid is None:
            self._serial += 1
            gid = Gid(self.cluster, self._serial)
            self._gids[oid] = gid
            self.registry[gid] = oid
        return gid

    def resolve(self, gid: Gid) -> int:
        if gid.owner_cluster != self.cluster or gid not in self.registry:
            raise UnknownGid(str(gid))
        return self.registry[gid]


def partition_services(facts: CodeFacts) -> dict[str, ServiceState]:
    return {c: ServiceState(c) for c in facts.clusters}


def _sum_counters(services: dict) -> dict:
    out: dict[str, int] = {}
    for s in services.values():
        for k, v in s.counters.items():
            out[k] = out.get(k, 0) + v
    return out


def _collect_metrics(services: dict) -> Metrics:
    total = Metrics()
    for name, s in sorted(services.items()):
        s.metrics.resident_objects = len(s.heap)
        total.payload_units_sent += s.metrics.payload_units_sent
        total.payload_units_received += s.metrics.payload_units_received
        total.api_calls += s.metrics.api_calls
        total.resident_objects += s.metrics.resident_objects
        total.per_service[name] = s.metrics
    return total


def _send(src: ServiceState, dst: ServiceState, units: int) -> None:
    src.metrics.payload_units_sent += units
    dst.metrics.payload_units_received += units


# ---------------------------------------------------------------------------
# ID passing
# ---------------------------------------------------------------------------


class IdInterpreter(Interpreter):
    def __init__(self, facts: CodeFacts):
        super().__init__(facts)
        self.services = partition_services(facts)

    def _svc(self, frame: Frame) -> ServiceState:
        return self.services[frame.service]

    def _owner_of_class(self, class_name: str) -> ServiceState:
        return self.services[self.facts.class_map[class_name].cluster]

    def transfer(self, src: ServiceState, dst: ServiceState, v):
        """Re-express a value held by ``src`` as a value ``dst`` can hold."""
        if isinstance(v, Ref):
            v = RemoteRef(src.register(v.oid))
        if isinstance(v, RemoteRef) and v.gid.owner_cluster == dst.cluster:
            return Ref(dst.resolve(v.gid))
        return v

    def locate(self, frame: Frame, v) -> tuple[ServiceState, HeapObject]:
        if isinstance(v, Ref):
            svc = self._svc(frame)
            return svc, svc.heap.get(v.oid)
        if isinstance(v, RemoteRef):
            svc = self.services.get(v.gid.owner_cluster)
            if svc is None:
                raise UnknownGid(str(v.gid))
            return svc, svc.heap.get(svc.resolve(v.gid))
        raise RuntimeBindingError(f"not an object: {v!r}")

    def _remote(self, client: ServiceState, server: ServiceState, sent: int, returned: int) -> None:
        client.metrics.api_calls += 1
        _send(client, server, sent)
        _send(server, client, returned)

    def new_object(self, frame, class_name):
        here = self._svc(frame)
        owner = self._owner_of_class(class_name)
        oid = default_construct(self.facts, class_name, owner.heap, owner.counters)
        owner.register(oid)
        if owner is not here:
            self._remote(here, owner, 0, 1)
        return self.transfer(owner, here, Ref(oid))

    def read_field(self, frame, ref, name):
        here = self._svc(frame)
        owner, obj = self.locate(frame, ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        if owner is not here:
            self._remote(here, owner, 1, 1)
        return self.transfer(owner, here, obj.fields[name])

    def write_field(self, frame, ref, name, value):
        here = self._svc(frame)
        owner, obj = self.locate(frame, ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        if owner is not here:
            self._remote(here, owner, 2, 0)
        obj.fields[name] = self.transfer(here, owner, value)

    def read_static(self, frame, owner_class, name):
        here = self._svc(frame)
        owner = self._owner_of_class(owner_class)
        if owner is not here:
            self._remote(here, owner, 0, 1)
        return self.transfer(owner, here, owner.static_store.get(field_ref(owner_class, name)))

    def write_static(self, frame, owner_class, name, value):
        here = self._svc(frame)
        owner = self._owner_of_class(owner_class)
        if owner is not here:
            self._remote(here, owner, 1, 0)
        owner.static_store[field_ref(owner_class, name)] = self.transfer(here, owner, value)

    def class_of(self, frame, ref):
        return self.locate(frame, ref)[1].class_name

    def invoke(self, site: CallSite):
        here = self._svc(site.frame)
        if site.this is not None:
            server = self.locate(site.frame, site.this)[0]
        else:
            server = self._owner_of_class(site.runtime_class)
        if server is here:
            return self.run_method(here.cluster, site, site.this, site.args)
        sent = (1 if site.this is not None else 0) + len(site.args)
        this = None if site.this is None else self.transfer(here, server, site.this)
        args = [self.transfer(here, server, a) for a in site.args]
        here.metrics.api_calls += 1
        _send(here, server, sent)
        ret = self.run_method(server.cluster, site, this, args)
        _send(server, here, 1 if site.method.return_type is not None else 0)
        return self.transfer(server, here, ret)


def _scenario_context(facts: CodeFacts, scenario: ScenarioScript) -> str:
    return scenario.context if scenario.context is not None else default_context(facts)


def run_id_protocol(facts: CodeFacts, scenario: ScenarioScript, engine=IdInterpreter):
    interp = engine(facts)
    context = _scenario_context(facts, scenario)
    top, error = interp.run_steps(scenario, context)
    services = interp.services
    static_view: dict = {}
    for s in services.values():
        static_view.update(s.static_store)
    state = FinalState(
        heaps={c: s.heap.objects for c, s in services.items()},
        static_store={c: dict(s.static_store) for c, s in services.items()},
        counters=_sum_counters(services),
        roots=dict(top.vars),
        root_context=context,
        registry={g: (c, oid) for c, s in services.items() for g, oid in s.registry.items()},
        static_view=static_view,
        assertion_failures=interp.assertion_failures,
        error=error,
    )
    return state, _collect_metrics(services), []


# ---------------------------------------------------------------------------
# JSON passing
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    class_name: str
    origin: int  # oid in the sending heap, kept only for diagnostics
    path: str
    fields: dict = field(default_factory=dict)  # name -> literal | TreeNode
    exposed: tuple = ()

    def nodes(self) -> list["TreeNode"]:
        """Pre-order node list (iterative: lists can be thousands deep)."""
        out, stack = [], [self]
        while stack:
            node = stack.pop()
            out.append(node)
            kids = [node.fields[k] for k in sorted(node.fields) if isinstance(node.fields[k], TreeNode)]
            stack.extend(reversed(kids))
        return out

    def shape(self) -> tuple:
        """Origin-free structural token sequence, equal for equal trees."""
        tokens: list = []
        stack: list = [self]
        while stack:
            item = stack.pop()
            if not isinstance(item, TreeNode):
                tokens.append(item)
                continue
            tokens.append(("(", item.class_name))
            pending: list = []
            for k in sorted(item.fields):
                v = item.fields[k]
                pending.append(("field", k))
                pending.append(v if isinstance(v, TreeNode) else ("lit", repr(v)))
            pending.append((")",))
            stack.extend(reversed(pending))
        return tuple(tokens)


@dataclass
class SerializedTree:
    root: TreeNode
    size_units: int
    findings: list = field(default_factory=list)

    def origins(self) -> set:
        return {n.origin for n in self.root.nodes()}


def serialize_json(service: ServiceState, root_oid: int, facts: Optional[CodeFacts] = None,
                   label: str = "root") -> SerializedTree:
    """Expand the object graph below ``root_oid`` into a tree.

    Shared objects are copied once per incoming edge.  Raises CycleError when
    an object is reached again while one of its ancestors in the tree.
    """
    log = FindingLog()
    private = set()
    if facts is not None:
        private = {
            (c.name, f.name) for c in facts.classes for f in c.fields if f.visibility is Visibility.PRIVATE
        }
    holder: dict = {}
    on_stack: set = set()
    units = 0
    stack: list = [("enter", root_oid, label, holder, "root")]
    while stack:
        item = stack.pop()
        if item[0] == "exit":
            on_stack.discard(item[1])
            continue
        _, oid, path, parent, key = item
        if oid in on_stack:
            raise CycleError(path)
        on_stack.add(oid)
        obj = service.heap.get(oid)
        node = TreeNode(obj.class_name, oid, path)
        parent[key] = node
        units += 1
        stack.append(("exit", oid))
        children = []
        exposed = []
        for name in sorted(obj.fields):
            v = obj.fields[name]
            units += 1
            sub = f"{path}.{name}"
            if isinstance(v, Ref):
                node.fields[name] = None
                children.append(("enter", v.oid, sub, node.fields, name))
            elif isinstance(v, RemoteRef):
                raise RuntimeBindingError(f"JSON heap holds a global id at {sub}")
            elif isinstance(v, Resource):
                log.add(FindingCategory.RESOURCE_TRANSFER, sub, None, literal_to_json(v))
                node.fields[name] = None
            else:
                node.fields[name] = v
            if (obj.class_name, name) in private and v is not None:
                exposed.append(name)
                log.add(FindingCategory.PRIVATE_EXPOSURE, sub)
        node.exposed = tuple(exposed)
        stack.extend(reversed(children))
    return SerializedTree(holder["root"], units, log.items)


def deserialize_json(service: ServiceState, tree: SerializedTree, facts: CodeFacts,
                     findings: Optional[FindingLog] = None, created: Optional[list] = None,
                     seen_origins: Optional[set] = None, instances_elsewhere=None) -> int:
    """Rebuild ``tree`` in ``service``: constructor per node, then field overwrite.

    ``seen_origins`` may be shared by all trees of one message so that an
    object sent twice (say as caller and as argument) is reported as well.
    ``instances_elsewhere(class_name)`` lets the caller widen the singleton
    check beyond this service's heap.
    """
    log = findings if findings is not None else FindingLog()
    seen_origin: set = seen_origins if seen_origins is not None else set()
    oids: dict[int, int] = {}  # id(node) -> new oid
    for node in tree.root.nodes():
        if node.origin in seen_origin:
            log.add(FindingCategory.ALIAS_LOSS, node.path)
        seen_origin.add(node.origin)
        cls = facts.class_map[node.class_name]
        elsewhere = instances_elsewhere is not None and instances_elsewhere(node.class_name)
        if cls.singleton_like and (service.heap.count_of(node.class_name) > 0 or elsewhere):
            log.add(FindingCategory.SINGLETON_VIOLATION, node.path)
        oid = default_construct(facts, node.class_name, service.heap, service.counters, honor_singleton=False)
        oids[id(node)] = oid
        if created is not None:
            created.append(oid)
        ctor = cls.default_constructor()
        model = ctor.constructor_effects if ctor is not None else None
        if model is not None and model.counter_delta and model.side_effect_counter_name:
            log.add(FindingCategory.CONSTRUCTOR_SIDE_EFFECT, node.path,
                    None, f"{model.side_effect_counter_name}+{model.counter_delta}")
    for node in tree.root.nodes():
        obj = service.heap.get(oids[id(node)])
        for name, v in node.fields.items():
            obj.fields[name] = Ref(oids[id(v)]) if isinstance(v, TreeNode) else v
    return oids[id(tree.root)]


class JsonInterpreter(Interpreter):
    def __init__(self, facts: CodeFacts):
        super().__init__(facts)
        self.services = partition_services(facts)
        self.findings = FindingLog()
        # last value written to each static anywhere: what a shared store would hold
        self.static_truth: dict = {}

    def _svc(self, frame: Frame) -> ServiceState:
        return self.services[frame.service]

    def _obj(self, frame, ref) -> HeapObject:
        if not isinstance(ref, Ref):
            raise RuntimeBindingError(f"not an object: {ref!r}")
        return self._svc(frame).heap.get(ref.oid)

    def _has_instance(self, class_name: str) -> bool:
        return any(s.heap.count_of(class_name) > 0 for s in self.services.values())

    def new_object(self, frame, class_name):
        svc = self._svc(frame)
        if self.facts.class_map[class_name].singleton_like and class_name not in svc.heap.singletons:
            # every service enforces the singleton only against its own heap
            if self._has_instance(class_name):
                self.findings.add(FindingCategory.SINGLETON_VIOLATION, f"{frame.label}.new:{class_name}")
        return Ref(default_construct(self.facts, class_name, svc.heap, svc.counters))

    def read_field(self, frame, ref, name):
        obj = self._obj(frame, ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        return obj.fields[name]

    def write_field(self, frame, ref, name, value):
        obj = self._obj(frame, ref)
        if name not in obj.fields:
            raise RuntimeBindingError(f"{obj.class_name} has no field {name!r}")
        obj.fields[name] = value

    def read_static(self, frame, owner, name):
        key = field_ref(owner, name)
        v = self._svc(frame).static_store.get(key)
        if key in self.static_truth and not is_ref(v) and v != self.static_truth[key]:
            self.findings.add(FindingCategory.STATIC_LOSS, key, _show(self.static_truth[key]), _show(v))
        return v

    def write_static(self, frame, owner, name, value):
        key = field_ref(owner, name)
        self._svc(frame).static_store[key] = value
        if not is_ref(value):
            self.static_truth[key] = value

    def class_of(self, frame, ref):
        return self._obj(frame, ref).class_name

    def invoke(self, site: CallSite):
        here = self._svc(site.frame)
        server = self.services[self.facts.class_map[site.runtime_class].cluster]
        if server is here:
            return self.run_method(here.cluster, site, site.this, site.args)
        return self._remote_call(site, here, server)

    # -- the JSON round trip ---------------------------------------------
    def _ship(self, src: ServiceState, v, label: str):
        """Returns (payload, units); payload is a SerializedTree or a literal."""
        if isinstance(v, Ref):
            tree = serialize_json(src, v.oid, self.facts, label)
            for f in tree.findings:
                self.findings.add(f.category, f.path, f.monolith_value, f.protocol_value)
            return tree, tree.size_units
        if isinstance(v, Resource):
            self.findings.add(FindingCategory.RESOURCE_TRANSFER, label, None, literal_to_json(v))
            return None, 1
        return v, 1

    def _land(self, dst: ServiceState, payload, created: list, seen: set):
        if isinstance(payload, SerializedTree):
            return Ref(deserialize_json(dst, payload, self.facts, self.findings, created, seen,
                                        self._has_instance))
        return payload

    def _remote_call(self, site: CallSite, client: ServiceState, server: ServiceState):
        frame = site.frame
        where = f"{frame.label}->{site.decl_class}.{site.method.name}"
        roots = []  # (label, value, call-site location)
        if site.this is not None:
            roots.append(("this", site.this, site.this_loc))
        roots += [(f"p{i}", v, loc) for i, (v, loc) in enumerate(zip(site.args, site.arg_locs))]
        client.metrics.api_calls += 1
        try:
            request = [self._ship(client, v, f"{where}.{label}") for label, v, _ in roots]
        except CycleError as exc:
            self.findings.add(FindingCategory.CYCLE_ERROR, exc.path)
            return None
        _send(client, server, sum(u for _, u in request))

        server_created: list = []
        request_seen: set = set()
        landed = [self._land(server, p, server_created, request_seen) for p, _ in request]
        this = landed[0] if site.this is not None else None
        args = landed[1:] if site.this is not None else landed
        # the server wrapper keeps its own handles on what it deserialized;
        # modelled as a frame so nested rebinding can see it go stale
        wrapper = Frame(server.cluster, {label: v for (label, _, _), v in zip(roots, landed) if is_ref(v)},
                        f"{where}[wrapper]")
        self.stack.append(wrapper)
        try:
            ret = self.run_method(server.cluster, site, this, args)
        finally:
            self.stack.pop()

        # server answers with the caller, every object argument, and the result
        back_values = [v if isinstance(p, SerializedTree) else None for (p, _), v in zip(request, landed)]
        try:
            response = [
                self._ship(server, v, f"{where}.{label}") if v is not None else (None, 0)
                for (label, _, _), v in zip(roots, back_values)
            ]
            ret_payload, ret_units = self._ship(server, ret, f"{where}.return")
        except CycleError as exc:
            self.findings.add(FindingCategory.CYCLE_ERROR, exc.path)
            return None
        _send(server, client, sum(u for _, u in response) + (ret_units if ret is not None else 0))

        created: list = []
        response_seen: set = set()
        replaced: set = set()
        for (label, _old, loc), (req, _), (resp, _) in zip(roots, request, response):
            if not isinstance(resp, SerializedTree):
                continue
            fresh = self._land(client, resp, created, response_seen)
            if loc == "this" or loc is None:
                if loc == "this" and resp.root.shape() != req.root.shape():
                    self.findings.add(FindingCategory.THIS_NOT_UPDATED, f"{frame.label}.this")
                continue
            self.assign(frame, loc, fresh)
            replaced |= {n.origin for n in req.root.nodes()}
        result = self._land(client, ret_payload, created, response_seen)
        if replaced:
            self._scan_stale(client, frame, replaced, set(created))
        return result

    def _scan_stale(self, svc: ServiceState, current: Frame, replaced: set, fresh: set) -> None:
        """Report variables and live fields still pointing at replaced objects."""
        frames = [f for f in self.stack if f.service == svc.cluster]
        if current not in frames:
            frames.append(current)
        live: list[int] = []
        seen: set = set()
        for f in frames:
            for var in sorted(f.vars):
                v = f.vars[var]
                if not isinstance(v, Ref):
                    continue
                if v.oid in replaced:
                    if var == "this":
                        cat = FindingCategory.THIS_NOT_UPDATED
                    elif f is current:
                        cat = FindingCategory.ALIAS_LOSS
                    else:
                        cat = FindingCategory.REFERENCE_REBIND_LOSS
                    self.findings.add(cat, f"{f.label}.{var}")
                if v.oid not in seen:
                    seen.add(v.oid)
                    live.append(v.oid)
        i = 0
        while i < len(live):
            obj = svc.heap.get(live[i])
            i += 1
            for name in sorted(obj.fields):
                v = obj.fields[name]
                if not isinstance(v, Ref):
                    continue
                if v.oid in replaced and obj.oid not in replaced and obj.oid not in fresh:
                    self.findings.add(FindingCategory.REFERENCE_REBIND_LOSS, f"{obj.class_name}#{obj.oid}.{name}")
                if v.oid not in seen:
                    seen.add(v.oid)
                    live.append(v.oid)

    def check_statics(self, context: str) -> None:
        view = self.services[context].static_store
        for key in sorted(self.static_truth):
            v = view.get(key)
            if v != self.static_truth[key]:
                self.findings.add(FindingCategory.STATIC_LOSS, key, _show(self.static_truth[key]), _show(v))


def _show(v):
    if is_ref(v):
        return "<object>"
    return literal_to_json(v)


def run_json_protocol(facts: CodeFacts, scenario: ScenarioScript):
    interp = JsonInterpreter(facts)
    context = _scenario_context(facts, scenario)
    top, error = interp.run_steps(scenario, context)
    interp.check_statics(context)
    services = interp.services
    state = FinalState(
        heaps={c: s.heap.objects for c, s in services.items()},
        static_store={c: dict(s.static_store) for c, s in services.items()},
        counters=_sum_counters(services),
        roots=dict(top.vars),
        root_context=context,
        static_view=dict(services[context].static_store),
        assertion_failures=interp.assertion_failures,
        error=error,
    )
    return state, _collect_metrics(services), interp.findings.items


def run_monolith_protocol(facts: CodeFacts, scenario: ScenarioScript):
    """Monolith run with the same (state, metrics, findings) shape."""
    interp = MonolithInterpreter(facts)
    from .simcore import MONOLITH

    top, error = interp.run_steps(scenario, MONOLITH)
    state = FinalState(
        heaps={MONOLITH: interp.heap.objects},
        static_store={MONOLITH: dict(interp.statics)},
        counters=dict(interp.counters),
        roots=dict(top.vars),
        root_context=MONOLITH,
        static_view=dict(interp.statics),
        assertion_failures=interp.assertion_failures,
        error=error,
    )
    return state, Metrics(resident_objects=len(interp.heap)), []


def run_protocol(protocol: str, facts: CodeFacts, scenario: ScenarioScript):
    protocol = Protocol(protocol)
    if protocol is Protocol.MONOLITH:
        return run_monolith_protocol(facts, scenario)
    if protocol is Protocol.ID:
        return run_id_protocol(facts, scenario)
    if protocol is Protocol.JSON:
        return run_json_protocol(facts, scenario)
    raise Unimplemented("cached-id protocol (local copies with periodic sync) is not implemented")


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


@dataclass
class DivergenceReport:
    scenario: str
    fingerprints: dict
    fingerprint_match: dict
    findings: dict
    metrics: dict
    assertion_failures: dict
    errors: dict

    @property
    def engine_defect(self) -> bool:
        return not self.fingerprint_match["id"] or any(f.value_bearing for f in self.findings["id"])

    @property
    def json_diverges(self) -> bool:
        return not self.fingerprint_match["json"] or any(f.value_bearing for f in self.findings["json"])

    def categories(self, protocol: str = "json") -> list[str]:
        return sorted({f.category.value for f in self.findings[protocol] if f.value_bearing})

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "fingerprints": self.fingerprints,
            "fingerprint_match": self.fingerprint_match,
            "engine_defect": self.engine_defect,
            "findings": {p: [f.to_json() for f in fs] for p, fs in self.findings.items()},
            "metrics": {p: m.to_json() for p, m in self.metrics.items()},
            "assertion_failures": self.assertion_failures,
            "errors": self.errors,
        }

    def metrics_rows(self) -> list[dict]:
        return [
            {
                "scenario": self.scenario,
                "protocol": p,
                "api_calls": m.api_calls,
                "payload_units_sent": m.payload_units_sent,
                "resident_objects_total": m.resident_objects,
                "findings_count": len(self.findings.get(p, [])),
            }
            for p, m in self.metrics.items()
        ]


def _fill_values(findings: list, mono: FinalState, other: FinalState) -> list:
    """Attach values for findings that name a scenario variable."""
    out = []
    for f in findings:
        if f.path.startswith("main.") and f.monolith_value is None and f.protocol_value is None:
            var = f.path[len("main."):]
            mv = _show(mono.roots.get(var)) if var in mono.roots else None
            pv = _show(other.roots.get(var)) if var in other.roots else None
            f = Finding(f.category, f.path, mv, pv)
        out.append(f)
    return out


def compare_protocols(facts: CodeFacts, scenario: ScenarioScript, id_engine=IdInterpreter) -> DivergenceReport:
    mono, mono_m, _ = run_monolith_protocol(facts, scenario)
    ids, id_m, id_f = run_id_protocol(facts, scenario, engine=id_engine)
    js, js_m, js_f = run_json_protocol(facts, scenario)
    fp = {"monolith": heap_fingerprint(mono), "id": heap_fingerprint(ids), "json": heap_fingerprint(js)}
    return DivergenceReport(
        scenario=scenario.name,
        fingerprints=fp,
        fingerprint_match={"id": fp["id"] == fp["monolith"], "json": fp["json"] == fp["monolith"]},
        findings={"monolith": [], "id": list(id_f), "json": _fill_values(js_f, mono, js)},
        metrics={"monolith": mono_m, "id": id_m, "json": js_m},
        assertion_failures={"monolith": mono.assertion_failures, "id": ids.assertion_failures,
                            "json": js.assertion_failures},
        errors={"monolith": mono.error, "id": ids.error, "json": js.error},
    )


# ---------------------------------------------------------------------------
# Scenario generators
# ---------------------------------------------------------------------------

# Units a list node costs under JSON: the node itself plus its two fields.
PAYLOAD_UNITS_PER_NODE = 3


def gen_chain_scenario(n: int) -> tuple[CodeFacts, ScenarioScript]:
    """n services in a call chain; service i builds one object and returns it
    together with everything it received from service i+1."""
    if n < 1:
        raise ValueError("chain depth must be >= 1")
    classes, calls = [], []
    for i in range(1, n + 1):
        name = f"C{i:02d}"
        nxt = f"C{i + 1:02d}" if i < n else name
        effects = [{"do": "new", "var": "x", "class": name}]
        if i < n:
            effects += [
                {"do": "call", "class": nxt, "method": "build", "args": [], "capture": "y"},
                {"do": "setref", "path": "x.next", "from": "y"},
            ]
            calls.append(CallEdge(f"{name}.build/0", f"{nxt}.build/0"))
        effects.append({"do": "return", "from": "x"})
        classes.append(ClassDecl(
            name, f"k{i:02d}",
            fields=(FieldDecl("next", declared(nxt)),),
            methods=(MethodDecl("build", (), declared(name), is_static=True, effects=tuple(effects)),),
        ))
    facts = build_facts(classes, calls)
    steps = (Call("build", class_name="C01", capture="head"),)
    return facts, ScenarioScript(steps, "k01", f"chain-{n}")


def gen_payload_scenario(size: int) -> tuple[CodeFacts, ScenarioScript]:
    """Client builds a ``size``-node list and hands its head to one server API."""
    if size < 1:
        raise ValueError("payload size must be >= 1")
    node = ClassDecl("Node", "client", fields=(FieldDecl("value", PRIMITIVE), FieldDecl("next", declared("Node"))))
    sink = ClassDecl("Sink", "server", methods=(MethodDecl("consume", (declared("Node"),), None, is_static=True),))
    facts = build_facts([node, sink], clusters=["client", "server"])
    steps: list = [New("head", "Node"), SetField("head.value", size)]
    for i in range(size - 1, 0, -1):
        steps += [New("n", "Node"), SetField("n.value", i), SetRef("n.next", "head"), Alias("head", "n")]
    if size > 1:
        # drop the builder's second handle so only ``head`` names the list
        steps.append(Alias("n", "head.value"))
    steps.append(Call("consume", class_name="Sink", args=(("ref", "head"),)))
    return facts, ScenarioScript(tuple(steps), "client", f"payload-{size}")


# ---------------------------------------------------------------------------
# Per-API exercise scenarios (classifier cross-check)
# ---------------------------------------------------------------------------


def _arg_for(t, i: int, steps: list) -> tuple:
    if t.is_declared:
        steps.append(New(f"a{i}", t.class_name))
        return ("ref", f"a{i}")
    if t.kind.value == "primitive":
        return ("value", i + 1)
    return ("value", None)


def exercise_scenario(facts: CodeFacts, api) -> ScenarioScript:
    """Smallest scenario that calls ``api`` once from its first client cluster."""
    from .classify import ApiKind
    from .facts import ref_member

    client = sorted(api.client_clusters)[0]
    owner = api.owner_class
    steps: list = []
    if api.kind is ApiKind.METHOD:
        args = tuple(_arg_for(t, i, steps) for i, t in enumerate(api.param_types))
        capture = "ret" if api.return_type is not None else None
        name = ref_member(api.member_ref)
        if api.caller_type is not None:
            steps.append(New("obj", owner))
            steps.append(Call(name, target="obj", args=args, capture=capture))
        else:
            steps.append(Call(name, class_name=owner, args=args, capture=capture))
    elif api.kind is ApiKind.CONSTRUCTOR:
        steps.append(New("obj", owner))
    else:
        fname = ref_member(api.member_ref)
        steps.append(New("obj", owner))
        if facts.field_map[api.member_ref].is_static:
            # scenarios have no static-access step; the static probe covers it
            pass
        elif api.kind is ApiKind.FIELD_GET:
            steps.append(Alias("val", f"obj.{fname}"))
        elif api.param_types[0].is_declared:
            steps.append(New("val", api.param_types[0].class_name))
            steps.append(SetRef(f"obj.{fname}", "val"))
        else:
            steps.append(SetField(f"obj.{fname}", 1))
    return ScenarioScript(tuple(steps), client, f"exercise:{api.api_id}")


def _statics_of_types(facts: CodeFacts, types) -> Optional[tuple[str, str]]:
    from .classify import reachable_classes

    for t in types:
        if not t.is_declared:
            continue
        for name in reachable_classes(facts, t.class_name):
            cls = facts.class_map.get(name)
            for f in cls.fields if cls is not None else ():
                if f.is_static:
                    return name, f.name
    return None


def _touched_static(facts: CodeFacts, mref: str) -> Optional[tuple[str, str]]:
    from .classify import touched_fields

    for fref in sorted(touched_fields(facts, mref)):
        f = facts.field_map.get(fref)
        if f is not None and f.is_static:
            return ref_class(fref), f.name
    return None


def _reachable_static(facts: CodeFacts, api) -> Optional[tuple[str, str]]:
    """A static field behind ``api``: in its signature, its body, or its nested remote calls."""
    from .classify import ApiKind, nested_remote_calls

    found = _statics_of_types(facts, api.involved_types())
    if found is None and api.kind is ApiKind.METHOD:
        found = _touched_static(facts, api.member_ref)
        for callee in nested_remote_calls(facts, api.member_ref):
            if found is not None:
                break
            m = facts.method_map[callee]
            types = list(m.params) + [m.return_type]
            if not m.is_static:
                types.append(declared(ref_class(callee)))
            found = _statics_of_types(facts, [t for t in types if t is not None])
    return found


PROBE_METHOD = "staticProbe"


def _before_return(effects, write: dict) -> tuple:
    """Place ``write`` last in the body so no nested call can overwrite it."""
    effects = tuple(effects)
    for i, eff in enumerate(effects):
        if eff.get("do") == "return":
            return effects[:i] + (write,) + effects[i:]
    return effects + (write,)


def static_write_scenario(facts: CodeFacts, api) -> tuple[CodeFacts, ScenarioScript]:
    """Exercise ``api`` and write one of its reachable statics on the server.

    Methods get the write prepended to their own body; constructors and field
    accessors, which run no body, get a static probe method on the owner class
    that the scenario calls right after the exercise.
    """
    from dataclasses import replace

    from .classify import ApiKind
    from .facts import ref_member

    target = _reachable_static(facts, api)
    if target is None:
        raise ValueError(f"{api.api_id} reaches no static field")
    write = {"do": "set_static", "class": target[0], "field": target[1], "value": "probe"}
    base = exercise_scenario(facts, api)
    owner = facts.class_map[api.owner_class]
    if api.kind is ApiKind.METHOD:
        name, arity = ref_member(api.member_ref), len(api.param_types)
        methods = tuple(
            replace(m, effects=_before_return(m.effects, write)) if m.name == name and m.arity == arity else m
            for m in owner.methods
        )
        steps = base.steps
    else:
        probe = MethodDecl(PROBE_METHOD, (), None, is_static=True, effects=(write,))
        methods = tuple(owner.methods) + (probe,)
        steps = base.steps + (Call(PROBE_METHOD, class_name=owner.name),)
    classes = [replace(c, methods=methods) if c.name == owner.name else c for c in facts.classes]
    new_facts = build_facts(classes, facts.calls, facts.accesses, facts.clusters)
    return new_facts, ScenarioScript(steps, base.context, f"static-write:{api.api_id}")
