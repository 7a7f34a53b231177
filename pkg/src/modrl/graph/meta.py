"""Meta-graph assembly: call every root API method once with op records.

No tensors exist in this phase. Graph-function calls become :class:`CallSite`
entries that carry their argument and return records, which later lets the
builder map inputs to outputs positionally.
"""
from __future__ import annotations

import inspect
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Optional

from modrl import spaces as sp
from modrl.errors import AssemblyError, EncapsulationError, UnknownSpaceError
from modrl.graph.component import Component, current_context, use_context


class OpRecord:
    """Placeholder for a value flowing between API methods and graph functions."""

    __slots__ = ("id", "origin", "space", "consumers", "deps", "value", "parent", "key")

    def __init__(self, rid, origin, deps=frozenset()):
        self.id = rid
        self.origin = origin
        self.space = None
        self.consumers: list = []
        self.deps = deps
        self.value = None
        self.parent = None
        self.key = None

    def __getitem__(self, key):
        ctx = current_context()
        if ctx is None or not hasattr(ctx, "select"):
            raise AssemblyError("op records can only be indexed during assembly")
        return ctx.select(self, key)

    def __bool__(self):
        raise AssemblyError("API bodies may not branch on tensor values")

    def __iter__(self):
        raise AssemblyError("op records are opaque; index them by key instead")

    def __repr__(self):
        return f"OpRecord({self.id}, {self.origin[0]}, space={self.space!r})"


@dataclass
class CallSite:
    seq: int
    component: Component
    fn: object
    args: list
    params: list
    api: str
    outs: list = field(default_factory=list)


@dataclass
class ApiEntry:
    name: str
    params: list
    in_records: "OrderedDict[str, OpRecord]"
    constants: dict
    out: object


@dataclass
class ComponentGraph:
    root: Component
    api: "OrderedDict[str, ApiEntry]"
    records: list
    call_edges: list
    sites: list
    input_spaces: dict
    body_calls: Counter
    assembly_seconds: float = 0.0

    @property
    def all_records(self) -> dict:
        return {r.id: r for r in self.records}

    def components(self) -> list:
        return list(self.root.walk())

    def cross_edges(self) -> list:
        """Distinct (caller, callee, api) triples between different components, first-seen order."""
        seen = OrderedDict()
        for caller, callee, name in self.call_edges:
            if caller != callee:
                seen.setdefault((caller, callee, name), None)
        return list(seen)


def records_in(value) -> list:
    if isinstance(value, OpRecord):
        return [value]
    if isinstance(value, dict):
        return [r for v in value.values() for r in records_in(v)]
    if isinstance(value, (tuple, list)):
        return [r for v in value for r in records_in(v)]
    return []


@dataclass
class _Frame:
    component: Component
    api: str
    visible: set


class Assembler:
    """Assembly context: turns API calls into call edges and graph-fn calls into call sites."""

    def __init__(self, root: Component):
        self.root = root
        self.records: list = []
        self.sites: list = []
        self.call_edges: list = []
        self.frames: list = []
        self.body_calls: Counter = Counter()
        self.api: Optional[str] = None

    def new_record(self, origin, deps=frozenset()) -> OpRecord:
        rec = OpRecord(len(self.records), origin, deps)
        self.records.append(rec)
        return rec

    def _check_visible(self, value, frame, what):
        if frame is None:
            return
        for r in records_in(value):
            if r.id not in frame.visible:
                raise EncapsulationError(
                    f"{what}: record {r.id} is not visible in {frame.component.global_scope}.{frame.api}; "
                    "values cross component boundaries only through API calls")

    def call_api(self, comp, rec, args, kwargs):
        caller = self.frames[-1] if self.frames else None
        if caller is None:
            if comp is not self.root:
                raise EncapsulationError(f"only root API methods can be called from outside ({comp.global_scope})")
        elif comp is not caller.component and comp.parent is not caller.component:
            raise EncapsulationError(
                f"{caller.component.global_scope} may not call {comp.global_scope}.{rec.name}: "
                "only own methods and direct subcomponents are reachable")
        try:
            bound = inspect.signature(rec.body).bind(comp, *args, **kwargs)
        except TypeError as e:
            raise AssemblyError(f"{comp.global_scope}.{rec.name}: {e}") from None
        bound.apply_defaults()
        values = list(bound.args[1:])
        self._check_visible(values, caller, f"call to {comp.global_scope}.{rec.name}")
        if caller is not None:
            self.call_edges.append((caller.component.global_scope, comp.global_scope, rec.name))
        frame = _Frame(comp, rec.name, {r.id for r in records_in(values)})
        self.frames.append(frame)
        self.body_calls[(comp.global_scope, rec.name)] += 1
        try:
            out = rec.body(comp, *values)
        finally:
            self.frames.pop()
        self._check_visible(out, frame, f"return of {comp.global_scope}.{rec.name}")
        if caller is not None:
            caller.visible.update(r.id for r in records_in(out))
        return out

    def call_graph_fn(self, comp, fn, args):
        frame = self.frames[-1] if self.frames else None
        if frame is None or frame.component is not comp:
            where = frame.component.global_scope if frame else "outside"
            raise EncapsulationError(f"graph function {comp.global_scope}.{fn.name} called from {where}")
        if fn.varargs is None and len(args) != len(fn.params):
            raise AssemblyError(f"{comp.global_scope}.{fn.name} takes {len(fn.params)} inputs, got {len(args)}")
        self._check_visible(args, frame, f"graph function {comp.global_scope}.{fn.name}")
        site = CallSite(len(self.sites), comp, fn, list(args), fn.param_names(len(args)), self.api)
        deps = frozenset().union(*[r.deps for r in records_in(args)]) | {comp.global_scope}
        for pos, a in enumerate(args):
            for r in records_in(a):
                r.consumers.append((site.seq, pos))
        site.outs = [self.new_record(("graph_fn_output", comp.global_scope, fn.name, i), deps)
                     for i in range(fn.returns)]
        self.sites.append(site)
        self.call_edges.append((comp.global_scope, comp.global_scope, fn.name))
        frame.visible.update(r.id for r in site.outs)
        if fn.returns == 0:
            return None
        return site.outs[0] if fn.returns == 1 else tuple(site.outs)

    def select(self, rec, key):
        frame = self.frames[-1] if self.frames else None
        self._check_visible(rec, frame, f"indexing [{key!r}]")
        child = self.new_record(("select", rec.id, key), rec.deps)
        child.parent = rec
        child.key = key
        if frame is not None:
            frame.visible.add(child.id)
        return child


def build_meta_graph(root: Component, input_spaces=None) -> ComponentGraph:
    """Call every registered root API method once with fresh op records."""
    start = time.perf_counter()
    spaces = {k: sp.space_from_spec(v) for k, v in (input_spaces or {}).items()}
    asm = Assembler(root)
    registry: "OrderedDict[str, ApiEntry]" = OrderedDict()
    with use_context(asm):
        for name, rec in root.api_methods.items():
            if not rec.registered:
                continue
            asm.api = name
            params = inspect.signature(rec.body).parameters
            ins, consts, args = OrderedDict(), {}, []
            for pname in rec.params:
                default = params[pname].default
                if pname in spaces:
                    space = spaces[pname]
                elif pname in rec.defaults:
                    space = sp.space_from_spec(rec.defaults[pname])
                elif default is not inspect.Parameter.empty:
                    consts[pname] = default
                    args.append(default)
                    continue
                else:
                    raise UnknownSpaceError(f"no space for parameter {pname!r} of API method {name!r} "
                                            f"on {root.global_scope}")
                r = asm.new_record(("api_input", name, pname, space))
                r.space = space
                ins[pname] = r
                args.append(r)
            out = root.call_api(name, *args)
            registry[name] = ApiEntry(name, list(rec.params), ins, consts, out)
    return ComponentGraph(root, registry, asm.records, asm.call_edges, asm.sites, spaces,
                          asm.body_calls, time.perf_counter() - start)


NEWLINE = "\\n"


def _dot_id(text: str) -> str:
    return '"' + text.replace('"', '\\"') + '"'


def export_dot(graph: ComponentGraph) -> str:
    """DOT text: a cluster and a node per component, an edge per distinct cross-component call."""
    lines = ["digraph components {", "  compound=true;"]

    def emit(comp, depth):
        pad = "  " * depth
        scope = comp.global_scope
        device = comp.op_device or comp.effective_device() or "default"
        lines.append(f"{pad}subgraph {_dot_id('cluster_' + scope)} {{")
        lines.append(f"{pad}  label={_dot_id(comp.name)};")
        lines.append(f"{pad}  {_dot_id(scope)} [label={_dot_id(comp.name + NEWLINE + device)}, shape=box];")
        for child in sorted(comp.subcomponents.values(), key=lambda c: c.global_scope):
            emit(child, depth + 1)
        lines.append(f"{pad}}}")

    emit(graph.root, 1)
    for caller, callee, name in graph.cross_edges():
        lines.append(f"  {_dot_id(caller)} -> {_dot_id(callee)} [label={_dot_id(name)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
