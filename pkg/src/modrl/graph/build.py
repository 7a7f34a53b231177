"""Compilation: propagate spaces breadth-first, create variables, materialize kernels."""
from __future__ import annotations

import math
import time
from collections import OrderedDict, defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from modrl import spaces as sp
from modrl.errors import (AssemblyError, BuildError, BuildStallError, CyclicDependencyError,
                          ReplicaError, SpaceConflictError, SpaceError)
from modrl.graph.component import Component, invoke_kernel
from modrl.graph.meta import ComponentGraph, OpRecord, build_meta_graph, records_in
from modrl.graph.staged import EFFECT_OPS, Node, NodeTable, SymbolicOps, placeholder

BACKENDS = ("staged", "define_by_run")


@dataclass
class DeviceMap:
    """Scope-prefix rules for op and variable placement (labels only at desk scale)."""

    ops: dict = field(default_factory=dict)
    variables: dict = field(default_factory=dict)
    default: str = "cpu:0"

    @staticmethod
    def _match(rules, scope):
        best = None
        for prefix, device in rules.items():
            p = "/" + prefix.strip("/") if prefix.strip("/") else ""
            if p == "" or scope == p or scope.startswith(p + "/"):
                if best is None or len(p) > len(best[0]):
                    best = (p, device)
        return None if best is None else best[1]

    def resolve(self, component: Component, kind: str = "ops") -> str:
        rule = self._match(self.ops if kind == "ops" else self.variables, component.global_scope)
        if rule is not None:
            return rule
        return component.effective_device() or self.default

    @classmethod
    def from_config(cls, cfg) -> "DeviceMap":
        if cfg is None:
            return cls()
        if isinstance(cfg, DeviceMap):
            return cfg
        return cls(dict(cfg.get("ops", {})), dict(cfg.get("variables", {})), cfg.get("default", "cpu:0"))


@dataclass
class BuildStats:
    component_count: int
    op_count: int
    variable_count: int
    meta_graph_seconds: float
    build_seconds: float

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in vars(self).items()) + "\n"


@dataclass
class ApiPlan:
    name: str
    params: list
    spaces: dict
    constants: dict
    placeholders: dict
    outputs: object
    out_records: object
    effects: list
    plan: list
    sites: list


@dataclass
class OpRegistry:
    apis: "OrderedDict[str, ApiPlan]"
    nodes: list

    def __contains__(self, name):
        return name in self.apis


@dataclass
class BuildResult:
    graph: ComponentGraph
    registry: OpRegistry
    stats: BuildStats
    variables: "OrderedDict[str, object]"
    backend: str
    seed: int
    log: list
    device_map: DeviceMap


def space_of(value) -> sp.Space:
    """Space of a symbolic value; leading None extents become batch/time ranks."""
    if isinstance(value, Node):
        lead = 0
        while lead < len(value.shape) and value.shape[lead] is None:
            lead += 1
        if lead > 2:
            raise SpaceError(f"more than two run-time extents in {value.shape}")
        return sp.space_from_value_shape(value.shape, value.dtype, lead)
    if isinstance(value, dict):
        children = {k: space_of(v) for k, v in value.items()}
        flags = {(c.has_batch_rank, c.has_time_rank) for c in children.values()}
        if len(flags) > 1:
            raise SpaceError(f"container output mixes batch/time ranks: {children}")
        (b, t), = flags
        return sp.Dict(children, add_batch_rank=b, add_time_rank=t)
    if isinstance(value, (tuple, list)):
        children = [space_of(v) for v in value]
        flags = {(c.has_batch_rank, c.has_time_rank) for c in children}
        if len(flags) > 1:
            raise SpaceError("tuple output mixes batch/time ranks")
        (b, t), = flags
        return sp.Tuple(*children, add_batch_rank=b, add_time_rank=t)
    raise SpaceError(f"graph functions must return tensors, got {type(value).__name__}")


class _Builder:
    def __init__(self, graph, device_map, backend, seed, order):
        self.graph = graph
        self.dm = device_map
        self.backend = backend
        self.seed = seed
        self.order = order
        self.table = NodeTable()
        self.log: list = []
        self.comps = graph.components()
        self.by_scope = {c.global_scope: c for c in self.comps}
        self.sites_of = defaultdict(list)
        for site in graph.sites:
            self.sites_of[site.component.global_scope].append(site)
        self.pending = {s.seq for s in graph.sites}
        self.children = defaultdict(list)
        for r in graph.records:
            if r.parent is not None:
                self.children[r.parent.id].append(r)
        self.param_spaces: dict = {}

    # -- record spaces ---------------------------------------------------------
    def known(self, rec) -> bool:
        if rec.space is not None:
            return True
        if rec.parent is not None and self.known(rec.parent):
            parent_space, key = rec.parent.space, rec.key
            if not isinstance(parent_space, (sp.Dict, sp.Tuple)):
                raise AssemblyError(f"cannot index non-container record {rec.parent.id} with {key!r}")
            try:
                rec.space = parent_space[key]
                rec.value = rec.parent.value[key]
            except (KeyError, IndexError, TypeError):
                raise AssemblyError(f"record {rec.parent.id} has no entry {key!r} "
                                    f"(space {parent_space!r})") from None
            return True
        return False

    def arg_known(self, arg) -> bool:
        return all(self.known(r) for r in records_in(arg))

    def arg_space(self, arg):
        if isinstance(arg, OpRecord):
            return arg.space
        if isinstance(arg, dict):
            kids = {k: self.arg_space(v) for k, v in arg.items()}
            kids = {k: v for k, v in kids.items() if v is not None}
            return sp.Dict(kids, add_batch_rank=_flag(kids.values(), 0),
                           add_time_rank=_flag(kids.values(), 1)) if kids else None
        if isinstance(arg, (tuple, list)):
            kids = [self.arg_space(v) for v in arg]
            if any(k is None for k in kids) or not kids:
                return None
            return sp.Tuple(*kids, add_batch_rank=_flag(kids, 0), add_time_rank=_flag(kids, 1))
        return None

    def arg_value(self, arg):
        if isinstance(arg, OpRecord):
            return arg.value
        if isinstance(arg, dict):
            return {k: self.arg_value(v) for k, v in arg.items()}
        if isinstance(arg, (tuple, list)):
            return tuple(self.arg_value(v) for v in arg)
        return arg

    def note_space(self, comp, site, pname, space):
        key = (comp.global_scope, site.fn.name, pname)
        prev = self.param_spaces.get(key)
        if prev is None:
            self.param_spaces[key] = space
        elif not prev.compatible(space):
            raise SpaceConflictError(f"{comp.global_scope}.{site.fn.name}({pname}): "
                                     f"{prev!r} conflicts with {space!r}")

    # -- completeness ------------------------------------------------------------
    def required(self, comp):
        req = OrderedDict()
        scope = comp.global_scope
        for site in self.sites_of[scope]:
            for pname, arg in zip(site.params, site.args):
                recs = records_in(arg)
                if not recs:
                    continue
                if comp.variable_inputs is not None:
                    if pname not in comp.variable_inputs:
                        continue
                elif any(scope in r.deps for r in recs):
                    continue
                req.setdefault((site.fn.name, pname), []).append((site, arg))
        return req

    def try_complete(self, comp) -> bool:
        req = self.required(comp)
        for uses in req.values():
            if not all(self.arg_known(arg) for _, arg in uses):
                return False
        spaces_in = OrderedDict()
        for (fn_name, pname), uses in req.items():
            for site, arg in uses:
                space = self.arg_space(arg)
                if space is None:
                    continue
                self.note_space(comp, site, pname, space)
                spaces_in.setdefault(pname, space)
        comp.input_complete = True
        comp.create_variables(spaces_in)
        self.log.append(("create_variables", comp.global_scope))
        return True

    # -- materialization ---------------------------------------------------------
    def ready(self, site) -> bool:
        if not site.component.variables_created or not self.arg_known(site.args):
            return False
        if site.fn.subtree:
            return all(c.variables_created for c in site.component.walk())
        return True

    def materialize(self, site):
        comp = site.component
        for pname, arg in zip(site.params, site.args):
            space = self.arg_space(arg)
            if space is not None:
                self.note_space(comp, site, pname, space)
        ops = SymbolicOps(self.table, site.seq, comp.global_scope, site.api)
        args = [self.arg_value(a) for a in site.args]
        out = invoke_kernel(comp, site.fn, ops, args)
        outs = (out,) if site.fn.returns == 1 else out
        for rec, value in zip(site.outs, outs):
            value = _lift(ops, value)
            rec.value = value
            try:
                rec.space = space_of(value)
            except SpaceError as e:
                raise SpaceError(f"[{comp.global_scope}] output of {site.fn.name}: {e}") from None
        self.pending.discard(site.seq)
        self.log.append(("graph_fn", comp.global_scope, site.fn.name))

    def consumers(self, rec):
        out = [seq for seq, _ in rec.consumers]
        for child in self.children.get(rec.id, ()):
            out.extend(self.consumers(child))
        return out

    # -- driver ---------------------------------------------------------------------
    def run(self):
        for c in self.comps:
            c.reset_build()
            c.build_seed = self.seed
            c.op_device = self.dm.resolve(c, "ops")
            c.variable_device = self.dm.resolve(c, "variables")
        for r in self.graph.records:
            r.value = None
            r.space = r.origin[3] if r.origin[0] == "api_input" else None
        for name, entry in self.graph.api.items():
            for pname, rec in entry.in_records.items():
                leaves = OrderedDict()
                for key, leaf in sp.flatten(rec.space).items():
                    leaves[key] = placeholder(self.table, name, pname + key, leaf.symbolic_shape(), leaf.dtype)
                rec.value = sp.unflatten(leaves, like=rec.space)

        queue = deque(self.comps)
        queued = set(id(c) for c in self.comps)

        def enqueue(c):
            if id(c) not in queued:
                queued.add(id(c))
                queue.append(c)

        while queue:
            comp = queue.popleft() if self.order == "fifo" else queue.pop()
            queued.discard(id(comp))
            if not comp.variables_created:
                if not self.try_complete(comp):
                    continue
                anc = comp.parent
                while anc is not None:
                    enqueue(anc)
                    anc = anc.parent
            for site in self.sites_of[comp.global_scope]:
                if site.seq in self.pending and self.ready(site):
                    self.materialize(site)
                    for rec in site.outs:
                        for seq in self.consumers(rec):
                            enqueue(self.graph.sites[seq].component)
        if self.pending:
            self.report_stall()

    def report_stall(self):
        incomplete = [c for c in self.comps if not c.variables_created]
        missing_of = {}
        for c in incomplete:
            missing_of[c.global_scope] = [f"{fn}({p})" for (fn, p), uses in self.required(c).items()
                                          if not all(self.arg_known(a) for _, a in uses)]
        # wait-for graph between components, through pending producer sites
        waits = defaultdict(set)
        for seq in sorted(self.pending):
            site = self.graph.sites[seq]
            waiter = site.component.global_scope
            for r in records_in(site.args):
                if not self.known(r):
                    waits[waiter].add(_producer(r))
        for c in incomplete:
            for (fn, p), uses in self.required(c).items():
                for _, arg in uses:
                    for r in records_in(arg):
                        if not self.known(r):
                            waits[c.global_scope].add(_producer(r))
        cycle = _find_cycle(waits)
        if cycle:
            first = cycle[0]
            raise CyclicDependencyError(f"cyclic space dependency: {' -> '.join(cycle + [first])}",
                                        component=first, missing=missing_of.get(first, []))
        if incomplete:
            c = incomplete[0]
            raise BuildStallError(f"build stalled: {c.global_scope} is not input-complete; missing "
                                  f"spaces for {', '.join(missing_of[c.global_scope]) or 'nothing'}",
                                  component=c.global_scope, missing=missing_of[c.global_scope])
        raise BuildStallError("build stalled: call sites remain unmaterialized")


def _flag(spaces_, idx):
    flags = {(s.has_batch_rank, s.has_time_rank)[idx] for s in spaces_}
    return flags == {True}


def _lift(ops, value):
    if isinstance(value, Node):
        return value
    if isinstance(value, dict):
        return {k: _lift(ops, v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(_lift(ops, v) for v in value)
    return ops.constant(value)


def _producer(rec):
    while rec.parent is not None:
        rec = rec.parent
    return rec.origin[1] if rec.origin[0] == "graph_fn_output" else "<api>"


def _find_cycle(edges):
    color = {}
    stack = []

    def visit(u):
        color[u] = 1
        stack.append(u)
        for v in sorted(edges.get(u, ())):
            if color.get(v) == 1:
                return stack[stack.index(v):]
            if color.get(v) is None:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for u in sorted(edges):
        if color.get(u) is None:
            found = visit(u)
            if found:
                return list(found)
    return None


def _ancestors(roots, nodes):
    seen = set()
    todo = list(roots)
    while todo:
        nid = todo.pop()
        if nid in seen:
            continue
        seen.add(nid)
        todo.extend(i.id for i in nodes[nid].inputs)
    return sorted(seen)


def _ids(value):
    if isinstance(value, Node):
        return value.id
    if isinstance(value, dict):
        return {k: _ids(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(_ids(v) for v in value)
    return value


def _out_values(out):
    if isinstance(out, OpRecord):
        return out.value
    if isinstance(out, dict):
        return {k: _out_values(v) for k, v in out.items()}
    if isinstance(out, (tuple, list)):
        return tuple(_out_values(v) for v in out)
    return out


def _flat_ids(value):
    if isinstance(value, int):
        return [value]
    if isinstance(value, dict):
        return [i for v in value.values() for i in _flat_ids(v)]
    if isinstance(value, (tuple, list)):
        return [i for v in value for i in _flat_ids(v)]
    return []


def build(graph: ComponentGraph, device_map: Optional[DeviceMap] = None, backend: str = "staged",
          seed: int = 0, order: str = "fifo", dry_run: bool = True) -> BuildResult:
    """Phase 3. ``order`` ("fifo"/"lifo") only changes queue tie-breaking, never the result."""
    if backend not in BACKENDS:
        raise BuildError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    start = time.perf_counter()
    dm = DeviceMap.from_config(device_map)
    b = _Builder(graph, dm, backend, seed, order)
    b.run()
    for r in graph.records:
        b.known(r)
    nodes = b.table.finalize()
    scope_dev = {c.global_scope: c.op_device for c in b.comps}
    root_dev = graph.root.op_device
    for n in nodes:
        n.device = scope_dev.get(n.scope, root_dev)

    variables = OrderedDict()
    for comp in b.comps:
        for var in comp.variables.values():
            if var.full_name in variables:
                raise BuildError(f"duplicate variable name {var.full_name}")
            variables[var.full_name] = var

    apis = OrderedDict()
    for name, entry in graph.api.items():
        holders = OrderedDict((p, OrderedDict((k, n.id) for k, n in sp.flatten(rec.value).items()))
                              for p, rec in entry.in_records.items())
        outputs = _ids(_out_values(entry.out))
        effects = [n.id for n in nodes if n.api == name and n.op in EFFECT_OPS]
        plan = _ancestors(_flat_ids(outputs) + effects, nodes)
        apis[name] = ApiPlan(name, entry.params, OrderedDict((p, r.space) for p, r in entry.in_records.items()),
                             dict(entry.constants), holders, outputs, entry.out, effects, plan,
                             [s for s in graph.sites if s.api == name])
    registry = OpRegistry(apis, nodes)
    stats = BuildStats(len(b.comps), len(nodes), len(variables), graph.assembly_seconds, 0.0)
    result = BuildResult(graph, registry, stats, variables, backend, seed, b.log, dm)
    if backend == "define_by_run" and dry_run:
        _artificial_pass(result)
    stats.build_seconds = time.perf_counter() - start
    return result


def check_input_completeness(graph: ComponentGraph, component: Component, known_spaces=None) -> bool:
    """Whether every graph-function input that sizes ``component``'s variables has a known space.

    ``known_spaces`` maps parameter names to spaces; components without such inputs are
    trivially complete."""
    known = known_spaces or {}
    required = _Builder(graph, DeviceMap(), "staged", 0, "fifo").required(component)
    return all(pname in known and known[pname] is not None for _, pname in required)


def _artificial_value(space, batch):
    """Zeros, except count-like integers (no categories) which get ``batch`` so batches are nonempty."""
    flat = sp.flatten(space.zeros(batch if space.has_batch_rank else None, 1 if space.has_time_rank else None))
    for key, leaf in sp.flatten(space).items():
        if isinstance(leaf, sp.IntBox) and not leaf.num_categories:
            flat[key] = np.full_like(flat[key], batch)
    return sp.unflatten(flat, like=space)


def _artificial_pass(result: BuildResult):
    """Push zero-filled artificial placeholders through every API chain (define-by-run build)."""
    from modrl.graph.dbr import EagerEnv, lift, run_chain
    from modrl.tensor.autodiff import Tape
    from modrl.tensor.ops import OverlayStore, VariableStore

    base = VariableStore(result.variables.values())
    # components that split the batch need it to divide evenly
    batch = 1
    for component in result.graph.root.walk():
        batch = math.lcm(batch, int(getattr(component, "batch_multiple", 1)))
    for plan in result.registry.apis.values():
        values = {}
        entry = result.graph.api[plan.name]
        for pname, rec in entry.in_records.items():
            values[rec.id] = lift(_artificial_value(rec.space, batch))
        env = EagerEnv(OverlayStore(base), Tape(), result.seed, 2 ** 31, checks=False)
        try:
            run_chain(plan.sites, values, env)
        except Exception as e:
            raise BuildError(f"artificial placeholder pass failed for API {plan.name!r}: {e}") from e


def apply_replica_strategy(graph: ComponentGraph, k: int) -> ComponentGraph:
    """Synchronous data parallelism over ``k`` copies of the root's marked tower.

    The root marks the replicable subgraph as ``replica_tower`` and its update
    body branches on ``self.replicas`` (a structural constant): with replicas it
    splits the batch with ``self.splitter``, runs each tower on one part and
    averages gradients with ``self.averager``. k=1 returns the graph unchanged.
    """
    if not isinstance(k, int) or k < 1:
        raise ReplicaError(f"replica count must be a positive integer, got {k!r}")
    if k == 1:
        return graph
    from modrl.components.replicas import BatchSplitter, GradientAverager, Merger

    root = graph.root
    tower = getattr(root, "replica_tower", None)
    if tower is None:
        raise ReplicaError(f"{root.global_scope} does not mark a replicable tower (replica_tower)")
    if getattr(root, "replicas", None):
        raise ReplicaError("replica strategy already applied")
    towers = [tower.copy(f"replica:{i}", device=f"replica:{i}") for i in range(k)]
    root.add_subcomponent(*towers)
    root.add_subcomponent(BatchSplitter("splitter", k), GradientAverager("averager", k), Merger("merger", k))
    root.replicas = towers
    return build_meta_graph(root, graph.input_spaces)
