"""Graph executors: serve API calls against a build in staged or define-by-run mode."""
from __future__ import annotations

import time
from collections import OrderedDict
from typing import Optional

import numpy as np

from modrl import spaces as sp
from modrl.errors import (ExecutionError, ModrlError, SpaceError, UnknownApiError, VariableError)
from modrl.graph.build import BuildResult, DeviceMap, build
from modrl.graph.component import Component, use_context
from modrl.graph.dbr import EagerEnv, RunContext, lift, resolve, run_chain
from modrl.graph.meta import build_meta_graph
from modrl.graph.staged import ASSIGN, CHECK, CONSTANT, PLACEHOLDER
from modrl.tensor.autodiff import READ_OP, Tape
from modrl.tensor.core import BOOL, F64, I64, Tensor, as_array
from modrl.tensor.primitives import PRIMITIVES

_PRIM, _CONST, _READ, _ASSIGN, _CHECK, _SKIP = range(6)


def conform(space: sp.Space, value, what: str):
    """Coerce an argument to its space's dtypes, rejecting structural or shape violations."""
    flat_space = sp.flatten(space)
    if isinstance(value, dict) and value and all(isinstance(k, str) and k.startswith("/") for k in value):
        flat_value = OrderedDict(value)
    else:
        try:
            flat_value = sp.flatten(value)
        except SpaceError:
            raise SpaceError(f"{what}: malformed value") from None
    if list(flat_value) != list(flat_space):
        raise SpaceError(f"{what}: keys {list(flat_value)} do not match space keys {list(flat_space)}")
    out = OrderedDict()
    for key, leaf in flat_space.items():
        arr = np.asarray(flat_value[key].data if isinstance(flat_value[key], Tensor) else flat_value[key])
        if leaf.dtype == BOOL:
            if arr.dtype != BOOL:
                raise SpaceError(f"{what}{key}: expected bool values, got {arr.dtype}")
        elif leaf.dtype == I64:
            if arr.dtype == BOOL or not np.issubdtype(arr.dtype, np.integer):
                if not (np.issubdtype(arr.dtype, np.floating) and np.all(np.mod(arr, 1) == 0)):
                    raise SpaceError(f"{what}{key}: expected integer values, got {arr.dtype}")
            arr = arr.astype(I64)
            n = getattr(leaf, "num_categories", 0)
            if n and arr.size and (arr.min() < 0 or arr.max() >= n):
                raise SpaceError(f"{what}{key}: categories outside [0, {n})")
        else:
            if arr.dtype == BOOL or not np.issubdtype(arr.dtype, np.number):
                raise SpaceError(f"{what}{key}: expected numeric values, got {arr.dtype}")
            arr = arr.astype(F64)
        if not leaf._shape_ok(arr):
            raise SpaceError(f"{what}{key}: shape {arr.shape} does not fit {leaf!r}")
        out[key] = arr
    return out


def _to_numpy(value):
    if isinstance(value, Tensor):
        return value.data
    if isinstance(value, dict):
        return {k: _to_numpy(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(_to_numpy(v) for v in value)
    return value


def _map_ids_flat(value):
    out = []
    _map_ids(value, out.append)
    return out


def _map_ids(value, fn):
    if isinstance(value, int):
        return fn(value)
    if isinstance(value, dict):
        return {k: _map_ids(v, fn) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(_map_ids(v, fn) for v in value)
    return value


class GraphExecutor:
    """Executes API methods of one build. Confined to one thread at a time."""

    def __init__(self, built: BuildResult, seed: Optional[int] = None, fast_path: bool = True,
                 checks: bool = True, timing_log=None):
        from modrl.tensor.ops import VariableStore

        self.built = built
        self.mode = built.backend
        self.registry = built.registry
        self.seed = built.seed if seed is None else seed
        self.fast_path = fast_path
        self.checks = checks
        self.store = VariableStore(built.variables.values())
        self.timing_log = timing_log
        self.op_counter = [0]
        self.calls = 0
        self._plans = {}

    # -- compiled staged plans ---------------------------------------------------------
    def _inplace_scatters(self, api) -> set:
        """Scatter nodes that may overwrite their base instead of copying it.

        Allowed when every other consumer of the base is an earlier gather (which copies)
        and the base is either a fresh scatter result or a variable read whose single-use
        scatter chain ends in an assign back to that same variable."""
        nodes = self.registry.nodes
        plan = set(api.plan)
        consumers = {}
        for nid in api.plan:
            for i in nodes[nid].inputs:
                consumers.setdefault(i.id, []).append(nid)
        for nid in _map_ids_flat(api.outputs):
            consumers.setdefault(nid, []).append(-1)
        reads = {}
        for nid in api.plan:
            if nodes[nid].op == READ_OP:
                reads.setdefault(nodes[nid].attrs["var"], []).append(nid)

        def others_safe(base, nid):
            return all(c == nid or (c != -1 and c < nid and nodes[c].op == "gather") for c in consumers.get(base, []))

        def chain_assigns(nid, var):
            while True:
                cons = [c for c in consumers.get(nid, []) if c == -1 or nodes[c].op != "gather"]
                if len(cons) != 1 or cons[0] == -1:
                    return False
                c = nodes[cons[0]]
                if c.op == ASSIGN:
                    return c.attrs["var"] == var and c.inputs[0].id == nid
                if c.op != "scatter_update" or c.inputs[0].id != nid:
                    return False
                nid = c.id

        out = set()
        for nid in api.plan:
            n = nodes[nid]
            if n.op != "scatter_update" or nid not in plan:
                continue
            base = nodes[n.inputs[0].id]
            if not others_safe(base.id, nid):
                continue
            if base.op == "scatter_update":
                out.add(nid)
            elif base.op == READ_OP and len(reads[base.attrs["var"]]) == 1 \
                    and chain_assigns(nid, base.attrs["var"]):
                out.add(nid)
        return out

    def _compiled(self, name):
        plan = self._plans.get(name)
        if plan is None:
            nodes = self.registry.nodes
            plan = []
            inplace = self._inplace_scatters(self.registry.apis[name])
            for nid in self.registry.apis[name].plan:
                n = nodes[nid]
                ins = [i.id for i in n.inputs]
                if n.op == PLACEHOLDER:
                    continue
                if n.op == CONSTANT:
                    plan.append((_CONST, nid, n.attrs["value"], ins, n))
                elif n.op == READ_OP:
                    plan.append((_READ, nid, n.attrs["var"], ins, n))
                elif n.op == ASSIGN:
                    plan.append((_ASSIGN, nid, n.attrs["var"], ins, n))
                elif n.op == CHECK:
                    plan.append((_CHECK, nid, n.attrs["message"], ins, n))
                else:
                    prim = PRIMITIVES[n.op]
                    attrs = dict(n.attrs, _inplace=True) if nid in inplace else n.attrs
                    plan.append((_PRIM, nid, prim, ins, attrs))
            self._plans[name] = plan
        return plan

    def _run_staged(self, api, flat_args):
        vals = {}
        for pname, holders in api.placeholders.items():
            for key, nid in holders.items():
                vals[nid] = flat_args[pname][key]
        store = self.store
        nodes = self.registry.nodes
        count = 0
        for kind, nid, payload, ins, node in self._compiled(api.name):
            if kind == _PRIM:
                rng = None
                if payload.random:
                    rng = np.random.default_rng([self.seed, self.calls, nodes[nid].site, node["_rand"]])
                try:
                    vals[nid] = as_array(payload.forward([vals[i] for i in ins], node, rng))
                except ModrlError as e:
                    raise type(e)(f"[{nodes[nid].scope}] {nodes[nid].op}: {e}") from e
                except (ValueError, IndexError, TypeError, FloatingPointError) as e:
                    raise ExecutionError(f"{nodes[nid].op}: {e}", nodes[nid].scope) from e
                count += 1
            elif kind == _READ:
                vals[nid] = store.get(payload)
            elif kind == _CONST:
                vals[nid] = payload
            elif kind == _ASSIGN:
                var = store.variables[payload]
                value = vals[ins[0]]
                if value.dtype != var.dtype:
                    value = value.astype(var.dtype)
                if value.shape != var.shape and value.size == 1:
                    value = np.broadcast_to(value.reshape(()), var.shape)
                try:
                    store.set(var, np.array(value))
                except VariableError as e:
                    raise ExecutionError(str(e), node.scope) from e
            elif kind == _CHECK:
                if self.checks and not np.all(vals[ins[0]]):
                    raise ExecutionError(payload, node.scope)
        self.op_counter[0] += count
        return _to_numpy(_map_ids(api.outputs, lambda i: vals[i]))

    def _env(self, tape):
        return EagerEnv(self.store, tape, self.seed, self.calls, self.checks, self.op_counter)

    def _run_dbr(self, api, flat_args):
        entry = self.built.graph.api[api.name]
        args = OrderedDict()
        for pname, rec in entry.in_records.items():
            args[pname] = lift(sp.unflatten(flat_args[pname], like=rec.space))
        env = self._env(Tape())
        if self.fast_path:
            values = {rec.id: args[p] for p, rec in entry.in_records.items()}
            run_chain(api.sites, values, env)
            return _to_numpy(resolve(api.out_records, values))
        root = self.built.graph.root
        call = [args[p] if p in args else api.constants[p] for p in api.params]
        with use_context(RunContext(api.sites, env)):
            out = root.api_methods[api.name].body(root, *call)
        return _to_numpy(out)

    # -- public ---------------------------------------------------------------------
    def api_names(self):
        return list(self.registry.apis)

    def execute(self, api_name: str, *args, **kwargs):
        api = self.registry.apis.get(api_name)
        if api is None:
            raise UnknownApiError(f"unknown API method {api_name!r}; available: {', '.join(self.registry.apis)}")
        variable = [p for p in api.params if p not in api.constants]
        if len(args) > len(variable):
            raise ExecutionError(f"{api_name} takes {len(variable)} arguments, got {len(args)}")
        given = dict(zip(variable, args))
        for k, v in kwargs.items():
            if k not in variable or k in given:
                raise ExecutionError(f"{api_name}: unexpected or duplicate argument {k!r}")
            given[k] = v
        missing = [p for p in variable if p not in given]
        if missing:
            raise ExecutionError(f"{api_name}: missing arguments {missing}")
        flat_args = {p: conform(api.spaces[p], given[p], f"{api_name}({p})") for p in variable}
        self.calls += 1
        start = time.perf_counter()
        if self.mode == "staged":
            out = self._run_staged(api, flat_args)
        else:
            out = self._run_dbr(api, flat_args)
        if self.timing_log is not None:
            micros = int((time.perf_counter() - start) * 1e6)
            line = f"api,{api_name},{micros}"
            if hasattr(self.timing_log, "write"):
                self.timing_log.write(line + "\n")
            else:
                self.timing_log.append(line)
        return out

    def read_variables(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        p = prefix.rstrip("/")
        return OrderedDict((k, v.copy()) for k, v in self.store.values.items()
                           if not p or k == p or k.startswith(p + "/"))

    def write_variables(self, values: dict):
        staged = {}
        for name, value in values.items():
            if name not in self.store.variables:
                raise VariableError(f"unknown variable {name!r}")
            arr = as_array(value)
            var = self.store.variables[name]
            if arr.dtype != var.dtype and arr.dtype != BOOL and var.dtype != BOOL:
                arr = arr.astype(var.dtype)
            var.check_assignable(arr)
            staged[name] = arr.copy()
        for name, arr in staged.items():
            self.store.values[name] = arr

    @property
    def op_count(self) -> int:
        return self.op_counter[0]


def build_executor(component: Component, input_spaces=None, backend="staged", seed=0, device_map=None,
                   fast_path=True, order="fifo") -> GraphExecutor:
    graph = build_meta_graph(component, input_spaces)
    built = build(graph, DeviceMap.from_config(device_map), backend, seed, order)
    return GraphExecutor(built, fast_path=fast_path)


class ComponentTest:
    """Builds exactly the subgraph rooted at one component and executes its API methods."""

    def __init__(self, component: Component, input_spaces=None, action_space=None,
                 backend: str = "staged", seed: int = 0, fast_path: bool = True):
        self.component = component
        self.action_space = action_space
        self.input_spaces = dict(input_spaces or {})
        self.executor = build_executor(component, self.input_spaces, backend, seed, fast_path=fast_path)

    @property
    def built(self) -> BuildResult:
        return self.executor.built

    def test(self, api_name, *args, expected=None, rtol=1e-9, atol=0.0, **kwargs):
        api_name = getattr(api_name, "__name__", api_name)
        out = self.executor.execute(api_name, *args, **kwargs)
        if expected is not None:
            for key, value in sp.flatten(expected).items():
                got = sp.flatten(out)[key]
                if not np.allclose(got, value, rtol=rtol, atol=atol):
                    raise AssertionError(f"{api_name}{key}: got {got}, expected {value}")
        return out

    def read_variables(self, prefix=""):
        return self.executor.read_variables(prefix)

    def write_variables(self, values):
        self.executor.write_variables(values)


def component_test(component, input_spaces=None, action_space=None, backend="staged", seed=0):
    return ComponentTest(component, input_spaces, action_space, backend, seed)
