"""Components: nesting, API methods, graph functions, scopes and the variable barrier.

API methods are plain Python methods decorated with :func:`api`. Their bodies
only wire things together: they call graph functions of the same component
and API methods of direct subcomponents. What those calls do depends on the
active context (meta-graph assembly or define-by-run execution), so the same
body serves every phase.

Graph functions are the kernels. They are written against an ``ops`` facade::

    @graph_fn
    def _graph_fn_apply(self, ops, x):
        return ops.add(ops.matmul(x, ops.read(self.variables["weights"])), ...)
"""
from __future__ import annotations

import copy
import inspect
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from modrl import spaces as sp
from modrl.errors import (AssemblyError, BarrierViolationError, RegistrationError, ScopeError,
                          VariableError)
from modrl.tensor.core import Variable, as_array

_state = threading.local()


def current_context():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class use_context:
    """Install an assembly/execution context for the current thread."""

    def __init__(self, ctx):
        self.ctx = ctx

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self.ctx)
        return self.ctx

    def __exit__(self, *exc):
        _state.stack.pop()


@dataclass
class ApiMethodRecord:
    name: str
    params: list
    body: Callable
    defaults: dict = field(default_factory=dict)
    registered: bool = True


@dataclass
class GraphFnRecord:
    name: str
    params: list
    kernel: Callable
    returns: int = 1
    flatten: bool = True
    split: bool = False
    subtree: bool = False
    varargs: Optional[str] = None

    @property
    def arity(self):
        return len(self.params)

    def param_names(self, n_args):
        names = list(self.params)
        if self.varargs:
            names += [f"{self.varargs}{i}" for i in range(n_args - len(names))]
        return names[:n_args]


def _signature_params(fn, skip):
    sig = inspect.signature(fn)
    params, varargs = [], None
    for i, p in enumerate(sig.parameters.values()):
        if i < skip:
            continue
        if p.kind == p.VAR_POSITIONAL:
            varargs = p.name
        elif p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD):
            params.append(p.name)
    return params, varargs


def api(fn=None, *, name=None, defaults=None):
    """Mark a method as an API method. ``defaults`` maps parameter names to default spaces."""

    def deco(f):
        api_name = name or f.__name__

        def wrapper(self, *args, **kwargs):
            return self.call_api(api_name, *args, **kwargs)

        wrapper.__name__ = f.__name__
        wrapper.__doc__ = f.__doc__
        wrapper._modrl_api = (api_name, f, dict(defaults or {}))
        return wrapper

    return deco(fn) if fn is not None else deco


def graph_fn(fn=None, *, returns=1, flatten=True, split=False, subtree=False):
    """Mark a kernel. ``split`` calls it once per flat key of container inputs;
    ``flatten`` hands containers over as flat key maps and re-nests flat outputs.
    ``subtree`` lets the kernel touch variables of descendants, so it waits for them."""

    def deco(f):
        fn_name = f.__name__
        short = fn_name[len("_graph_fn_"):] if fn_name.startswith("_graph_fn_") else fn_name

        def wrapper(self, *args):
            return self.call_graph_fn(short, *args)

        wrapper.__name__ = fn_name
        wrapper._modrl_graph_fn = dict(name=short, kernel=f, returns=returns, flatten=flatten,
                                       split=split, subtree=subtree)
        return wrapper

    return deco(fn) if fn is not None else deco


class Component:
    """Named unit owning subcomponents, API methods, graph functions and variables."""

    # Graph-function parameters whose spaces are needed before variables can be
    # created. None means every parameter not fed by the component's own outputs.
    variable_inputs: Optional[tuple] = None

    def __init__(self, name: str, device: Optional[str] = None):
        if not name or "/" in name:
            raise ScopeError(f"invalid component name {name!r}")
        self.name = name
        self.parent: Optional[Component] = None
        self.device = device
        self.subcomponents: "OrderedDict[str, Component]" = OrderedDict()
        self.api_methods: "OrderedDict[str, ApiMethodRecord]" = OrderedDict()
        self.graph_functions: "OrderedDict[str, GraphFnRecord]" = OrderedDict()
        self.variables: "OrderedDict[str, Variable]" = OrderedDict()
        self.input_complete = False
        self.variables_created = False
        self.op_device: Optional[str] = None
        self.variable_device: Optional[str] = None
        self.build_seed = 0
        self._creating = False
        self._collect_decorated()

    # ------------------------------------------------------------------ registry
    def _collect_decorated(self):
        seen = set()
        for klass in type(self).__mro__:
            for attr, value in vars(klass).items():
                if attr in seen:
                    continue
                seen.add(attr)
                info = getattr(value, "_modrl_api", None)
                if info is not None:
                    api_name, body, defaults = info
                    if api_name not in self.api_methods:
                        self.register_api(api_name, body, defaults)
                gf = getattr(value, "_modrl_graph_fn", None)
                if gf is not None and gf["name"] not in self.graph_functions:
                    params, varargs = _signature_params(gf["kernel"], 2)
                    self.graph_functions[gf["name"]] = GraphFnRecord(
                        gf["name"], params, gf["kernel"], gf["returns"], gf["flatten"], gf["split"],
                        gf["subtree"], varargs)
        # alphabetical order keeps registries independent of class layout
        self.api_methods = OrderedDict(sorted(self.api_methods.items(), key=lambda kv: kv[0]))

    def register_api(self, name: str, body: Callable, defaults=None) -> ApiMethodRecord:
        if name in self.api_methods:
            raise RegistrationError(f"API method {name!r} already registered on {self.global_scope}")
        params, varargs = _signature_params(body, 1)
        if varargs:
            raise RegistrationError(f"API method {name!r} may not take *{varargs}")
        rec = ApiMethodRecord(name, params, body, dict(defaults or {}))
        self.api_methods[name] = rec
        return rec

    def __getattr__(self, name):
        # explicitly registered API methods are reachable as attributes too
        methods = self.__dict__.get("api_methods")
        if methods is None or name.startswith("__") or name not in methods:
            raise AttributeError(f"{type(self).__name__!s} has no attribute {name!r}")
        return lambda *a, **k: self.call_api(name, *a, **k)

    def call_api(self, name, *args, **kwargs):
        rec = self.api_methods.get(name)
        if rec is None or not rec.registered:
            raise AssemblyError(f"{name!r} is not a registered API method of {self.global_scope}")
        ctx = current_context()
        if ctx is None:
            raise AssemblyError(f"API method {self.global_scope}.{name} called outside of an "
                                "assembly or executor context")
        return ctx.call_api(self, rec, args, kwargs)

    def call_graph_fn(self, name, *args):
        rec = self.graph_functions[name]
        ctx = current_context()
        if ctx is None:
            raise AssemblyError(f"graph function {self.global_scope}.{name} called outside of a context")
        return ctx.call_graph_fn(self, rec, args)

    # ------------------------------------------------------------------- nesting
    def add_subcomponent(self, *children: "Component"):
        for child in children:
            if not isinstance(child, Component):
                raise RegistrationError(f"not a component: {child!r}")
            if child.parent is not None or child is self:
                raise RegistrationError(f"component {child.name!r} already has a parent")
            if child.name in self.subcomponents:
                raise ScopeError(f"scope collision: {self.global_scope}/{child.name}")
            child.parent = self
            self.subcomponents[child.name] = child
        return children[0] if len(children) == 1 else children

    @property
    def global_scope(self) -> str:
        names = []
        node = self
        while node is not None:
            names.append(node.name)
            node = node.parent
        return "/" + "/".join(reversed(names))

    @property
    def root(self) -> "Component":
        node = self
        while node.parent is not None:
            node = node.parent
        return node

    def walk(self):
        """Pre-order traversal of this component and all descendants."""
        yield self
        for child in self.subcomponents.values():
            yield from child.walk()

    def effective_device(self) -> Optional[str]:
        node = self
        while node is not None:
            if node.device is not None:
                return node.device
            node = node.parent
        return None

    def copy(self, name: Optional[str] = None, device: Optional[str] = None) -> "Component":
        """Unbuilt deep copy, detached from the parent."""
        memo = {id(self.parent): None} if self.parent is not None else {}
        clone = copy.deepcopy(self, memo)
        clone.parent = None
        if name is not None:
            clone.name = name
        if device is not None:
            clone.device = device
        for c in clone.walk():
            c.reset_build()
        return clone

    # ----------------------------------------------------------------- variables
    def reset_build(self):
        self.variables = OrderedDict()
        self.input_complete = False
        self.variables_created = False
        self.op_device = None
        self.variable_device = None

    def create_variables(self, input_spaces: dict):
        if not self.input_complete:
            raise BarrierViolationError(f"create_variables on {self.global_scope} before input-completeness")
        if self.variables_created:
            raise BarrierViolationError(f"variables of {self.global_scope} already created")
        self._creating = True
        try:
            self._create_variables(dict(input_spaces))
        finally:
            self._creating = False
        self.variables_created = True

    def _create_variables(self, input_spaces: dict):
        """Subclass hook: allocate variables from the graph-function input spaces."""

    def add_variable(self, name: str, value, trainable: bool = True) -> Variable:
        if not self._creating:
            raise BarrierViolationError(f"variable {name!r} added to {self.global_scope} outside create_variables")
        if name in self.variables:
            raise VariableError(f"duplicate variable {name!r} in {self.global_scope}")
        var = Variable(f"{self.global_scope}/{name}", as_array(value).copy(), trainable,
                       self.variable_device, owner=self.global_scope)
        self.variables[name] = var
        return var

    def rng_for(self, name: str) -> np.random.Generator:
        """Per-variable generator: initial values depend on seed and full name only."""
        full = f"{self.global_scope}/{name}"
        return np.random.default_rng([self.build_seed, zlib.crc32(full.encode())])

    def subtree_variables(self) -> "OrderedDict[str, Variable]":
        """Variables of this component and its descendants keyed by dotted relative path."""
        out = OrderedDict()
        base = len(self.global_scope) + 1
        for comp in self.walk():
            for var in comp.variables.values():
                out[var.full_name[base:].replace("/", ".")] = var
        return OrderedDict(sorted(out.items()))

    # -------------------------------------------------------- built-in functions
    @graph_fn(subtree=True)
    def _graph_fn_read_variables(self, ops):
        return {k: ops.read(v) for k, v in self.subtree_variables().items()}

    def expose_variables(self, name="get_variables"):
        """Register an API method returning reads of every variable in the subtree."""
        def get_variables(self):
            return self._graph_fn_read_variables()
        self.register_api(name, get_variables)

    def __repr__(self):
        return f"{type(self).__name__}({self.global_scope})"


# ---------------------------------------------------------------------------
# kernel invocation shared by every backend

def _is_leaf(value):
    return not isinstance(value, (dict, OrderedDict, tuple, list))


def _flat_dict(value):
    return isinstance(value, dict) and value and all(isinstance(k, str) and (k == "" or k.startswith("/"))
                                                   for k in value)


def invoke_kernel(component: Component, rec: GraphFnRecord, ops, args):
    """Run a kernel under the container-handling options of its record."""
    args = list(args)
    if rec.split and any(not _is_leaf(a) for a in args):
        containers = [i for i, a in enumerate(args) if not _is_leaf(a)]
        like = args[containers[0]]
        flats = {i: sp.flatten(args[i]) for i in containers}
        keys = list(flats[containers[0]].keys())
        for i in containers:
            if list(flats[i].keys()) != keys:
                raise AssemblyError(f"{component.global_scope}.{rec.name}: split inputs differ in structure")
        per_key = OrderedDict()
        for key in keys:
            call = [flats[i][key] if i in flats else a for i, a in enumerate(args)]
            per_key[key] = _normalize(rec, rec.kernel(component, ops, *call), component)
        if rec.returns == 1:
            return sp.unflatten(per_key, like=like)
        return tuple(sp.unflatten(OrderedDict((k, v[j]) for k, v in per_key.items()), like=like)
                     for j in range(rec.returns))
    if rec.flatten:
        args = [a if _is_leaf(a) else sp.flatten(a) for a in args]
    out = _normalize(rec, rec.kernel(component, ops, *args), component)
    if rec.returns == 0:
        return ()
    if rec.flatten:
        if rec.returns == 1:
            return sp.unflatten(out) if _flat_dict(out) else out
        return tuple(sp.unflatten(o) if _flat_dict(o) else o for o in out)
    return out


def _normalize(rec, out, component):
    if rec.returns == 0:
        return ()
    if rec.returns == 1:
        return out
    if not isinstance(out, tuple) or len(out) != rec.returns:
        raise AssemblyError(f"{component.global_scope}.{rec.name} must return {rec.returns} values")
    return out
