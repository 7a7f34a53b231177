"""Staged nodes and the symbolic ops facade that records them."""
from __future__ import annotations

import numpy as np

from modrl.errors import ExecutionError, ShapeError
from modrl.tensor.autodiff import READ_OP, backprop
from modrl.tensor.core import as_array, dtype_of
from modrl.tensor.ops import Ops
from modrl.tensor.primitives import PRIMITIVES, infer_primitive

PLACEHOLDER = "placeholder"
CONSTANT = "constant"
ASSIGN = "assign"
CHECK = "check"
EFFECT_OPS = (ASSIGN, CHECK)


class Node:
    """One staged operation. ``shape`` may contain None for run-time extents."""

    __slots__ = ("id", "op", "inputs", "attrs", "shape", "dtype", "scope", "device",
                 "site", "local", "api", "var_name")

    def __init__(self, op, inputs, attrs, shape, dtype, scope=None, site=-1, local=0, api=None):
        self.id = -1
        self.op = op
        self.inputs = list(inputs)
        self.attrs = attrs
        self.shape = tuple(shape)
        self.dtype = dtype
        self.scope = scope
        self.device = None
        self.site = site
        self.local = local
        self.api = api
        self.var_name = attrs.get("var") if op == READ_OP else None

    @property
    def output(self):
        return self

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def order_key(self):
        return (self.site, self.local)

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.shape}, scope={self.scope})"


class NodeTable:
    """Build-time node store. Ids are assigned once the build finishes."""

    def __init__(self):
        self.nodes: list = []
        self.variables: dict = {}
        self._locals: dict = {}

    def add(self, node: Node) -> Node:
        local = self._locals.get(node.site, 0)
        node.local = local
        self._locals[node.site] = local + 1
        self.nodes.append(node)
        return node

    def finalize(self):
        """Renumber by (call-site order, creation index) so ids do not depend on build order."""
        self.nodes.sort(key=lambda n: n.order_key)
        for i, node in enumerate(self.nodes):
            node.id = i
        return self.nodes


class SymbolicOps(Ops):
    """Records nodes instead of computing; shapes are inferred per primitive."""

    def __init__(self, table: NodeTable, site: int, scope=None, api=None):
        super().__init__(rng_factory=None, checks=True, scope=scope)
        self.table = table
        self.site = site
        self.api = api

    def _node(self, op, inputs, attrs, shape, dtype):
        return self.table.add(Node(op, inputs, attrs, shape, dtype, self.scope, self.site, api=self.api))

    def is_tensor(self, value):
        return isinstance(value, Node)

    def constant(self, value):
        arr = as_array(value)
        return self._node(CONSTANT, [], {"value": arr}, arr.shape, arr.dtype)

    def apply(self, op_code, inputs, attrs=None):
        xs = [self.lift(x) for x in inputs]
        attrs = dict(attrs or {})
        prim = PRIMITIVES[op_code]
        if prim.random:
            attrs["_rand"] = self.random_index
            self.random_index += 1
        try:
            shape, dtype = infer_primitive(op_code, [x.shape for x in xs], [x.dtype for x in xs], attrs)
        except Exception as e:
            if self.scope:
                raise type(e)(f"[{self.scope}] {op_code}: {e}") from e
            raise
        return self._node(op_code, xs, attrs, shape, dtype)

    def read(self, variable):
        self.table.variables.setdefault(variable.full_name, variable)
        return self._node(READ_OP, [], {"var": variable.full_name}, variable.shape, variable.dtype)

    def assign(self, variable, value):
        value = self.lift(value)
        if value.dtype != variable.dtype:
            value = self.cast(value, dtype=variable.dtype.name)
        shape = value.shape
        if None not in shape and shape != variable.shape and int(np.prod(shape)) != 1:
            raise ShapeError(f"[{self.scope}] cannot assign shape {shape} to {variable.full_name} "
                             f"{variable.shape}")
        self.table.variables.setdefault(variable.full_name, variable)
        return self._node(ASSIGN, [value], {"var": variable.full_name}, (), value.dtype)

    def check(self, cond, message):
        cond = self.lift(cond)
        return self._node(CHECK, [cond], {"message": message}, (), cond.dtype)

    def gradients(self, loss, wrt):
        records = sorted((n for n in self.table.nodes if n.site <= self.site), key=lambda n: n.order_key)
        return backprop(records, loss, list(wrt), self)

    def variable_of(self, tensor):
        name = getattr(tensor, "var_name", None)
        if name is None:
            raise ExecutionError("tensor is not a variable read", self.scope)
        return self.table.variables[name]


def placeholder(table: NodeTable, api: str, key: str, shape, dtype) -> Node:
    return table.add(Node(PLACEHOLDER, [], {"api": api, "key": key}, shape, dtype_of(dtype),
                          site=-1, api=api))
