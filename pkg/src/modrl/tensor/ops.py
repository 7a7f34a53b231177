"""Operator facade handed to graph-function kernels.

Kernels receive an ``ops`` object as their first argument and express all
numeric work through it (``ops.matmul(x, w)``, ``ops.read(var)``...). The
eager implementation here evaluates immediately; the staged one (see
``modrl.graph.staged``) records nodes instead. Kernel code is identical for
both, which is what keeps the two backends equivalent.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from modrl.errors import ExecutionError, ModrlError
from modrl.tensor.autodiff import READ_OP, Tape, backprop
from modrl.tensor.core import Tensor, Variable, as_array
from modrl.tensor.primitives import PRIMITIVES, eval_primitive


class Ops:
    """Base facade. Every primitive is available as a method of the same name."""

    def __init__(self, rng_factory: Optional[Callable] = None, checks: bool = True, scope=None):
        self.rng_factory = rng_factory
        self.checks = checks
        self.scope = scope
        self.random_index = 0

    # subclass hooks -----------------------------------------------------
    def apply(self, op_code: str, inputs, attrs=None):
        raise NotImplementedError

    def constant(self, value):
        raise NotImplementedError

    def read(self, variable: Variable):
        raise NotImplementedError

    def assign(self, variable: Variable, value):
        raise NotImplementedError

    def check(self, cond, message: str):
        raise NotImplementedError

    def gradients(self, loss, wrt):
        raise NotImplementedError

    def variable_of(self, tensor) -> Variable:
        raise NotImplementedError

    def is_tensor(self, value) -> bool:
        raise NotImplementedError

    # helpers --------------------------------------------------------------
    def lift(self, value):
        return value if self.is_tensor(value) else self.constant(value)

    def next_rng(self):
        if self.rng_factory is None:
            raise ExecutionError("random op used without an rng source", self.scope)
        rng = self.rng_factory(self.random_index)
        self.random_index += 1
        return rng

    def scatter_assign(self, variable: Variable, indices, updates):
        current = self.read(variable)
        self.assign(variable, self.scatter_update(current, indices, updates))


def _make_method(name):
    def method(self, *inputs, **attrs):
        return self.apply(name, inputs, attrs)
    method.__name__ = name
    return method


for _name in PRIMITIVES:
    setattr(Ops, _name, _make_method(_name))


class VariableStore:
    """Mutable name -> array map owned by one executor."""

    def __init__(self, variables=None):
        self.variables: dict = {}
        self.values: dict = {}
        for var in variables or ():
            self.add(var)

    def add(self, var: Variable, value=None):
        self.variables[var.full_name] = var
        self.values[var.full_name] = as_array(var.initial_value if value is None else value).copy()

    def get(self, var) -> np.ndarray:
        return self.values[getattr(var, "full_name", var)]

    def set(self, var, value):
        name = getattr(var, "full_name", var)
        arr = as_array(value)
        self.variables[name].check_assignable(arr)
        self.values[name] = arr

    def __contains__(self, name):
        return name in self.values


class OverlayStore(VariableStore):
    """Copy-on-write view used for dry runs: writes never reach the base store."""

    def __init__(self, base: VariableStore):
        self.base = base
        self.variables = base.variables
        self.values = {}

    def get(self, var):
        name = getattr(var, "full_name", var)
        if name in self.values:
            return self.values[name]
        return self.base.get(name)

    def set(self, var, value):
        name = getattr(var, "full_name", var)
        arr = as_array(value)
        self.variables[name].check_assignable(arr)
        self.values[name] = arr


class EagerOps(Ops):
    """Evaluates each op immediately, optionally recording it on a tape."""

    def __init__(self, store: Optional[VariableStore] = None, tape: Optional[Tape] = None,
                 rng_factory=None, checks=True, scope=None, counter=None):
        super().__init__(rng_factory, checks, scope)
        self.store = store
        self.tape = tape
        self.counter = counter

    def is_tensor(self, value):
        return isinstance(value, Tensor)

    def constant(self, value):
        return Tensor(value)

    def apply(self, op_code, inputs, attrs=None):
        xs = [self.lift(x) for x in inputs]
        attrs = dict(attrs or {})
        rng = self.next_rng() if PRIMITIVES[op_code].random else None
        try:
            out = Tensor(eval_primitive(op_code, xs, attrs, rng))
        except ModrlError as e:
            if isinstance(e, ExecutionError) and e.scope:
                raise
            raise type(e)(f"[{self.scope}] {op_code}: {e}") if self.scope else e
        except (ValueError, IndexError, TypeError, FloatingPointError) as e:
            raise ExecutionError(f"{op_code}: {e}", self.scope) from e
        if self.counter is not None:
            self.counter[0] += 1
        if self.tape is not None:
            self.tape.record(op_code, xs, out, attrs)
        return out

    def read(self, variable):
        if self.store is None:
            raise ExecutionError("no variable store bound", self.scope)
        out = Tensor(self.store.get(variable), var_name=variable.full_name)
        if self.tape is not None:
            self.tape.record(READ_OP, [], out, {"var": variable.full_name})
        return out

    def assign(self, variable, value):
        if self.store is None:
            raise ExecutionError("no variable store bound", self.scope)
        data = self.lift(value).data
        if data.dtype != variable.dtype:
            data = data.astype(variable.dtype)
        self.store.set(variable, np.broadcast_to(data, variable.shape) if data.shape != variable.shape
                       and data.size == 1 else data)

    def check(self, cond, message):
        if self.checks and not np.all(self.lift(cond).data):
            raise ExecutionError(message, self.scope)

    def gradients(self, loss, wrt):
        if self.tape is None:
            raise ExecutionError("gradients requested without an active tape", self.scope)
        plain = EagerOps(scope=self.scope)
        return backprop(list(self.tape.records), loss, list(wrt), plain)

    def variable_of(self, tensor):
        name = getattr(tensor, "var_name", None)
        if name is None or self.store is None:
            raise ExecutionError("tensor is not a variable read", self.scope)
        return self.store.variables[name]
