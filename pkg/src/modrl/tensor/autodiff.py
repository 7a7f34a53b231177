"""Reverse-mode differentiation over recorded primitive executions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from modrl.errors import GradientError
from modrl.tensor.core import F64, Tensor, Variable, as_array
from modrl.tensor.primitives import PRIMITIVES

READ_OP = "read_variable"


@dataclass
class TapeEntry:
    op: str
    inputs: list
    output: object
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of executed primitives; backward visits it in reverse."""

    def __init__(self):
        self.records: list = []

    def record(self, op, inputs, output, attrs=None):
        self.records.append(TapeEntry(op, list(inputs), output, dict(attrs or {})))

    def __len__(self):
        return len(self.records)


def _key(item):
    if isinstance(item, Variable):
        return ("var", item.full_name)
    name = getattr(item, "var_name", None)
    if name is not None:
        return ("var", name)
    return ("t", id(item))


def backprop(records: Sequence, loss, wrt: Sequence, ops) -> list:
    """Cotangents of scalar ``loss`` with respect to each entry of ``wrt``.

    ``records`` are entries with ``op``, ``inputs``, ``output`` and ``attrs`` in
    execution order: a :class:`Tape` for eager runs, the staged node table for
    staged builds. Variables (or tensors tagged as variable reads) receive the
    sum over all of their reads. Anything unreachable gets zeros.
    """
    if tuple(loss.shape) != ():
        raise GradientError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    grads = {id(loss): ops.ones_like(loss)}
    var_grads: dict = {}
    for rec in reversed(records):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        if rec.op == READ_OP:
            name = rec.attrs["var"]
            var_grads[name] = g if name not in var_grads else ops.add(var_grads[name], g)
            continue
        prim = PRIMITIVES.get(rec.op)
        if prim is None or prim.vjp is None:
            continue
        in_grads = prim.vjp(ops, g, rec.inputs, rec.output, rec.attrs)
        for x, gx in zip(rec.inputs, in_grads):
            if gx is None or x.dtype != F64:
                continue
            k = id(x)
            grads[k] = gx if k not in grads else ops.add(grads[k], gx)
    out = []
    for w in wrt:
        kind, ident = _key(w)
        g = var_grads.get(ident) if kind == "var" else grads.get(ident)
        if g is None:
            g = ops.constant(np.zeros(w.shape, F64)) if isinstance(w, Variable) else ops.zeros_like(w, dtype="f64")
        out.append(g)
    return out


def grad(tape: Tape, loss: Tensor, wrt: Sequence, ops=None) -> list:
    from modrl.tensor.ops import EagerOps

    ops = EagerOps() if ops is None else ops
    return backprop(tape.records, loss, wrt, ops)


def finite_diff(fn: Callable, at, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``at``, element by element."""
    x = as_array(at).astype(F64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = _scalar(fn(x.copy()))
        flat[i] = orig - step
        down = _scalar(fn(x.copy()))
        flat[i] = orig
        res[i] = (up - down) / (2.0 * step)
    return out


def _scalar(value) -> float:
    arr = np.asarray(getattr(value, "data", value), dtype=F64)
    if arr.shape != ():
        raise GradientError(f"finite_diff function must return a scalar, got {arr.shape}")
    return float(arr)
