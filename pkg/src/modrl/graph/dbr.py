"""Define-by-run evaluation: kernels run eagerly along the flat call chain of an API."""
from __future__ import annotations

import inspect

import numpy as np

from modrl.errors import ExecutionError
from modrl.graph.component import invoke_kernel
from modrl.graph.meta import OpRecord
from modrl.tensor.core import Tensor
from modrl.tensor.ops import EagerOps

_MISSING = object()


def rng_factory(seed, counter, site):
    """Random streams keyed by (seed, execute counter, call site, op index) in both backends."""
    return lambda index: np.random.default_rng([seed, counter, site, index])


def lift(value):
    if isinstance(value, Tensor):
        return value
    if isinstance(value, dict):
        return {k: lift(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(lift(v) for v in value)
    return Tensor(value)


def record_value(rec, values):
    v = values.get(rec.id, _MISSING)
    if v is _MISSING:
        if rec.parent is None:
            raise ExecutionError(f"record {rec.id} ({rec.origin[0]}) has no value")
        v = record_value(rec.parent, values)[rec.key]
        values[rec.id] = v
    return v


def resolve(arg, values):
    if isinstance(arg, OpRecord):
        return record_value(arg, values)
    if isinstance(arg, dict):
        return {k: resolve(v, values) for k, v in arg.items()}
    if isinstance(arg, (tuple, list)):
        return tuple(resolve(v, values) for v in arg)
    return arg


class EagerEnv:
    """Everything an eager kernel invocation needs besides its arguments."""

    def __init__(self, store, tape=None, seed=0, counter=0, checks=True, op_counter=None):
        self.store = store
        self.tape = tape
        self.seed = seed
        self.counter = counter
        self.checks = checks
        self.op_counter = op_counter

    def ops_for(self, site, component):
        return EagerOps(self.store, self.tape, rng_factory(self.seed, self.counter, site.seq),
                        self.checks, component.global_scope, self.op_counter)


def run_site(site, args, env: EagerEnv):
    ops = env.ops_for(site, site.component)
    out = invoke_kernel(site.component, site.fn, ops, args)
    return lift(out)


def run_chain(sites, values: dict, env: EagerEnv):
    """Contracted path: evaluate every call site of one API in call order."""
    for site in sites:
        out = run_site(site, [resolve(a, values) for a in site.args], env)
        outs = (out,) if site.fn.returns == 1 else out
        for rec, v in zip(site.outs, outs):
            values[rec.id] = v
    return values


class RunContext:
    """Uncontracted path: API bodies run again, graph functions evaluate on the spot."""

    def __init__(self, sites, env: EagerEnv):
        self.sites = iter(sites)
        self.env = env

    def call_api(self, comp, rec, args, kwargs):
        bound = inspect.signature(rec.body).bind(comp, *args, **kwargs)
        bound.apply_defaults()
        return rec.body(comp, *bound.args[1:])

    def call_graph_fn(self, comp, fn, args):
        site = next(self.sites, None)
        if site is None or site.component is not comp or site.fn.name != fn.name:
            raise ExecutionError(f"API body diverged from its assembled call chain at {fn.name}",
                                 comp.global_scope)
        out = run_site(site, list(args), self.env)
        return None if fn.returns == 0 else out
