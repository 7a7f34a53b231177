"""Copies (or Polyak-averages) one variable set into another."""
from __future__ import annotations

from modrl.errors import VariableError
from modrl.graph.component import Component, api, graph_fn


class WeightSync(Component):
    def __init__(self, name, tau=1.0, device=None):
        super().__init__(name, device)
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        self.tau = float(tau)

    @api
    def sync(self, source, target):
        self._graph_fn_sync(source, target)

    @graph_fn(returns=0)
    def _graph_fn_sync(self, ops, source, target):
        if set(source) != set(target):
            raise VariableError(f"{self.global_scope}: source and target variables differ: "
                                f"{sorted(set(source) ^ set(target))}")
        for key, value in source.items():
            var = ops.variable_of(target[key])
            if self.tau == 1.0:
                ops.assign(var, value)
            else:
                ops.assign(var, ops.add(ops.mul(value, self.tau), ops.mul(target[key], 1.0 - self.tau)))
