"""Epsilon-greedy exploration driven by a linear decay schedule."""
from __future__ import annotations

from modrl.graph.component import Component, api, graph_fn


class LinearDecay(Component):
    def __init__(self, name, start=1.0, end=0.05, steps=10000, device=None):
        super().__init__(name, device)
        self.start, self.end, self.steps = float(start), float(end), max(1, int(steps))

    @api
    def value(self, time_step):
        return self._graph_fn_value(time_step)

    @graph_fn
    def _graph_fn_value(self, ops, time_step):
        frac = ops.clip(ops.div(ops.cast(time_step, dtype="f64"), float(self.steps)), low=0.0, high=1.0)
        return ops.add(self.start, ops.mul(frac, self.end - self.start))


class EpsilonExploration(Component):
    def __init__(self, name, num_actions, start=1.0, end=0.05, decay_steps=10000, device=None):
        super().__init__(name, device)
        self.num_actions = int(num_actions)
        self.schedule = self.add_subcomponent(LinearDecay("schedule", start, end, decay_steps))

    @api
    def get_action(self, q_values, time_step):
        epsilon = self.schedule.value(time_step)
        return self._graph_fn_explore(q_values, epsilon)

    @api
    def get_greedy_action(self, q_values):
        return self._graph_fn_greedy(q_values)

    @graph_fn
    def _graph_fn_greedy(self, ops, q_values):
        return ops.argmax(q_values, axis=-1)

    @graph_fn
    def _graph_fn_explore(self, ops, q_values, epsilon):
        greedy = ops.argmax(q_values, axis=-1)
        random_action = ops.random_int_like(greedy, high=self.num_actions)
        u = ops.random_uniform_like(greedy)
        return ops.where(ops.less(u, epsilon), random_action, greedy)
