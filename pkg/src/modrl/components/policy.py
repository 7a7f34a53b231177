"""Policies: a network body plus action heads derived from the action space."""
from __future__ import annotations

import numpy as np

from modrl import spaces as sp
from modrl.errors import SpaceError
from modrl.graph.component import Component, api, graph_fn
from modrl.components.layers import Dense, DuelingAggregation, NeuralNetwork


def is_discrete(space) -> bool:
    return isinstance(space, sp.IntBox) and space.num_categories > 0 and space.shape == ()


class ActionAdapter(Component):
    """Maps network features to a deterministic action for one leaf of the action space."""

    def __init__(self, name, leaf, device=None):
        super().__init__(name, device)
        if leaf.is_container:
            raise SpaceError("action adapters take leaf spaces")
        self.leaf = leaf
        size = int(np.prod(leaf.shape, dtype=np.int64))
        if isinstance(leaf, sp.IntBox):
            if not leaf.num_categories:
                raise SpaceError(f"integer action {leaf!r} needs num_categories")
            units = size * leaf.num_categories
        else:
            units = size
        self.layer = self.add_subcomponent(Dense("layer", max(units, 1)))

    @api
    def get_action(self, features):
        return self._graph_fn_action(self.layer.apply(features))

    @graph_fn
    def _graph_fn_action(self, ops, logits):
        leaf = self.leaf
        if isinstance(leaf, sp.IntBox):
            shaped = ops.reshape(logits, shape=(-1,) + leaf.shape + (leaf.num_categories,))
            return ops.argmax(shaped, axis=-1)
        shaped = ops.reshape(logits, shape=(-1,) + leaf.shape)
        if isinstance(leaf, sp.BoolBox):
            return ops.greater(shaped, 0.0)
        low, high = leaf.low, leaf.high
        if low is None or high is None or not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            return shaped
        low = np.broadcast_to(np.asarray(low, np.float64), leaf.shape)
        high = np.broadcast_to(np.asarray(high, np.float64), leaf.shape)
        unit = ops.mul(ops.add(ops.tanh(shaped), 1.0), 0.5)
        return ops.add(low, ops.mul(unit, high - low))


class Policy(Component):
    """Q-network policy for a single categorical action, generic adapters otherwise."""

    def __init__(self, name, network, action_space, dueling=False, device=None):
        super().__init__(name, device)
        self.action_space = sp.space_from_spec(action_space)
        self.network = self.add_subcomponent(NeuralNetwork("network", network))
        self.dueling = bool(dueling)
        self.discrete = is_discrete(self.action_space)
        if self.discrete:
            n = self.action_space.num_categories
            self.num_actions = n
            if self.dueling:
                self.value_head = self.add_subcomponent(Dense("value-head", 1))
                self.advantage_head = self.add_subcomponent(Dense("advantage-head", n))
                self.dueling_layer = self.add_subcomponent(DuelingAggregation("dueling"))
            else:
                self.q_head = self.add_subcomponent(Dense("q-head", n))
            self.register_api("get_q", Policy._get_q)
            self.register_api("get_action", Policy._get_greedy)
        else:
            if self.dueling:
                raise SpaceError("dueling heads need a single categorical action space")
            self.adapters = {}
            for i, (key, leaf) in enumerate(sp.flatten(self.action_space).items()):
                self.adapters[key] = self.add_subcomponent(ActionAdapter(f"action-adapter-{i}", leaf))
            self.register_api("get_action", Policy._get_structured)
        self.expose_variables()

    def _get_q(self, states):
        h = self.network.apply(states)
        if self.dueling:
            return self.dueling_layer.aggregate(self.value_head.apply(h), self.advantage_head.apply(h))
        return self.q_head.apply(h)

    def _get_greedy(self, states):
        return self._graph_fn_argmax(self.get_q(states))

    def _get_structured(self, states):
        h = self.network.apply(states)
        flat = {key: adapter.get_action(h) for key, adapter in self.adapters.items()}
        return sp.unflatten(flat, like=self.action_space)

    @graph_fn
    def _graph_fn_argmax(self, ops, q_values):
        return ops.argmax(q_values, axis=-1)
