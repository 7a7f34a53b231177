"""Dense layers, small feed-forward networks and the dueling head."""
from __future__ import annotations

import numpy as np

from modrl import spaces as sp
from modrl.errors import SpaceError
from modrl.graph.component import Component, api, graph_fn

ACTIVATIONS = ("linear", "relu", "tanh")


def activate(ops, x, activation):
    if activation == "relu":
        return ops.relu(x)
    if activation == "tanh":
        return ops.tanh(x)
    return x


class Dense(Component):
    """Affine map with Glorot-uniform weights and zero bias."""

    def __init__(self, name, units, activation="linear", device=None):
        super().__init__(name, device)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.units = int(units)
        self.activation = activation

    def _create_variables(self, spaces):
        space = spaces["inputs"]
        if not isinstance(space, sp.BoxSpace) or len(space.shape) != 1:
            raise SpaceError(f"{self.global_scope}: dense input must be a rank-1 box, got {space!r}")
        n = space.shape[0]
        limit = np.sqrt(6.0 / (n + self.units))
        self.add_variable("weights", self.rng_for("weights").uniform(-limit, limit, (n, self.units)))
        self.add_variable("bias", np.zeros(self.units))

    @api
    def apply(self, inputs):
        return self._graph_fn_apply(inputs)

    @graph_fn
    def _graph_fn_apply(self, ops, inputs):
        x = ops.cast(inputs, dtype="f64")
        y = ops.add(ops.matmul(x, ops.read(self.variables["weights"])), ops.read(self.variables["bias"]))
        return activate(ops, y, self.activation)


class NeuralNetwork(Component):
    """Stack of dense layers given as [{"units": 32, "activation": "relu"}, ...]."""

    def __init__(self, name, layers, device=None):
        super().__init__(name, device)
        self.layers = [self.add_subcomponent(Dense(f"dense-{i}", spec["units"], spec.get("activation", "relu")))
                       for i, spec in enumerate(layers)]
        self.expose_variables()

    @api
    def apply(self, inputs):
        x = inputs
        for layer in self.layers:
            x = layer.apply(x)
        return x


class DuelingAggregation(Component):
    """q = v + a - mean(a)."""

    @api
    def aggregate(self, value, advantages):
        return self._graph_fn_aggregate(value, advantages)

    @graph_fn
    def _graph_fn_aggregate(self, ops, value, advantages):
        centred = ops.sub(advantages, ops.mean(advantages, axis=-1, keepdims=True))
        return ops.add(value, centred)
