"""Gradient-descent optimizers applying updates to variables passed in by reference."""
from __future__ import annotations

import math

import numpy as np

from modrl.errors import VariableError
from modrl.graph.component import Component, api, graph_fn


class Optimizer(Component):
    def __init__(self, name, learning_rate=1e-3, device=None):
        super().__init__(name, device)
        self.learning_rate = float(learning_rate)

    @api
    def apply(self, variables, grads):
        self._graph_fn_step(variables, grads)

    @api
    def minimize(self, loss, variables):
        grads = self._graph_fn_gradients(loss, variables)
        self._graph_fn_step(variables, grads)
        return grads

    @graph_fn
    def _graph_fn_gradients(self, ops, loss, variables):
        keys = list(variables)
        grads = ops.gradients(loss, [variables[k] for k in keys])
        return dict(zip(keys, grads))

    @graph_fn(returns=0)
    def _graph_fn_step(self, ops, variables, grads):
        if set(variables) != set(grads):
            raise VariableError(f"{self.global_scope}: gradient keys do not match variables")
        self._update(ops, variables, grads)

    def _update(self, ops, variables, grads):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, ops, variables, grads):
        for key, value in variables.items():
            ops.assign(ops.variable_of(value), ops.sub(value, ops.mul(grads[key], self.learning_rate)))


class Adam(Optimizer):
    variable_inputs = ("variables",)

    def __init__(self, name, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, device=None):
        super().__init__(name, learning_rate, device)
        self.beta1, self.beta2, self.epsilon = float(beta1), float(beta2), float(epsilon)

    def _create_variables(self, spaces):
        from modrl import spaces as sp
        for key, leaf in sp.flatten(spaces["variables"]).items():
            slot = key.lstrip("/")
            self.add_variable(f"m.{slot}", np.zeros(leaf.shape), trainable=False)
            self.add_variable(f"v.{slot}", np.zeros(leaf.shape), trainable=False)
        self.add_variable("step", np.zeros(()), trainable=False)

    def _update(self, ops, variables, grads):
        slots = self.variables
        t = ops.add(ops.read(slots["step"]), 1.0)
        ops.assign(slots["step"], t)
        bias1 = ops.sub(1.0, ops.exp(ops.mul(t, math.log(self.beta1))))
        bias2 = ops.sub(1.0, ops.exp(ops.mul(t, math.log(self.beta2))))
        for key, value in variables.items():
            slot = key.lstrip("/")
            g = grads[key]
            m = ops.add(ops.mul(ops.read(slots[f"m.{slot}"]), self.beta1), ops.mul(g, 1.0 - self.beta1))
            v = ops.add(ops.mul(ops.read(slots[f"v.{slot}"]), self.beta2),
                        ops.mul(ops.square(g), 1.0 - self.beta2))
            ops.assign(slots[f"m.{slot}"], m)
            ops.assign(slots[f"v.{slot}"], v)
            step = ops.div(ops.div(m, bias1), ops.add(ops.sqrt(ops.div(v, bias2)), self.epsilon))
            ops.assign(ops.variable_of(value), ops.sub(value, ops.mul(step, self.learning_rate)))


OPTIMIZERS = {"sgd": SGD, "adam": Adam}
