"""State preprocessors. ``preprocess`` may update internal statistics, ``apply`` never does."""
from __future__ import annotations

import numpy as np

from modrl import spaces as sp
from modrl.graph.component import Component, api, graph_fn


class Preprocessor(Component):
    @api
    def preprocess(self, inputs):
        return self._graph_fn_call(inputs)

    @api
    def apply(self, inputs):
        return self._graph_fn_call(inputs)

    @graph_fn(split=True)
    def _graph_fn_call(self, ops, inputs):
        raise NotImplementedError


class Scale(Preprocessor):
    def __init__(self, name, factor, device=None):
        super().__init__(name, device)
        self.factor = float(factor)

    @graph_fn(split=True)
    def _graph_fn_call(self, ops, inputs):
        return ops.mul(ops.cast(inputs, dtype="f64"), self.factor)


class Clip(Preprocessor):
    def __init__(self, name, low, high, device=None):
        super().__init__(name, device)
        self.low, self.high = float(low), float(high)

    @graph_fn(split=True)
    def _graph_fn_call(self, ops, inputs):
        return ops.clip(inputs, low=self.low, high=self.high)


class Flatten(Preprocessor):
    """Collapses everything after the batch rank into one axis."""

    @graph_fn(split=True)
    def _graph_fn_call(self, ops, inputs):
        size = int(np.prod([d for d in inputs.shape[1:]], dtype=np.int64))
        return ops.reshape(inputs, shape=(-1, size))


class MovingAverageNormalize(Preprocessor):
    """Normalizes with running mean and variance, merged batch by batch."""

    variable_inputs = ("inputs",)

    def __init__(self, name, epsilon=1e-8, device=None):
        super().__init__(name, device)
        self.epsilon = float(epsilon)

    def _create_variables(self, spaces):
        space = spaces["inputs"]
        self.add_variable("mean", np.zeros(space.shape), trainable=False)
        self.add_variable("var", np.ones(space.shape), trainable=False)
        self.add_variable("count", np.zeros(()), trainable=False)

    @api
    def preprocess(self, inputs):
        return self._graph_fn_update(inputs)

    @api
    def apply(self, inputs):
        return self._graph_fn_call(inputs)

    def _normalize(self, ops, x, mean, var):
        return ops.div(ops.sub(x, mean), ops.sqrt(ops.add(var, self.epsilon)))

    @graph_fn
    def _graph_fn_call(self, ops, inputs):
        v = self.variables
        return self._normalize(ops, ops.cast(inputs, dtype="f64"), ops.read(v["mean"]), ops.read(v["var"]))

    @graph_fn
    def _graph_fn_update(self, ops, inputs):
        v = self.variables
        x = ops.cast(inputs, dtype="f64")
        mean, var, count = ops.read(v["mean"]), ops.read(v["var"]), ops.read(v["count"])
        n = ops.cast(ops.dim(x, axis=0), dtype="f64")
        batch_mean = ops.mean(x, axis=0)
        batch_var = ops.mean(ops.square(ops.sub(x, batch_mean)), axis=0)
        total = ops.add(count, n)
        delta = ops.sub(batch_mean, mean)
        new_mean = ops.add(mean, ops.mul(delta, ops.div(n, total)))
        m2 = ops.add(ops.add(ops.mul(var, count), ops.mul(batch_var, n)),
                     ops.mul(ops.square(delta), ops.div(ops.mul(count, n), total)))
        new_var = ops.div(m2, total)
        ops.assign(v["mean"], new_mean)
        ops.assign(v["var"], new_var)
        ops.assign(v["count"], total)
        return self._normalize(ops, x, new_mean, new_var)


class PreprocessorStack(Component):
    """Applies preprocessors in order; an empty stack passes inputs through."""

    def __init__(self, name, preprocessors=(), device=None):
        super().__init__(name, device)
        self.stages = [self.add_subcomponent(p) for p in preprocessors]

    @api
    def preprocess(self, inputs):
        for stage in self.stages:
            inputs = stage.preprocess(inputs)
        return inputs

    @api
    def apply(self, inputs):
        for stage in self.stages:
            inputs = stage.apply(inputs)
        return inputs


PREPROCESSORS = {"scale": Scale, "clip": Clip, "flatten": Flatten, "normalize": MovingAverageNormalize}


def make_preprocessor(spec: dict, index: int) -> Preprocessor:
    spec = dict(spec)
    kind = spec.pop("type")
    return PREPROCESSORS[kind](f"{kind}-{index}", **spec)
