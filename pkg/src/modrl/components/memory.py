"""Replay memories kept in variables: a uniform ring buffer and prioritized replay."""
from __future__ import annotations

import numpy as np

from modrl import spaces as sp
from modrl.errors import SpaceError
from modrl.graph.component import Component, api, graph_fn


def _buffers(component, space, capacity):
    if not isinstance(space, sp.Dict):
        raise SpaceError(f"{component.global_scope}: records must be a Dict space, got {space!r}")
    component.record_keys = list(sp.flatten(space))
    for key, leaf in sp.flatten(space).items():
        if leaf.is_container:
            raise SpaceError("record leaves must be boxes")
        component.add_variable("buffer" + key.replace("/", "."),
                               np.zeros((capacity,) + leaf.shape, dtype=leaf.dtype), trainable=False)


def _buffer_names(records):
    return {key: "buffer" + key.replace("/", ".") for key in records}


class RingBuffer(Component):
    """Shared insert/gather logic for variable-backed FIFO storage."""

    variable_inputs = ("records",)

    def __init__(self, name, capacity, device=None):
        super().__init__(name, device)
        if int(capacity) < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)

    def _create_variables(self, spaces):
        _buffers(self, spaces["records"], self.capacity)
        self.add_variable("index", np.zeros((), dtype=np.int64), trainable=False)
        self.add_variable("size", np.zeros((), dtype=np.int64), trainable=False)

    def _write(self, ops, records):
        v = self.variables
        first = next(iter(records.values()))
        n = ops.dim(first, axis=0)
        index = ops.read(v["index"])
        idx = ops.mod(ops.add(index, ops.arange(n)), self.capacity)
        for key, name in _buffer_names(records).items():
            ops.assign(v[name], ops.scatter_update(ops.read(v[name]), idx, records[key]))
        ops.assign(v["index"], ops.mod(ops.add(index, n), self.capacity))
        ops.assign(v["size"], ops.minimum(ops.add(ops.read(v["size"]), n), self.capacity))
        return idx

    def _gather(self, ops, idx):
        return {key: ops.gather(ops.read(self.variables[name]), idx)
                for key, name in _buffer_names(self.record_keys).items()}

    @api
    def get_size(self):
        return self._graph_fn_size()

    @graph_fn
    def _graph_fn_size(self, ops):
        return ops.read(self.variables["size"])


class ReplayMemory(RingBuffer):
    """Uniform sampling with replacement."""

    @api
    def insert_records(self, records):
        self._graph_fn_insert(records)

    @api
    def get_records(self, num_records):
        return self._graph_fn_sample(num_records)

    @graph_fn(returns=0)
    def _graph_fn_insert(self, ops, records):
        self._write(ops, records)

    @graph_fn(returns=2)
    def _graph_fn_sample(self, ops, num_records):
        size = ops.read(self.variables["size"])
        ops.check(ops.greater(size, 0), "cannot sample from an empty memory")
        u = ops.random_uniform(num_records)
        idx = ops.cast(ops.floordiv(ops.mul(u, ops.cast(size, dtype="f64")), 1.0), dtype="i64")
        return self._gather(ops, idx), idx


class SegmentTree(Component):
    """Sum and min trees over a power-of-two number of leaves, stored as variables."""

    variable_inputs = ()

    def __init__(self, name, capacity, device=None):
        super().__init__(name, device)
        capacity = int(capacity)
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"segment tree capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.depth = capacity.bit_length() - 1

    def _create_variables(self, spaces):
        self.add_variable("sum", np.zeros(2 * self.capacity), trainable=False)
        self.add_variable("min", np.full(2 * self.capacity, np.inf), trainable=False)

    @api
    def update(self, indices, values):
        self._graph_fn_update(indices, values)

    @api
    def index_of_prefix_sum(self, prefix_sums):
        return self._graph_fn_find(prefix_sums)

    @api
    def get_values(self, indices):
        return self._graph_fn_values(indices)

    @api
    def get_sum(self):
        return self._graph_fn_total()

    @api
    def get_min(self):
        return self._graph_fn_minimum()

    @graph_fn(returns=0)
    def _graph_fn_update(self, ops, indices, values):
        cap = self.capacity
        ops.check(ops.logical_and(ops.greater_equal(indices, 0), ops.less(indices, cap)),
                  "segment tree index out of range")
        node = ops.add(indices, cap)
        total = ops.scatter_update(ops.read(self.variables["sum"]), node, values)
        low = ops.scatter_update(ops.read(self.variables["min"]), node, values)
        for _ in range(self.depth):
            node = ops.floordiv(node, 2)
            left = ops.mul(node, 2)
            right = ops.add(left, 1)
            total = ops.scatter_update(total, node, ops.add(ops.gather(total, left), ops.gather(total, right)))
            low = ops.scatter_update(low, node, ops.minimum(ops.gather(low, left), ops.gather(low, right)))
        ops.assign(self.variables["sum"], total)
        ops.assign(self.variables["min"], low)

    @graph_fn
    def _graph_fn_find(self, ops, prefix_sums):
        tree = ops.read(self.variables["sum"])
        p = ops.cast(prefix_sums, dtype="f64")
        total = ops.gather(tree, 1)
        ops.check(ops.logical_and(ops.greater_equal(p, 0.0), ops.less(p, total)),
                  "prefix sum outside [0, total)")
        node = ops.ones_like(p, dtype="i64")
        for _ in range(self.depth):
            left = ops.mul(node, 2)
            left_sum = ops.gather(tree, left)
            go_right = ops.greater_equal(p, left_sum)
            p = ops.where(go_right, ops.sub(p, left_sum), p)
            node = ops.where(go_right, ops.add(left, 1), left)
        return ops.sub(node, self.capacity)

    @graph_fn
    def _graph_fn_values(self, ops, indices):
        return ops.gather(ops.read(self.variables["sum"]), ops.add(indices, self.capacity))

    @graph_fn
    def _graph_fn_total(self, ops):
        return ops.gather(ops.read(self.variables["sum"]), 1)

    @graph_fn
    def _graph_fn_minimum(self, ops):
        return ops.gather(ops.read(self.variables["min"]), 1)


class PrioritizedReplay(RingBuffer):
    """Proportional prioritized replay with stratified sampling and importance weights."""

    def __init__(self, name, capacity, alpha=0.6, beta=0.4, epsilon=1e-6, device=None):
        super().__init__(name, capacity, device)
        self.alpha, self.beta, self.epsilon = float(alpha), float(beta), float(epsilon)
        leaves = 1
        while leaves < self.capacity:
            leaves *= 2
        self.segment_tree = self.add_subcomponent(SegmentTree("segment-tree", leaves))

    def _create_variables(self, spaces):
        super()._create_variables(spaces)
        self.add_variable("max-priority", np.ones(()), trainable=False)

    @api
    def insert_records(self, records):
        indices, priorities = self._graph_fn_insert(records)
        self.segment_tree.update(indices, priorities)

    @api
    def get_records(self, num_records):
        total = self.segment_tree.get_sum()
        indices = self._graph_fn_clamp(self.segment_tree.index_of_prefix_sum(
            self._graph_fn_stratify(num_records, total)))
        priorities = self.segment_tree.get_values(indices)
        records, weights = self._graph_fn_fetch(indices, priorities, total)
        return records, indices, weights

    @api
    def update_records(self, indices, td_errors):
        indices, priorities = self._graph_fn_priorities(indices, td_errors)
        self.segment_tree.update(indices, priorities)

    @api
    def insert_records_with_priorities(self, records, td_errors):
        indices, priorities = self._graph_fn_insert_scored(records, td_errors)
        self.segment_tree.update(indices, priorities)

    @graph_fn(returns=2)
    def _graph_fn_insert_scored(self, ops, records, td_errors):
        return self._write(ops, records), self._priorities(ops, td_errors)

    def _priorities(self, ops, td_errors):
        p = ops.add(ops.abs(ops.cast(td_errors, dtype="f64")), self.epsilon)
        top = self.variables["max-priority"]
        ops.assign(top, ops.maximum(ops.read(top), ops.max(p)))
        return ops.pow(p, exponent=self.alpha)

    @graph_fn(returns=2)
    def _graph_fn_insert(self, ops, records):
        idx = self._write(ops, records)
        top = ops.maximum(ops.read(self.variables["max-priority"]), 1.0)
        return idx, ops.broadcast_like(ops.pow(top, exponent=self.alpha), ops.cast(idx, dtype="f64"))

    @graph_fn
    def _graph_fn_stratify(self, ops, num_records, total):
        ops.check(ops.greater(ops.read(self.variables["size"]), 0), "cannot sample from an empty memory")
        n = ops.cast(num_records, dtype="f64")
        strata = ops.cast(ops.arange(num_records), dtype="f64")
        u = ops.random_uniform(num_records)
        p = ops.mul(ops.div(ops.add(strata, u), n), total)
        # guards against rounding up to the total
        return ops.minimum(p, ops.mul(total, 1.0 - 1e-12))

    @graph_fn
    def _graph_fn_clamp(self, ops, indices):
        last = ops.maximum(ops.sub(ops.read(self.variables["size"]), 1), 0)
        return ops.minimum(indices, last)

    @graph_fn(returns=2)
    def _graph_fn_fetch(self, ops, indices, priorities, total):
        size = ops.cast(ops.read(self.variables["size"]), dtype="f64")
        probs = ops.div(priorities, total)
        weights = ops.pow(ops.mul(probs, size), exponent=-self.beta)
        weights = ops.div(weights, ops.max(weights))
        return self._gather(ops, indices), weights

    @graph_fn(returns=2)
    def _graph_fn_priorities(self, ops, indices, td_errors):
        size = ops.read(self.variables["size"])
        ops.check(ops.logical_and(ops.greater_equal(indices, 0), ops.less(indices, size)),
                  "priority update for an index outside the filled memory")
        return indices, self._priorities(ops, td_errors)
