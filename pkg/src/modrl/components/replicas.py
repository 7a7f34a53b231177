"""Helpers for in-graph replication: split a batch, average gradients, merge outputs."""
from __future__ import annotations

from modrl.graph.component import Component, api, graph_fn


def _unpack(parts, num):
    # a tuple-space input arrives as one record, a python tuple as its items
    if isinstance(parts, (tuple, list)):
        return tuple(parts)
    if num is None:
        raise ValueError("a merged tuple record needs the part count")
    return tuple(parts[i] for i in range(num))


class BatchSplitter(Component):
    def __init__(self, name, num, device=None):
        super().__init__(name, device)
        self.num = int(num)
        self.batch_multiple = self.num
        self.graph_functions["split"].returns = self.num

    @api
    def split(self, records):
        return self._graph_fn_split(records)

    @graph_fn
    def _graph_fn_split(self, ops, records):
        if isinstance(records, dict):
            return tuple({k: ops.split_part(v, num=self.num, index=i) for k, v in records.items()}
                         for i in range(self.num))
        return tuple(ops.split_part(records, num=self.num, index=i) for i in range(self.num))


class GradientAverager(Component):
    """Key-wise mean over equally structured inputs."""

    def __init__(self, name, num, device=None):
        super().__init__(name, device)
        self.num = int(num)

    @api
    def average(self, parts):
        return self._graph_fn_average(*_unpack(parts, self.num))

    @graph_fn
    def _graph_fn_average(self, ops, *parts):
        def mean(values):
            total = values[0]
            for v in values[1:]:
                total = ops.add(total, v)
            return ops.div(total, float(len(values)))

        if isinstance(parts[0], dict):
            return {k: mean([p[k] for p in parts]) for k in parts[0]}
        return mean(list(parts))


class Merger(Component):
    """Concatenates per-replica outputs along the batch axis."""

    def __init__(self, name, num=None, device=None):
        super().__init__(name, device)
        self.num = num

    @api
    def merge(self, parts):
        return self._graph_fn_merge(*_unpack(parts, self.num))

    @graph_fn
    def _graph_fn_merge(self, ops, *parts):
        if isinstance(parts[0], dict):
            return {k: ops.concat(*[p[k] for p in parts], axis=0) for k in parts[0]}
        return ops.concat(*parts, axis=0)
