"""Named library components with default spaces and example call sequences.

Every entry can be built alone and run in either backend; the test-component verb and the
backend-equivalence tests both go through ``run_entry``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from modrl import spaces as sp
from modrl.components.exploration import EpsilonExploration, LinearDecay
from modrl.components.layers import Dense, DuelingAggregation, NeuralNetwork
from modrl.components.loss import DQNLoss
from modrl.components.memory import PrioritizedReplay, ReplayMemory, SegmentTree
from modrl.components.optimizers import SGD, Adam
from modrl.components.policy import ActionAdapter, Policy
from modrl.components.preprocessing import Clip, Flatten, MovingAverageNormalize, PreprocessorStack, Scale
from modrl.components.replicas import BatchSplitter, GradientAverager, Merger
from modrl.components.sync import WeightSync
from modrl.components.tower import DQNTower
from modrl.errors import ModrlError
from modrl.graph.component import Component, api, graph_fn
from modrl.graph.executor import ComponentTest

B = 6


def _f(*shape, batch=True, low=None, high=None):
    out = {"type": "float_box", "shape": list(shape), "add_batch_rank": batch}
    if low is not None:
        out.update(low=low, high=high)
    return out


def _i(n=0, *shape, batch=True):
    out = {"type": "int_box", "shape": list(shape), "add_batch_rank": batch}
    if n:
        out["num_categories"] = n
    return out


def _b(batch=True):
    return {"type": "bool_box", "add_batch_rank": batch}


SCALAR_INT = {"type": "int_box"}
RECORDS = {"type": "dict", "add_batch_rank": True,
           "spaces": {"s": _f(3, batch=False), "a": _i(3, batch=False)}}
DICT_ACTIONS = {"type": "dict", "spaces": {
    "discrete": {"type": "int_box", "num_categories": 4},
    "continuous": {"type": "float_box", "shape": [2], "low": -1.0, "high": 1.0},
}}
NET = [{"units": 8, "activation": "relu"}, {"units": 8, "activation": "tanh"}]


class Regression(Component):
    """Host that fits a small network to targets with the given optimizer."""

    def __init__(self, name, optimizer):
        super().__init__(name)
        self.network = self.add_subcomponent(NeuralNetwork("network", [{"units": 2, "activation": "tanh"}]))
        self.optimizer = self.add_subcomponent(optimizer)

    @api
    def step(self, inputs, targets):
        loss = self._graph_fn_mse(self.network.apply(inputs), targets)
        self.optimizer.minimize(loss, self.network.get_variables())
        return loss

    @api
    def predict(self, inputs):
        return self.network.apply(inputs)

    @graph_fn
    def _graph_fn_mse(self, ops, outputs, targets):
        return ops.mean(ops.square(ops.sub(outputs, targets)))


class SyncPair(Component):
    """Two equally shaped networks and a sync from the first into the second."""

    def __init__(self, name, tau=1.0):
        super().__init__(name)
        self.source = self.add_subcomponent(NeuralNetwork("source", [{"units": 3, "activation": "linear"}]))
        self.target = self.add_subcomponent(NeuralNetwork("target", [{"units": 3, "activation": "linear"}]))
        self.syncer = self.add_subcomponent(WeightSync("sync", tau))

    @api
    def sync(self):
        self.syncer.sync(self.source.get_variables(), self.target.get_variables())

    @api
    def outputs(self, inputs):
        return self.source.apply(inputs), self.target.apply(inputs)


@dataclass
class Entry:
    name: str
    make: Callable[..., Component]
    spaces: dict
    examples: Callable[[np.random.Generator, dict], list]
    params: dict = field(default_factory=dict)
    description: str = ""


CATALOG: dict = {}


def register(name, make, spaces, examples, description="", **params):
    CATALOG[name] = Entry(name, make, spaces, examples, params, description)


def _x(rng, *shape):
    return rng.normal(size=(B,) + shape)


def _records(rng, n, space=None):
    if space is None:
        return {"s": rng.normal(size=(n, 3)), "a": rng.integers(0, 3, n)}
    return sp.sample(space, batch=n, rng=rng)


def _dqn_batch(rng, n, num_actions=3):
    return [rng.normal(size=(n, num_actions)), rng.normal(size=(n, num_actions)), rng.normal(size=(n, num_actions)),
            rng.integers(0, num_actions, n), rng.normal(size=n), rng.random(n) < 0.3]


register("dense", lambda units=4, activation="linear": Dense("dense", units, activation),
         {"inputs": _f(5)}, lambda rng, s: [("apply", (_x(rng, 5),))], "affine layer", units=4, activation="linear")
register("dense-relu", lambda units=4: Dense("dense", units, "relu"),
         {"inputs": _f(5)}, lambda rng, s: [("apply", (_x(rng, 5),))], "affine layer with relu", units=4)
register("neural-network", lambda layers=NET: NeuralNetwork("network", layers),
         {"inputs": _f(4)}, lambda rng, s: [("apply", (_x(rng, 4),)), ("get_variables", ())],
         "dense stack", layers=NET)
register("dueling-aggregation", lambda: DuelingAggregation("dueling"),
         {"value": _f(1), "advantages": _f(3)},
         lambda rng, s: [("aggregate", (_x(rng, 1), _x(rng, 3)))], "value plus centred advantages")
register("linear-decay", lambda start=1.0, end=0.1, steps=100: LinearDecay("schedule", start, end, steps),
         {"time_step": SCALAR_INT}, lambda rng, s: [("value", (np.int64(t),)) for t in (0, 25, 100, 250)],
         "linear schedule", start=1.0, end=0.1, steps=100)
register("epsilon-exploration",
         lambda num_actions=3, start=1.0, end=0.0, decay_steps=10: EpsilonExploration(
             "exploration", num_actions, start, end, decay_steps),
         {"q_values": _f(3), "time_step": SCALAR_INT},
         lambda rng, s: [("get_action", (_x(rng, 3), np.int64(t))) for t in (0, 5, 10)]
         + [("get_greedy_action", (_x(rng, 3),))],
         "epsilon-greedy over q-values", num_actions=3, start=1.0, end=0.0, decay_steps=10)
register("action-adapter-int", lambda: ActionAdapter("adapter", sp.IntBox(4, (2,))),
         {"features": _f(5)}, lambda rng, s: [("get_action", (_x(rng, 5),))], "categorical action head")
register("action-adapter-bounded", lambda: ActionAdapter("adapter", sp.FloatBox((2,), -2.0, 3.0)),
         {"features": _f(5)}, lambda rng, s: [("get_action", (_x(rng, 5),))], "tanh-squashed action head")
register("action-adapter-bool", lambda: ActionAdapter("adapter", sp.BoolBox((3,))),
         {"features": _f(5)}, lambda rng, s: [("get_action", (_x(rng, 5),))], "boolean action head")
register("policy", lambda network=NET, num_actions=3: Policy("policy", network, sp.IntBox(num_actions)),
         {"states": _f(4)}, lambda rng, s: [("get_q", (_x(rng, 4),)), ("get_action", (_x(rng, 4),))],
         "q-network policy", network=NET, num_actions=3)
register("policy-dueling",
         lambda network=NET, num_actions=3: Policy("policy", network, sp.IntBox(num_actions), dueling=True),
         {"states": _f(4)}, lambda rng, s: [("get_q", (_x(rng, 4),)), ("get_action", (_x(rng, 4),))],
         "dueling q-network policy", network=NET, num_actions=3)
register("policy-dict", lambda network=NET: Policy("policy", network, sp.space_from_spec(DICT_ACTIONS)),
         {"states": _f(4)}, lambda rng, s: [("get_action", (_x(rng, 4),))],
         "policy over a dict action space", network=NET)
register("scale", lambda factor=0.5: Scale("scale", factor), {"inputs": _f(3)},
         lambda rng, s: [("preprocess", (_x(rng, 3),))], "multiply by a constant", factor=0.5)
register("clip", lambda low=-0.5, high=0.5: Clip("clip", low, high), {"inputs": _f(3)},
         lambda rng, s: [("preprocess", (_x(rng, 3),))], "clip into a range", low=-0.5, high=0.5)
register("flatten", lambda: Flatten("flatten"), {"inputs": _f(2, 3)},
         lambda rng, s: [("preprocess", (_x(rng, 2, 3),))], "flatten non-batch dims")
register("moving-average-normalize", lambda: MovingAverageNormalize("normalize"), {"inputs": _f(3)},
         lambda rng, s: [("preprocess", (_x(rng, 3) * 3 + 1,)), ("preprocess", (_x(rng, 3),)),
                      ("apply", (_x(rng, 3),))], "running mean/variance normalization")
register("preprocessor-stack",
         lambda: PreprocessorStack("preprocessor", [Scale("scale-0", 2.0), Clip("clip-1", -1.0, 1.0),
                                                    MovingAverageNormalize("normalize-2")]),
         {"inputs": _f(3)}, lambda rng, s: [("preprocess", (_x(rng, 3),)), ("apply", (_x(rng, 3),))],
         "chained preprocessors")
register("replay-memory", lambda capacity=8: ReplayMemory("memory", capacity),
         {"records": RECORDS, "num_records": SCALAR_INT},
         lambda rng, s: [("insert_records", (_records(rng, 5, s["records"]),)),
                      ("insert_records", (_records(rng, 5, s["records"]),)),
                      ("get_size", ()), ("get_records", (np.int64(4),))],
         "uniform ring-buffer replay", capacity=8)
register("segment-tree", lambda capacity=8: SegmentTree("segment-tree", capacity),
         {"indices": _i(), "values": _f(), "prefix_sums": _f()},
         lambda rng, s: [("update", (np.arange(8), rng.random(8) + 0.1)),
                      ("update", (np.array([2, 5]), np.array([3.0, 0.01]))),
                      ("get_sum", ()), ("get_min", ()), ("get_values", (np.arange(8),)),
                      ("index_of_prefix_sum", (np.array([0.0, 1.0, 2.5, 4.0]),))],
         "sum and min trees", capacity=8)
register("prioritized-replay",
         lambda capacity=8, alpha=0.6, beta=0.4: PrioritizedReplay("memory", capacity, alpha, beta),
         {"records": RECORDS, "num_records": SCALAR_INT, "indices": _i(), "td_errors": _f()},
         lambda rng, s: [("insert_records", (_records(rng, 6, s["records"]),)), ("get_records", (np.int64(4),)),
                      ("update_records", (np.array([0, 1, 2]), rng.normal(size=3))),
                      ("insert_records_with_priorities", (_records(rng, 4, s["records"]), rng.normal(size=4))),
                      ("get_records", (np.int64(5),))],
         "proportional prioritized replay", capacity=8, alpha=0.6, beta=0.4)
register("sgd", lambda learning_rate=0.1: Regression("regression", SGD("optimizer", learning_rate)),
         {"inputs": _f(3), "targets": _f(2)},
         lambda rng, s: [("step", (_x(rng, 3), _x(rng, 2))) for _ in range(3)] + [("predict", (_x(rng, 3),))],
         "plain gradient descent", learning_rate=0.1)
register("adam", lambda learning_rate=0.01: Regression("regression", Adam("optimizer", learning_rate)),
         {"inputs": _f(3), "targets": _f(2)},
         lambda rng, s: [("step", (_x(rng, 3), _x(rng, 2))) for _ in range(3)] + [("predict", (_x(rng, 3),))],
         "adam with bias correction", learning_rate=0.01)
register("batch-splitter", lambda num=3: BatchSplitter("splitter", num), {"records": RECORDS},
         lambda rng, s: [("split", (_records(rng, 6, s["records"]),))], "equal batch shards", num=3)
register("gradient-averager", lambda num=2: GradientAverager("averager", num),
         {"parts": {"type": "tuple", "add_batch_rank": True, "spaces": [_f(2, batch=False), _f(2, batch=False)]}},
         lambda rng, s: [("average", ((_x(rng, 2), _x(rng, 2)),))], "mean over replicas", num=2)
register("merger", lambda num=2: Merger("merger", num),
         {"parts": {"type": "tuple", "add_batch_rank": True, "spaces": [_f(2, batch=False), _f(2, batch=False)]}},
         lambda rng, s: [("merge", ((_x(rng, 2), _x(rng, 2)),))], "batch concatenation", num=2)
register("weight-sync", lambda tau=1.0: SyncPair("pair", tau), {"inputs": _f(2)},
         lambda rng, s: [("outputs", (_x(rng, 2),)), ("sync", ()), ("outputs", (_x(rng, 2),))],
         "hard target copy", tau=1.0)
register("weight-sync-polyak", lambda tau=0.25: SyncPair("pair", tau), {"inputs": _f(2)},
         lambda rng, s: [("sync", ()), ("sync", ()), ("outputs", (_x(rng, 2),))],
         "soft target update", tau=0.25)
_LOSS_SPACES = {"q_s": _f(3), "q_target_sp": _f(3), "q_sp": _f(3), "actions": _i(3), "rewards": _f(),
                "terminals": _b(), "discounts": _f(), "weights": _f()}
register("dqn-loss", lambda double_q=True, huber_delta=1.0: DQNLoss("loss", 3, 0.9, double_q, huber_delta, 3),
         _LOSS_SPACES,
         lambda rng, s: [("loss", tuple(_dqn_batch(rng, B)) + (rng.random(B), rng.random(B) + 0.5)),
                      ("loss_fixed_discount", tuple(_dqn_batch(rng, B)) + (rng.random(B) + 0.5,))],
         "double-q loss with huber", double_q=True, huber_delta=1.0)
register("dqn-loss-plain", lambda: DQNLoss("loss", 3, 0.9, False, None, 1), _LOSS_SPACES,
         lambda rng, s: [("loss", tuple(_dqn_batch(rng, B)) + (rng.random(B), np.ones(B)))],
         "max-q loss with squared error")


def _tower_records(rng, n):
    return {"states": rng.normal(size=(n, 4)), "actions": rng.integers(0, 3, n), "rewards": rng.normal(size=n),
            "terminals": rng.random(n) < 0.2, "next_states": rng.normal(size=(n, 4)), "discounts": np.full(n, 0.81)}


_TOWER_RECORDS = {"type": "dict", "add_batch_rank": True, "spaces": {
    "states": _f(4, batch=False), "actions": _i(3, batch=False), "rewards": _f(batch=False),
    "terminals": {"type": "bool_box"}, "next_states": _f(4, batch=False), "discounts": _f(batch=False)}}
register("dqn-tower", lambda network=NET: DQNTower("tower", network, sp.IntBox(3)),
         {"states": _f(4), "records": _TOWER_RECORDS, "weights": _f()},
         lambda rng, s: [("get_q", (_x(rng, 4),)), ("loss_and_grads", (_tower_records(rng, B), rng.random(B)))],
         "policy, target policy and loss", network=NET)


def _agent(**overrides):
    from modrl.agents.config import config_from_dict
    from modrl.agents.dqn import DQNRoot
    agent = {"state_space": {"type": "float_box", "shape": [4]},
             "action_space": {"type": "int_box", "num_categories": 3},
             "network": [{"units": 8, "activation": "relu"}], "dueling": True,
             "memory": {"type": "prioritized", "capacity": 16},
             "update": {"batch_size": 4}}
    agent.update(overrides)
    return DQNRoot(config_from_dict({"agent": agent}).agent)


register("dqn-agent", _agent, None,
         lambda rng, s: [("get_actions", (_x(rng, 4), np.int64(3))), ("get_q_values", (_x(rng, 4),)),
                      ("insert_records", (_tower_records(rng, 8),)), ("get_memory_size", ()),
                      ("update_from_memory", (np.int64(4),)), ("sync_target", ()),
                      ("update_from_batch", (_tower_records(rng, 4), np.ones(4))),
                      ("get_greedy_actions", (_x(rng, 4),))],
         "full DQN root component")


def run_entry(name, backend="staged", seed=0, params=None, spaces=None, fast_path=True):
    """Build the named entry alone and run its examples; returns (outputs, variables)."""
    if name not in CATALOG:
        raise ModrlError(f"unknown component {name!r}; known: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[name]
    component = entry.make(**dict(entry.params, **(params or {})))
    if spaces is None:
        spaces = component.input_spaces() if entry.spaces is None else entry.spaces
    spaces = {k: sp.space_from_spec(v) for k, v in spaces.items()}
    test = ComponentTest(component, spaces, backend=backend, seed=seed, fast_path=fast_path)
    rng = np.random.default_rng(seed)
    outputs = [(api_name, test.test(api_name, *args)) for api_name, args in entry.examples(rng, spaces)]
    return outputs, test.read_variables()


def max_rel_diff(a, b) -> float:
    """Largest elementwise |a-b|/max(|b|, 1e-300) over two equally structured results."""
    fa, fb = sp.flatten(a), sp.flatten(b)
    if set(fa) != set(fb):
        raise AssertionError(f"structures differ: {sorted(set(fa) ^ set(fb))}")
    worst = 0.0
    for key, x in fa.items():
        x, y = np.asarray(x), np.asarray(fb[key])
        if x.shape != y.shape:
            raise AssertionError(f"{key}: shapes {x.shape} vs {y.shape}")
        if x.dtype.kind in "biu" or y.dtype.kind in "biu":
            if not np.array_equal(x, y):
                return float("inf")
            continue
        same = (x == y) | (np.isnan(x) & np.isnan(y))
        with np.errstate(invalid="ignore", over="ignore"):
            rel = np.where(same, 0.0, np.abs(x - y) / np.maximum(np.abs(y), 1e-300))
        rel = np.where(np.isnan(rel), np.inf, rel)
        if rel.size:
            worst = max(worst, float(np.max(rel)))
    return worst


def _as_tree(outputs):
    return {f"{i}-{api_name}": ({} if out is None else out) for i, (api_name, out) in enumerate(outputs)}


def compare_backends(name, seed=0, params=None, spaces=None) -> float:
    """Max relative disagreement between staged and define-by-run runs of one entry."""
    staged, v1 = run_entry(name, "staged", seed, params, spaces)
    eager, v2 = run_entry(name, "define_by_run", seed, params, spaces)
    return max(max_rel_diff(_as_tree(staged), _as_tree(eager)), max_rel_diff(v1, v2))
