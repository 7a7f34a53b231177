import numpy as np
import pytest

from modrl import spaces as sp
from modrl.agents.dqn import Agent
from modrl.components.layers import Dense
from modrl.components.memory import PrioritizedReplay
from modrl.errors import ConfigError, ModrlError, ReplicaError, SpaceConflictError
from modrl.graph import Component, DeviceMap, api, apply_replica_strategy, build, build_meta_graph
from modrl.graph.executor import GraphExecutor

from conftest import make_config, random_records


class TwoInputs(Component):
    def __init__(self):
        super().__init__("root")
        self.dense = self.add_subcomponent(Dense("dense", 2))

    @api
    def a(self, x):
        return self.dense.apply(x)

    @api
    def b(self, y):
        return self.dense.apply(y)


@pytest.mark.parametrize("backend", ["staged", "define_by_run"])
def test_prioritized_memory_variables(backend):
    records = sp.Dict({"s": sp.FloatBox((2,)), "a": sp.IntBox(3)}, add_batch_rank=True)
    spaces = {"records": records, "num_records": sp.IntBox(), "indices": sp.IntBox(add_batch_rank=True),
              "td_errors": sp.FloatBox(add_batch_rank=True)}
    built = build(build_meta_graph(PrioritizedReplay("memory", 16), spaces), backend=backend)
    names = set(built.variables)
    assert {"/memory/buffer.s", "/memory/buffer.a", "/memory/index", "/memory/size"} <= names
    assert {"/memory/segment-tree/sum", "/memory/segment-tree/min"} <= names
    assert built.stats.component_count == 2


def test_agent_build_is_deterministic():
    a, b = Agent(make_config().agent), Agent(make_config().agent)
    assert a.built.stats.component_count == b.built.stats.component_count >= 20
    assert a.built.stats.op_count == b.built.stats.op_count
    for name, value in a.get_weights().items():
        assert np.array_equal(value, b.get_weights()[name])


def test_space_conflict():
    spaces = {"x": sp.FloatBox((2,), add_batch_rank=True), "y": sp.FloatBox((3,), add_batch_rank=True)}
    with pytest.raises(SpaceConflictError):
        build(build_meta_graph(TwoInputs(), spaces))


def test_replicas_identity_for_one():
    agent = Agent(make_config().agent)
    assert apply_replica_strategy(agent.graph, 1) is agent.graph
    with pytest.raises(ReplicaError):
        apply_replica_strategy(agent.graph, 0)


def _grads(replicas, records, weights, backend="staged", batch=8):
    cfg = make_config(f"update.replicas={replicas}", f"update.batch_size={batch}").agent
    agent = Agent(cfg, backend=backend, seed=5)
    loss, td, grads = agent.executor.execute("compute_gradients", records, weights)
    return loss, td, grads, agent


@pytest.mark.parametrize("k", [2, 4])
@pytest.mark.parametrize("backend", ["staged", "define_by_run"])
def test_replica_gradients_equal_full_batch(k, backend, rng):
    records, weights = random_records(32, rng), rng.random(32)
    loss1, td1, g1, _ = _grads(1, records, weights, backend, batch=32)
    lossk, tdk, gk, agent = _grads(k, records, weights, backend, batch=32)
    assert len(agent.root.replicas) == k
    assert abs(float(loss1) - float(lossk)) <= 1e-9
    assert np.abs(td1 - tdk).max() <= 1e-9
    for key in g1:
        assert np.abs(g1[key] - gk[key]).max() <= 1e-9


def test_replicas_indivisible_batch(rng):
    with pytest.raises(ConfigError):
        make_config("update.replicas=3", "update.batch_size=32")
    _, _, _, agent = _grads(3, random_records(3, rng), np.ones(3), batch=3)
    with pytest.raises(ModrlError):
        agent.executor.execute("compute_gradients", random_records(32, rng), np.ones(32))


def test_device_map_assignment():
    cfg = make_config('device_map={"variables": {"/dqn/tower": "cpu:1"}}').agent
    agent = Agent(cfg)
    devices = {v.device for n, v in agent.built.variables.items() if n.startswith("/dqn/tower/")}
    assert devices == {"cpu:1"}
