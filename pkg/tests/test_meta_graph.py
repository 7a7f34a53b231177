import pydot
import pytest

from modrl import spaces as sp
from modrl.agents.dqn import Agent
from modrl.components.layers import Dense
from modrl.components.memory import ReplayMemory
from modrl.components.policy import Policy
from modrl.components.preprocessing import PreprocessorStack, Scale
from modrl.errors import UnknownSpaceError
from modrl.graph import Component, api, build_meta_graph, export_dot, graph_fn

from conftest import make_config


class Toy(Component):
    def __init__(self):
        super().__init__("toy")
        self.preprocessor = self.add_subcomponent(PreprocessorStack("preprocessor", [Scale("scale-0", 0.5)]))
        self.policy = self.add_subcomponent(Policy("policy", [{"units": 4}], sp.IntBox(3)))
        self.head = self.add_subcomponent(Dense("head", 1))

    @api
    def act(self, state):
        return self.policy.get_action(self.preprocessor.preprocess(state))

    @api
    def observe(self, state, reward):
        return self._graph_fn_score(self.head.apply(state), reward)

    @api
    def update(self, state):
        return self.policy.get_q(state)

    @graph_fn
    def _graph_fn_score(self, ops, value, reward):
        return ops.add(ops.sum(value, axis=-1), reward)


SPACES = {"state": sp.FloatBox((3,), add_batch_rank=True), "reward": sp.FloatBox(add_batch_rank=True)}


def test_registry_has_root_apis():
    graph = build_meta_graph(Toy(), SPACES)
    assert list(graph.api) == ["act", "observe", "update"]


def test_call_edges_in_order():
    graph = build_meta_graph(Toy(), SPACES)
    act_edges = [e for e in graph.call_edges if e[0] == "/toy"]
    assert act_edges[0] == ("/toy", "/toy/preprocessor", "preprocess")
    assert act_edges[1] == ("/toy", "/toy/policy", "get_action")


def test_missing_space():
    with pytest.raises(UnknownSpaceError):
        build_meta_graph(Toy(), {"state": SPACES["state"]})


def _parse(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs and len(graphs) == 1
    return graphs[0]


def _all_nodes(g):
    out = [n for n in g.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
    for s in g.get_subgraphs():
        out += _all_nodes(s)
    return out


def test_dot_single_memory():
    records = sp.Dict({"s": sp.FloatBox((2,))}, add_batch_rank=True)
    graph = build_meta_graph(ReplayMemory("memory", 8), {"records": records, "num_records": sp.IntBox()})
    g = _parse(export_dot(graph))
    assert len(g.get_subgraphs()) == 1
    assert len(_all_nodes(g)) >= 1
    assert g.get_edges() == []


def test_dot_nested_clusters():
    g = _parse(export_dot(build_meta_graph(Toy(), SPACES)))
    toy = g.get_subgraphs()[0]
    policy = [s for s in toy.get_subgraphs() if s.get_name().strip('"') == "cluster_/toy/policy"][0]
    assert any(s.get_name().strip('"') == "cluster_/toy/policy/network" for s in policy.get_subgraphs())


def test_dot_agent_counts():
    agent = Agent(make_config().agent)
    g = _parse(export_dot(agent.graph))
    assert len(_all_nodes(g)) == agent.built.stats.component_count
    assert len(g.get_edges()) == len(agent.graph.cross_edges())
    pairs = [(e.get_source().strip('"'), e.get_destination().strip('"'), e.get("label").strip('"'))
             for e in g.get_edges()]
    assert len(pairs) == len(set(pairs))
