import numpy as np
import pytest

from modrl import spaces as sp
from modrl.components.layers import Dense
from modrl.components.memory import PrioritizedReplay
from modrl.errors import BarrierViolationError, EncapsulationError, RegistrationError, ScopeError
from modrl.graph import Component, api, build_meta_graph, check_input_completeness, graph_fn
from modrl.graph.executor import ComponentTest


class Wrapper(Component):
    def __init__(self, child):
        super().__init__("root")
        self.child = self.add_subcomponent(child)

    @api
    def insert_records(self, records):
        self.child.insert_records(records)


class Echo(Component):
    @api
    def echo(self, x):
        return self._graph_fn_id(x)

    @graph_fn
    def _graph_fn_id(self, ops, x):
        return ops.add(x, 0.0)


def records_space():
    return sp.Dict({"s": sp.FloatBox((2,)), "a": sp.IntBox(3), "r": sp.FloatBox(()), "t": sp.BoolBox()},
                   add_batch_rank=True)


def test_registered_api_appears_in_root_build():
    graph = build_meta_graph(Wrapper(PrioritizedReplay("memory", 16)), {"records": records_space()})
    assert list(graph.api) == ["insert_records"]


def test_duplicate_registration():
    c = Echo("echo")
    with pytest.raises(RegistrationError):
        c.register_api("echo", lambda self, x: x)


def test_unregistered_helper_absent():
    c = Echo("echo")
    c.register_api("hidden", lambda self, x: self._graph_fn_id(x)).registered = False
    graph = build_meta_graph(c, {"x": sp.FloatBox(add_batch_rank=True)})
    assert "hidden" not in graph.api and "echo" in graph.api


def test_scopes():
    memory = PrioritizedReplay("memory", 16)
    assert memory.subcomponents["segment-tree"].global_scope == "/memory/segment-tree"
    a, b, c = Echo("a"), Echo("b"), Echo("c")
    a.add_subcomponent(b)
    b.add_subcomponent(c)
    assert c.global_scope == "/a/b/c"
    with pytest.raises(RegistrationError):
        Echo("x").add_subcomponent(c)
    with pytest.raises(ScopeError):
        a.add_subcomponent(Echo("b"))


def test_input_completeness():
    memory = PrioritizedReplay("memory", 16)
    root = Wrapper(memory)
    graph = build_meta_graph(root, {"records": records_space()})
    assert not check_input_completeness(graph, memory, {})
    assert check_input_completeness(graph, memory, {"records": records_space()})
    # no graph functions of its own
    assert check_input_completeness(graph, root, {})


def test_dense_variables():
    t = ComponentTest(Dense("dense", 8), {"inputs": sp.FloatBox((4,), add_batch_rank=True)})
    v = t.read_variables()
    assert v["/dense/weights"].shape == (4, 8)
    assert v["/dense/bias"].shape == (8,)
    assert t.test("apply", np.ones((3, 4))).shape == (3, 8)


def test_memory_buffers_per_flat_key():
    t = ComponentTest(Wrapper(PrioritizedReplay("memory", 16)), {"records": records_space()})
    names = set(t.read_variables("/root/memory"))
    for key in ("s", "a", "r", "t"):
        assert t.read_variables()[f"/root/memory/buffer.{key}"].shape[0] == 16
    assert "/root/memory/index" in names


def test_premature_create_variables():
    with pytest.raises(BarrierViolationError):
        Dense("dense", 2).create_variables({"inputs": sp.FloatBox((3,))})


class Reacher(Component):
    """Calls its grandchild directly, which the encapsulation rule forbids."""

    def __init__(self):
        super().__init__("reacher")
        self.mid = self.add_subcomponent(Echo("mid"))
        self.leaf = Echo("leaf")
        self.mid.add_subcomponent(self.leaf)

    @api
    def go(self, x):
        return self.leaf.echo(x)


def test_encapsulation():
    with pytest.raises(EncapsulationError):
        build_meta_graph(Reacher(), {"x": sp.FloatBox()})


def test_copy_is_independent():
    d = Dense("dense", 3)
    c = d.copy("other")
    assert c.name == "other" and c is not d and c.parent is None
