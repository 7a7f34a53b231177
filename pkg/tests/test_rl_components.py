import numpy as np
import pytest

from modrl import spaces as sp
from modrl.components.layers import DuelingAggregation
from modrl.components.loss import DQNLoss
from modrl.components.memory import PrioritizedReplay, ReplayMemory, SegmentTree
from modrl.components.optimizers import SGD, Adam
from modrl.components.preprocessing import Flatten, PreprocessorStack, Scale
from modrl.components.sync import WeightSync
from modrl.errors import ModrlError, VariableError
from modrl.graph import Component, api, graph_fn
from modrl.graph.executor import ComponentTest
from modrl.tensor import finite_diff

BACKENDS = ["staged", "define_by_run"]
F = dict(add_batch_rank=True)


def tree_test(capacity, backend="staged"):
    return ComponentTest(SegmentTree("tree", capacity), {"indices": sp.IntBox(**F), "values": sp.FloatBox(**F),
                                                         "prefix_sums": sp.FloatBox(**F)}, backend=backend)


def test_prefix_sum_examples():
    t = tree_test(4)
    t.test("update", np.arange(4), np.array([1.0, 2.0, 3.0, 4.0]))
    assert t.test("index_of_prefix_sum", np.array([6.5])).tolist() == [3]
    assert t.test("index_of_prefix_sum", np.array([0.0])).tolist() == [0]
    with pytest.raises(ModrlError):
        t.test("index_of_prefix_sum", np.array([10.0]))


def test_segment_tree_random_interleavings():
    rng = np.random.default_rng(7)
    cap = 16
    t = tree_test(cap)
    leaves = np.zeros(cap)
    for _ in range(200):
        idx = rng.integers(0, cap, rng.integers(1, 4))
        vals = rng.random(len(idx)) * 5
        t.test("update", idx, vals)
        for i, v in zip(idx, vals):
            leaves[i] = v
        v = t.read_variables()
        s, m = v["/tree/sum"], v["/tree/min"]
        for node in range(1, cap):
            assert s[node] == pytest.approx(s[2 * node] + s[2 * node + 1], rel=1e-12, abs=1e-12)
            assert m[node] == min(m[2 * node], m[2 * node + 1])
        assert np.array_equal(s[cap:], leaves)
    queries = rng.random(200) * leaves.sum()
    cum = np.cumsum(leaves)
    expected = [int(np.searchsorted(cum, q, side="right")) for q in queries]
    assert t.test("index_of_prefix_sum", queries).tolist() == expected


RECORDS = sp.Dict({"s": sp.FloatBox((2,)), "a": sp.IntBox(3)}, **F)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ring_overwrites_oldest(backend):
    t = ComponentTest(ReplayMemory("memory", 4), {"records": RECORDS, "num_records": sp.IntBox()}, backend=backend)
    t.test("insert_records", {"s": np.arange(12.0).reshape(6, 2), "a": np.arange(6) % 3})
    assert int(t.test("get_size")) == 4
    stored = t.read_variables()["/memory/buffer.s"][:, 0]
    assert sorted(stored.tolist()) == [4.0, 6.0, 8.0, 10.0]


def _frequencies(capacity, priorities, draws, seed=0, alpha=0.6):
    t = ComponentTest(PrioritizedReplay("memory", capacity, alpha=alpha),
                      {"records": RECORDS, "num_records": sp.IntBox(), "indices": sp.IntBox(**F),
                       "td_errors": sp.FloatBox(**F)}, seed=seed)
    t.test("insert_records", {"s": np.zeros((capacity, 2)), "a": np.zeros(capacity, dtype=np.int64)})
    if priorities is not None:
        t.test("update_records", np.arange(capacity), priorities - 1e-6)
    counts = np.zeros(capacity)
    batch = 500
    for _ in range(draws // batch):
        _, idx, _ = t.test("get_records", np.int64(batch))
        np.add.at(counts, idx, 1)
    return counts / counts.sum()


def test_equal_priorities_uniform():
    freq = _frequencies(8, None, 100_000)
    assert np.all(np.abs(freq - 0.125) <= 0.01)


def test_prioritized_distribution():
    p = np.arange(1, 17, dtype=float)
    freq = _frequencies(16, p, 100_000)
    target = p ** 0.6 / np.sum(p ** 0.6)
    assert np.abs(freq - target).sum() <= 0.02


def test_importance_weights_and_priorities():
    t = ComponentTest(PrioritizedReplay("memory", 4, alpha=1.0, beta=1.0, epsilon=0.0),
                      {"records": RECORDS, "num_records": sp.IntBox(), "indices": sp.IntBox(**F),
                       "td_errors": sp.FloatBox(**F)})
    t.test("insert_records", {"s": np.zeros((4, 2)), "a": np.zeros(4, dtype=np.int64)})
    t.test("update_records", np.arange(4), np.array([1.0, -2.0, 3.0, 4.0]))
    leaves = t.read_variables()["/memory/segment-tree/sum"][4:]
    assert leaves.tolist() == [1.0, 2.0, 3.0, 4.0]
    _, idx, w = t.test("get_records", np.int64(8))
    expected = (leaves[idx] / 10.0 * 4) ** -1.0
    assert np.allclose(w, expected / expected.max())
    with pytest.raises(ModrlError):
        t.test("update_records", np.array([7]), np.array([1.0]))


@pytest.mark.parametrize("backend", BACKENDS)
def test_dueling(backend):
    t = ComponentTest(DuelingAggregation("dueling"), {"value": sp.FloatBox((1,), **F),
                                                      "advantages": sp.FloatBox((3,), **F)}, backend=backend)
    assert t.test("aggregate", np.array([[1.0]]), np.array([[1.0, 2.0, 3.0]])).tolist() == [[0.0, 1.0, 2.0]]
    assert t.test("aggregate", np.array([[4.0]]), np.full((1, 3), 7.0)).tolist() == [[4.0, 4.0, 4.0]]
    v = np.array([[0.3], [1.2]])
    g = finite_diff(lambda a: t.test("aggregate", v, a).sum(), np.random.default_rng(0).normal(size=(2, 3)))
    assert np.abs(g).max() <= 1e-8


def loss_test(discount=0.9, double_q=True, backend="staged"):
    spaces = {"q_s": sp.FloatBox((2,), **F), "q_target_sp": sp.FloatBox((2,), **F), "q_sp": sp.FloatBox((2,), **F),
              "actions": sp.IntBox(2, **F), "rewards": sp.FloatBox(**F), "terminals": sp.BoolBox(**F),
              "discounts": sp.FloatBox(**F), "weights": sp.FloatBox(**F)}
    return ComponentTest(DQNLoss("loss", 2, discount, double_q, 1.0), spaces, backend=backend)


def _loss(t, q_s, q_t, q_o, a, r, term, disc):
    one = lambda x: np.array([x])
    return t.test("loss", one(q_s), one(q_t), one(q_o), one(a), one(r), one(term), one(disc), one(1.0))


@pytest.mark.parametrize("backend", BACKENDS)
def test_dqn_loss_hand_cases(backend):
    t = loss_test(backend=backend)
    # terminal: y = r
    _, td = _loss(t, [0.0, 0.0], [9.0, 9.0], [9.0, 9.0], 0, 5.0, True, 0.9)
    assert td.tolist() == [5.0]
    # zero discount: y = r
    _, td = _loss(t, [0.5, 0.0], [9.0, 9.0], [9.0, 9.0], 0, 2.0, False, 0.0)
    assert td.tolist() == [1.5]
    # double q picks action 1 from the online net, evaluates it with the target net
    loss, td = _loss(t, [0.5, 0.25], [2.0, 0.0], [1.0, 3.0], 0, 1.0, False, 0.9)
    assert td[0] == pytest.approx(0.5)
    assert float(loss) == pytest.approx(0.125)


def test_dqn_loss_plain_max():
    t = loss_test(double_q=False)
    _, td = _loss(t, [0.0, 0.0], [2.0, 0.0], [1.0, 3.0], 0, 1.0, False, 0.9)
    assert td[0] == pytest.approx(1.0 + 0.9 * 2.0)


class Param(Component):
    def __init__(self, name, value, key="p"):
        super().__init__(name)
        self.value, self.key = float(value), key
        self.expose_variables()

    def _create_variables(self, spaces):
        self.add_variable(self.key, np.array(self.value))

    @api
    def loss(self, slope):
        return self._graph_fn_loss(slope)

    @graph_fn
    def _graph_fn_loss(self, ops, slope):
        return ops.mul(ops.read(self.variables[self.key]), slope)


class Fit(Component):
    # the optimizer sits beside the parameter: a parent's variable read covers its whole subtree
    def __init__(self, optimizer):
        super().__init__("fit")
        self.param = self.add_subcomponent(Param("param", 1.0))
        self.optimizer = self.add_subcomponent(optimizer)

    @api
    def step(self, slope):
        self.optimizer.minimize(self.param.loss(slope), self.param.get_variables())


@pytest.mark.parametrize("backend", BACKENDS)
def test_sgd_step(backend):
    t = ComponentTest(Fit(SGD("optimizer", 0.1)), {"slope": sp.FloatBox()}, backend=backend)
    t.test("step", np.float64(2.0))
    assert t.read_variables()["/fit/param/p"] == pytest.approx(0.8)
    t.test("step", np.float64(0.0))
    assert t.read_variables()["/fit/param/p"] == pytest.approx(0.8, abs=0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adam_steps(backend):
    t = ComponentTest(Fit(Adam("optimizer", 0.01)), {"slope": sp.FloatBox()}, backend=backend)
    t.test("step", np.float64(1.0))
    assert t.read_variables()["/fit/param/p"] == pytest.approx(1.0 - 0.01, abs=1e-8)
    z = ComponentTest(Fit(Adam("optimizer", 0.01)), {"slope": sp.FloatBox()}, backend=backend)
    z.test("step", np.float64(0.0))
    assert abs(z.read_variables()["/fit/param/p"] - 1.0) <= 1e-12


class Pair(Component):
    def __init__(self, tau, target_key="p"):
        super().__init__("pair")
        self.a = self.add_subcomponent(Param("source", 2.0))
        self.b = self.add_subcomponent(Param("target", 0.0, key=target_key))
        self.syncer = self.add_subcomponent(WeightSync("sync", tau))

    @api
    def sync(self):
        self.syncer.sync(self.a.get_variables(), self.b.get_variables())


@pytest.mark.parametrize("backend", BACKENDS)
def test_sync(backend):
    t = ComponentTest(Pair(1.0), {}, backend=backend)
    t.test("sync")
    assert t.read_variables()["/pair/target/p"] == 2.0
    t = ComponentTest(Pair(0.5), {}, backend=backend)
    t.test("sync")
    assert t.read_variables()["/pair/target/p"] == 1.0
    with pytest.raises(VariableError):
        ComponentTest(Pair(1.0, target_key="q"), {}, backend=backend)


@pytest.mark.parametrize("backend", BACKENDS)
def test_preprocessing(backend):
    t = ComponentTest(Scale("scale", 1 / 255), {"inputs": sp.FloatBox(**F)}, backend=backend)
    assert t.test("preprocess", np.array([255.0])).tolist() == [1.0]
    t = ComponentTest(Flatten("flatten"), {"inputs": sp.FloatBox((2, 2), **F)}, backend=backend)
    assert t.test("preprocess", np.ones((3, 2, 2))).shape == (3, 4)
    t = ComponentTest(PreprocessorStack("stack", []), {"inputs": sp.FloatBox((2,), **F)}, backend=backend)
    x = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(t.test("preprocess", x), x)
