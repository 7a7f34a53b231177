import numpy as np
import pytest

from modrl.errors import ExecutionError, GradientError, ShapeError
from modrl.tensor import EagerOps, Tape, eval_primitive, finite_diff, grad, infer_primitive


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(2, 5))
    assert np.array_equal(eval_primitive("matmul", [np.eye(2), a]), a)


def test_mean_axis0():
    assert eval_primitive("mean", [np.array([[1.0, 3.0], [3.0, 5.0]])], {"axis": 0}).tolist() == [2.0, 4.0]


def test_one_hot():
    assert eval_primitive("one_hot", [np.array([2])], {"depth": 4}).tolist() == [[0, 0, 1, 0]]


def test_unknown_primitive():
    with pytest.raises(ExecutionError):
        eval_primitive("nope", [np.zeros(2)])


def test_infer_matches_eval():
    shape, dtype = infer_primitive("matmul", [(None, 3), (3, 4)], [np.float64, np.float64])
    assert shape == (None, 4)
    with pytest.raises(ShapeError):
        infer_primitive("matmul", [(None, 3), (2, 4)], [np.float64, np.float64])


def _taped():
    tape = Tape()
    return EagerOps(tape=tape), tape


def test_grad_square():
    ops, tape = _taped()
    x = ops.constant(np.float64(3.0))
    loss = ops.mul(x, x)
    assert grad(tape, loss, [x])[0].item() == pytest.approx(6.0)


def test_grad_relu_sum():
    ops, tape = _taped()
    x = ops.constant(np.array([-1.0, 2.0]))
    loss = ops.sum(ops.relu(x))
    assert grad(tape, loss, [x])[0].numpy().tolist() == [0.0, 1.0]


def test_grad_needs_scalar():
    ops, tape = _taped()
    x = ops.constant(np.array([1.0, 2.0]))
    with pytest.raises(GradientError):
        grad(tape, ops.mul(x, 2.0), [x])


def test_finite_diff_examples():
    assert finite_diff(lambda x: x ** 2, np.float64(3.0)) == pytest.approx(6.0, abs=1e-6)
    assert np.allclose(finite_diff(np.sum, np.array([1.0, 2.0])), [1.0, 1.0])
    assert finite_diff(np.exp, np.float64(0.0)) == pytest.approx(1.0, abs=1e-8)


def _mlp_loss(ops, x, w1, b1, w2, y):
    h = ops.tanh(ops.add(ops.matmul(x, w1), b1))
    out = ops.matmul(h, w2)
    return ops.mean(ops.square(ops.sub(out, y)))


@pytest.mark.parametrize("seed", range(5))
def test_mlp_grad_matches_finite_diff(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    params = [rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=(5, 2))]
    ops, tape = _taped()
    ts = [ops.constant(p) for p in params]
    loss = _mlp_loss(ops, ops.constant(x), *ts, ops.constant(y))
    analytic = grad(tape, loss, ts)
    for i, p in enumerate(params):
        def f(v, i=i):
            args = list(params)
            args[i] = v
            return _mlp_loss(EagerOps(), x, *args, y).item()
        numeric = finite_diff(f, p)
        err = np.abs(analytic[i].numpy() - numeric).max() / max(np.abs(numeric).max(), 1e-12)
        assert err <= 1e-4


def test_stop_gradient_blocks():
    ops, tape = _taped()
    x = ops.constant(np.float64(2.0))
    loss = ops.mul(ops.stop_gradient(x), x)
    assert grad(tape, loss, [x])[0].item() == pytest.approx(2.0)


def test_scatter_update_last_duplicate_wins():
    out = eval_primitive("scatter_update", [np.zeros(4), np.array([1, 1]), np.array([5.0, 7.0])])
    assert out.tolist() == [0.0, 7.0, 0.0, 0.0]
