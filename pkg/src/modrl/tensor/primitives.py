"""The fixed primitive vocabulary: numeric kernels, shape rules and VJPs.

Every primitive has three parts:

* ``forward(arrays, attrs, rng)`` evaluates on numpy arrays,
* ``infer(shapes, dtypes, attrs)`` propagates symbolic shapes where ``None``
  marks an extent only known at run time (batch, time, sample counts),
* ``vjp(ops, g, inputs, out, attrs)`` builds input cotangents through an ops
  facade, so the same rule serves eager tapes and staged graphs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from modrl.errors import AxisError, DTypeError, ExecutionError, ShapeError
from modrl.tensor.core import BOOL, F64, I64, as_array, dtype_of


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    infer: Callable
    vjp: Optional[Callable] = None
    arity: Optional[int] = None
    random: bool = False


PRIMITIVES: dict = {}


def _register(name, forward, infer, vjp=None, arity=None, random=False):
    PRIMITIVES[name] = Primitive(name, forward, infer, vjp, arity, random)


# ---------------------------------------------------------------------------
# shape / dtype helpers

def broadcast_shapes(*shapes):
    ndim = max(len(s) for s in shapes)
    out = []
    for i in range(ndim):
        dims = [s[len(s) - ndim + i] for s in shapes if len(s) - ndim + i >= 0]
        known = {d for d in dims if d is not None and d != 1}
        if len(known) > 1:
            raise ShapeError(f"shapes {shapes} are not broadcastable")
        if known:
            out.append(known.pop())
        elif any(d is None for d in dims):
            out.append(None)
        else:
            out.append(1)
    return tuple(out)


def _norm_axis(axis, ndim):
    if not -ndim <= axis < max(ndim, 1) or (ndim == 0):
        raise AxisError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _is_float(dt):
    return dt == F64


def _numeric(*dts):
    for dt in dts:
        if dt == BOOL:
            raise DTypeError("arithmetic on bool tensors")


def _arith_dtype(dts):
    _numeric(*dts)
    return F64 if any(_is_float(d) for d in dts) else I64


def _same_dims(a, b):
    return a is None or b is None or a == b


# ---------------------------------------------------------------------------
# elementwise binary

def _binary(name, fn, vjp, dtype_rule=_arith_dtype):
    def forward(xs, attrs, rng):
        dtype_rule([x.dtype for x in xs])
        with np.errstate(all="ignore"):
            return as_array(fn(xs[0], xs[1]))

    def infer(shapes, dtypes, attrs):
        return broadcast_shapes(*shapes), dtype_rule(dtypes)

    _register(name, forward, infer, vjp, arity=2)


def _stl(ops, g, x):
    return ops.sum_to_like(g, x)


def _vjp_add(ops, g, xs, out, attrs):
    return [_stl(ops, g, xs[0]), _stl(ops, g, xs[1])]


def _vjp_sub(ops, g, xs, out, attrs):
    return [_stl(ops, g, xs[0]), _stl(ops, ops.neg(g), xs[1])]


def _vjp_mul(ops, g, xs, out, attrs):
    a, b = xs
    return [_stl(ops, ops.mul(g, b), a), _stl(ops, ops.mul(g, a), b)]


def _vjp_div(ops, g, xs, out, attrs):
    a, b = xs
    return [_stl(ops, ops.div(g, b), a), _stl(ops, ops.neg(ops.div(ops.mul(g, out), b)), b)]


def _vjp_select(cmp):
    def vjp(ops, g, xs, out, attrs):
        a, b = xs
        mask = getattr(ops, cmp)(a, b)
        zero = ops.zeros_like(g)
        return [_stl(ops, ops.where(mask, g, zero), a), _stl(ops, ops.where(mask, zero, g), b)]
    return vjp


def _div_dtype(dts):
    _numeric(*dts)
    return F64


def _int_or_float(dts):
    return _arith_dtype(dts)


def _cmp_dtype(dts):
    _numeric(*dts)
    return BOOL


def _eq_dtype(dts):
    if (dts[0] == BOOL) != (dts[1] == BOOL):
        raise DTypeError("comparing bool with numeric tensor")
    return BOOL


def _logic_dtype(dts):
    if any(d != BOOL for d in dts):
        raise DTypeError("logical op on non-bool tensor")
    return BOOL


_binary("add", np.add, _vjp_add)
_binary("sub", np.subtract, _vjp_sub)
_binary("mul", np.multiply, _vjp_mul)
_binary("div", lambda a, b: np.true_divide(a, b), _vjp_div, _div_dtype)
_binary("maximum", np.maximum, _vjp_select("greater_equal"))
_binary("minimum", np.minimum, _vjp_select("less_equal"))
_binary("floordiv", np.floor_divide, None, _int_or_float)
_binary("mod", np.mod, None, _int_or_float)
_binary("less", np.less, None, _cmp_dtype)
_binary("less_equal", np.less_equal, None, _cmp_dtype)
_binary("greater", np.greater, None, _cmp_dtype)
_binary("greater_equal", np.greater_equal, None, _cmp_dtype)
_binary("equal", np.equal, None, _eq_dtype)
_binary("not_equal", np.not_equal, None, _eq_dtype)
_binary("logical_and", np.logical_and, None, _logic_dtype)
_binary("logical_or", np.logical_or, None, _logic_dtype)


# ---------------------------------------------------------------------------
# elementwise unary

def _unary(name, fn, vjp, dtype_rule=None):
    def rule(dt):
        if dtype_rule is not None:
            return dtype_rule(dt)
        _numeric(dt)
        return F64

    def forward(xs, attrs, rng):
        rule(xs[0].dtype)
        with np.errstate(all="ignore"):
            return as_array(fn(xs[0], attrs))

    def infer(shapes, dtypes, attrs):
        return tuple(shapes[0]), rule(dtypes[0])

    _register(name, forward, infer, vjp, arity=1)


def _keep_numeric(dt):
    _numeric(dt)
    return dt


def _vjp_relu(ops, g, xs, out, attrs):
    return [ops.where(ops.greater(xs[0], 0.0), g, ops.zeros_like(g))]


def _vjp_clip(ops, g, xs, out, attrs):
    x = xs[0]
    mask = None
    if attrs.get("low") is not None:
        mask = ops.greater_equal(x, float(attrs["low"]))
    if attrs.get("high") is not None:
        upper = ops.less_equal(x, float(attrs["high"]))
        mask = upper if mask is None else ops.logical_and(mask, upper)
    if mask is None:
        return [g]
    return [ops.where(mask, g, ops.zeros_like(g))]


def _clip(x, attrs):
    lo, hi = attrs.get("low"), attrs.get("high")
    return np.clip(x.astype(F64), -np.inf if lo is None else lo, np.inf if hi is None else hi)


def _pow(x, attrs):
    return np.power(x.astype(F64), float(attrs["exponent"]))


def _vjp_pow(ops, g, xs, out, attrs):
    p = float(attrs["exponent"])
    return [ops.mul(g, ops.mul(ops.pow(xs[0], exponent=p - 1.0), p))]


_unary("neg", lambda x, a: -x, lambda ops, g, xs, out, a: [ops.neg(g)], _keep_numeric)
_unary("relu", lambda x, a: np.maximum(x, 0).astype(x.dtype), _vjp_relu, _keep_numeric)
_unary("tanh", lambda x, a: np.tanh(x),
       lambda ops, g, xs, out, a: [ops.mul(g, ops.sub(1.0, ops.square(out)))])
_unary("exp", lambda x, a: np.exp(x), lambda ops, g, xs, out, a: [ops.mul(g, out)])
_unary("log", lambda x, a: np.log(x), lambda ops, g, xs, out, a: [ops.div(g, xs[0])])
_unary("square", lambda x, a: np.square(x),
       lambda ops, g, xs, out, a: [ops.mul(g, ops.mul(xs[0], 2.0))], _keep_numeric)
_unary("sqrt", lambda x, a: np.sqrt(x), lambda ops, g, xs, out, a: [ops.div(g, ops.mul(out, 2.0))])
_unary("abs", lambda x, a: np.abs(x), lambda ops, g, xs, out, a: [ops.mul(g, ops.sign(xs[0]))],
       _keep_numeric)
_unary("sign", lambda x, a: np.sign(x), None, _keep_numeric)
_unary("pow", _pow, _vjp_pow)
_unary("clip", _clip, _vjp_clip)
_unary("logical_not", lambda x, a: np.logical_not(x), None, lambda dt: _logic_dtype([dt]))


def _stop_forward(xs, attrs, rng):
    return xs[0]


_register("stop_gradient", _stop_forward, lambda s, d, a: (tuple(s[0]), d[0]),
          lambda ops, g, xs, out, a: [None], arity=1)


def _cast_forward(xs, attrs, rng):
    return xs[0].astype(dtype_of(attrs["dtype"]))


def _vjp_cast(ops, g, xs, out, attrs):
    return [g if xs[0].dtype == F64 and out.dtype == F64 else None]


_register("cast", _cast_forward, lambda s, d, a: (tuple(s[0]), dtype_of(a["dtype"])), _vjp_cast,
          arity=1)


def _like_forward(fill):
    def forward(xs, attrs, rng):
        dt = dtype_of(attrs["dtype"]) if attrs.get("dtype") else xs[0].dtype
        return np.full(xs[0].shape, fill, dtype=dt)
    return forward


def _like_infer(shapes, dtypes, attrs):
    return tuple(shapes[0]), dtype_of(attrs["dtype"]) if attrs.get("dtype") else dtypes[0]


_register("zeros_like", _like_forward(0), _like_infer, arity=1)
_register("ones_like", _like_forward(1), _like_infer, arity=1)


# ---------------------------------------------------------------------------
# reductions

def _reduce(name, fn, vjp, dtype_rule):
    def forward(xs, attrs, rng):
        x = xs[0]
        dtype_rule(x.dtype)
        axis = attrs.get("axis")
        if axis is not None:
            axis = _norm_axis(axis, x.ndim)
        if x.size == 0 and name in ("max", "min") and (axis is None or x.shape[axis] == 0):
            raise ShapeError(f"{name} of an empty tensor")
        return as_array(fn(x, axis=axis, keepdims=bool(attrs.get("keepdims", False))))

    def infer(shapes, dtypes, attrs):
        shape = tuple(shapes[0])
        dt = dtype_rule(dtypes[0])
        axis = attrs.get("axis")
        keep = bool(attrs.get("keepdims", False))
        if axis is None:
            return ((1,) * len(shape) if keep else ()), dt
        axis = _norm_axis(axis, len(shape))
        if keep:
            return shape[:axis] + (1,) + shape[axis + 1:], dt
        return shape[:axis] + shape[axis + 1:], dt

    _register(name, forward, infer, vjp, arity=1)


def _expanded(ops, g, x, attrs):
    axis = attrs.get("axis")
    if axis is None or attrs.get("keepdims"):
        return ops.broadcast_like(g, x)
    return ops.broadcast_like(ops.expand_dims(g, axis=axis), x)


def _vjp_sum(ops, g, xs, out, attrs):
    return [_expanded(ops, g, xs[0], attrs)]


def _vjp_mean(ops, g, xs, out, attrs):
    x = xs[0]
    axis = attrs.get("axis")
    count = ops.size(x) if axis is None else ops.dim(x, axis=axis)
    return [ops.div(_expanded(ops, g, x, attrs), ops.cast(count, dtype="f64"))]


def _vjp_extreme(ops, g, xs, out, attrs):
    x = xs[0]
    hit = ops.equal(x, _expanded(ops, out, x, attrs))
    return [ops.where(hit, _expanded(ops, g, x, attrs), ops.zeros_like(x))]


_reduce("sum", np.sum, _vjp_sum, _keep_numeric)
_reduce("mean", np.mean, _vjp_mean, lambda dt: (_numeric(dt), F64)[1])
_reduce("max", np.max, _vjp_extreme, _keep_numeric)
_reduce("min", np.min, _vjp_extreme, _keep_numeric)


def _argmax_forward(xs, attrs, rng):
    x = xs[0]
    _numeric(x.dtype)
    axis = _norm_axis(attrs.get("axis", -1), x.ndim)
    if x.shape[axis] == 0:
        raise ShapeError("argmax over an empty axis")
    # np.argmax returns the first maximal index: ties break low.
    return np.argmax(x, axis=axis).astype(I64)


def _argmax_infer(shapes, dtypes, attrs):
    _numeric(dtypes[0])
    shape = tuple(shapes[0])
    axis = _norm_axis(attrs.get("axis", -1), len(shape))
    return shape[:axis] + shape[axis + 1:], I64


_register("argmax", _argmax_forward, _argmax_infer, arity=1)


# ---------------------------------------------------------------------------
# linear algebra / layout

def _matmul_forward(xs, attrs, rng):
    a, b = xs
    _numeric(a.dtype, b.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return as_array(a @ b)


def _matmul_infer(shapes, dtypes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a} @ {b}")
    if not _same_dims(a[1], b[0]):
        raise ShapeError(f"matmul inner extents differ: {a} @ {b}")
    return (a[0], b[1]), _arith_dtype(dtypes)


def _vjp_matmul(ops, g, xs, out, attrs):
    a, b = xs
    return [ops.matmul(g, ops.transpose(b)), ops.matmul(ops.transpose(a), g)]


_register("matmul", _matmul_forward, _matmul_infer, _vjp_matmul, arity=2)


def _transpose_forward(xs, attrs, rng):
    x = xs[0]
    if x.ndim < 2:
        raise ShapeError("transpose needs rank >= 2")
    return np.swapaxes(x, -1, -2)


def _transpose_infer(shapes, dtypes, attrs):
    s = tuple(shapes[0])
    if len(s) < 2:
        raise ShapeError("transpose needs rank >= 2")
    return s[:-2] + (s[-1], s[-2]), dtypes[0]


_register("transpose", _transpose_forward, _transpose_infer,
          lambda ops, g, xs, out, a: [ops.transpose(g)], arity=1)


def _gather_forward(xs, attrs, rng):
    x, idx = xs
    if idx.dtype != I64:
        raise DTypeError("gather indices must be integer")
    axis = _norm_axis(attrs.get("axis", 0), x.ndim)
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather index out of range [0, {n})")
    return np.take(x, idx, axis=axis)


def _gather_infer(shapes, dtypes, attrs):
    if dtypes[1] != I64:
        raise DTypeError("gather indices must be integer")
    x, idx = tuple(shapes[0]), tuple(shapes[1])
    axis = _norm_axis(attrs.get("axis", 0), len(x))
    return x[:axis] + idx + x[axis + 1:], dtypes[0]


def _vjp_gather(ops, g, xs, out, attrs):
    x, idx = xs
    return [ops.scatter_add_like(x, idx, g, axis=attrs.get("axis", 0)), None]


_register("gather", _gather_forward, _gather_infer, _vjp_gather, arity=2)


def _scatter_add_forward(xs, attrs, rng):
    x, idx, g = xs
    axis = _norm_axis(attrs.get("axis", 0), x.ndim)
    k = idx.ndim
    out = np.zeros(x.shape, dtype=F64)
    moved = np.moveaxis(out, axis, 0)
    gm = np.moveaxis(g.astype(F64), list(range(axis, axis + k)), list(range(k)))
    np.add.at(moved, idx.reshape(-1), gm.reshape((-1,) + moved.shape[1:]))
    return out


def _scatter_add_infer(shapes, dtypes, attrs):
    return tuple(shapes[0]), F64


def _vjp_scatter_add(ops, g, xs, out, attrs):
    return [None, None, ops.gather(g, xs[1], axis=attrs.get("axis", 0))]


_register("scatter_add_like", _scatter_add_forward, _scatter_add_infer, _vjp_scatter_add, arity=3)


def _scatter_update_forward(xs, attrs, rng):
    base, idx, upd = xs
    if idx.dtype != I64:
        raise DTypeError("scatter indices must be integer")
    n = base.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"scatter index out of range [0, {n})")
    if (base.dtype == BOOL) != (upd.dtype == BOOL):
        raise DTypeError("scatter update dtype differs from base")
    # "_inplace" is set by the staged executor only when no one else can observe ``base``
    out = base if attrs.get("_inplace") else base.copy()
    upd = np.broadcast_to(upd, idx.shape + base.shape[1:])
    if idx.ndim == 1 and idx.size > 1:
        # duplicate indices: the last occurrence wins, independent of numpy internals
        _, first = np.unique(idx[::-1], return_index=True)
        keep = np.sort(idx.size - 1 - first)
        idx, upd = idx[keep], upd[keep]
    out[idx] = upd
    return out


def _scatter_update_infer(shapes, dtypes, attrs):
    if dtypes[1] != I64:
        raise DTypeError("scatter indices must be integer")
    if (dtypes[0] == BOOL) != (dtypes[2] == BOOL):
        raise DTypeError("scatter update dtype differs from base")
    return tuple(shapes[0]), dtypes[0]


_register("scatter_update", _scatter_update_forward, _scatter_update_infer,
          lambda ops, g, xs, out, a: [None, None, None], arity=3)


def _one_hot_forward(xs, attrs, rng):
    idx = xs[0]
    if idx.dtype != I64:
        raise DTypeError("one_hot needs integer indices")
    depth = int(attrs["depth"])
    return (idx[..., None] == np.arange(depth)).astype(F64)


def _one_hot_infer(shapes, dtypes, attrs):
    if dtypes[0] != I64:
        raise DTypeError("one_hot needs integer indices")
    return tuple(shapes[0]) + (int(attrs["depth"]),), F64


_register("one_hot", _one_hot_forward, _one_hot_infer, arity=1)


def _concat_forward(xs, attrs, rng):
    axis = attrs.get("axis", 0)
    ranks = {x.ndim for x in xs}
    if len(ranks) != 1:
        raise ShapeError("concat operands differ in rank")
    axis = _norm_axis(axis, xs[0].ndim)
    dts = {x.dtype for x in xs}
    if len(dts) != 1:
        if BOOL in dts:
            raise DTypeError("concat of bool with numeric")
        xs = [x.astype(F64) for x in xs]
    try:
        return np.concatenate(xs, axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None


def _concat_infer(shapes, dtypes, attrs):
    ranks = {len(s) for s in shapes}
    if len(ranks) != 1:
        raise ShapeError("concat operands differ in rank")
    ndim = ranks.pop()
    axis = _norm_axis(attrs.get("axis", 0), ndim)
    out = []
    for i in range(ndim):
        dims = [s[i] for s in shapes]
        if i == axis:
            out.append(None if any(d is None for d in dims) else sum(dims))
        else:
            known = {d for d in dims if d is not None}
            if len(known) > 1:
                raise ShapeError(f"concat extents differ on axis {i}: {dims}")
            out.append(known.pop() if known else None)
    dts = set(dtypes)
    if len(dts) != 1 and BOOL in dts:
        raise DTypeError("concat of bool with numeric")
    return tuple(out), (dtypes[0] if len(dts) == 1 else F64)


def _vjp_concat(ops, g, xs, out, attrs):
    return [ops.concat_part(g, *xs, index=i, axis=attrs.get("axis", 0)) for i in range(len(xs))]


_register("concat", _concat_forward, _concat_infer, _vjp_concat)


def _concat_part_forward(xs, attrs, rng):
    g, parts = xs[0], xs[1:]
    axis = _norm_axis(attrs.get("axis", 0), g.ndim)
    i = int(attrs["index"])
    start = sum(p.shape[axis] for p in parts[:i])
    sl = [slice(None)] * g.ndim
    sl[axis] = slice(start, start + parts[i].shape[axis])
    return g[tuple(sl)]


_register("concat_part", _concat_part_forward,
          lambda s, d, a: (tuple(s[1 + int(a["index"])]), d[0]))


def _resolve_reshape(in_shape, target):
    target = tuple(int(d) for d in target)
    if sum(1 for d in target if d == -1) > 1:
        raise ShapeError("reshape allows at most one -1")
    if any(d is None for d in in_shape):
        return tuple(None if d == -1 else d for d in target)
    total = int(np.prod(in_shape)) if in_shape else 1
    known = int(np.prod([d for d in target if d != -1])) if target else 1
    if -1 in target:
        if known == 0 or total % known:
            raise ShapeError(f"cannot reshape {in_shape} to {target}")
        return tuple(total // known if d == -1 else d for d in target)
    if known != total:
        raise ShapeError(f"cannot reshape {in_shape} to {target}")
    return target


def _reshape_forward(xs, attrs, rng):
    x = xs[0]
    return x.reshape(_resolve_reshape(x.shape, attrs["shape"]))


_register("reshape", _reshape_forward,
          lambda s, d, a: (_resolve_reshape(tuple(s[0]), a["shape"]), d[0]),
          lambda ops, g, xs, out, a: [ops.reshape_like(g, xs[0])], arity=1)


def _reshape_like_forward(xs, attrs, rng):
    x, y = xs
    if x.size != y.size:
        raise ShapeError(f"cannot reshape {x.shape} like {y.shape}")
    return x.reshape(y.shape)


_register("reshape_like", _reshape_like_forward, lambda s, d, a: (tuple(s[1]), d[0]),
          lambda ops, g, xs, out, a: [ops.reshape_like(g, xs[0]), None], arity=2)


def _broadcast_forward(xs, attrs, rng):
    try:
        return np.broadcast_to(xs[0], tuple(attrs["shape"]))
    except ValueError as e:
        raise ShapeError(str(e)) from None


def _broadcast_infer(shapes, dtypes, attrs):
    target = tuple(attrs["shape"])
    if broadcast_shapes(tuple(shapes[0]), target) != target:
        raise ShapeError(f"cannot broadcast {shapes[0]} to {target}")
    return target, dtypes[0]


_register("broadcast", _broadcast_forward, _broadcast_infer,
          lambda ops, g, xs, out, a: [ops.sum_to_like(g, xs[0])], arity=1)


def _broadcast_like_forward(xs, attrs, rng):
    try:
        return np.broadcast_to(xs[0], xs[1].shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None


def _broadcast_like_infer(shapes, dtypes, attrs):
    broadcast_shapes(tuple(shapes[0]), tuple(shapes[1]))
    return tuple(shapes[1]), dtypes[0]


_register("broadcast_like", _broadcast_like_forward, _broadcast_like_infer,
          lambda ops, g, xs, out, a: [ops.sum_to_like(g, xs[0]), None], arity=2)


def _sum_to_like_forward(xs, attrs, rng):
    g, x = xs
    target = x.shape
    if g.shape == target:
        return g
    extra = g.ndim - len(target)
    if extra < 0:
        raise ShapeError(f"cannot reduce {g.shape} to {target}")
    out = g.sum(axis=tuple(range(extra))) if extra else g
    axes = tuple(i for i, d in enumerate(target) if d == 1 and out.shape[i] != 1)
    if axes:
        out = out.sum(axis=axes, keepdims=True)
    if out.shape != target:
        raise ShapeError(f"cannot reduce {g.shape} to {target}")
    return as_array(out)


_register("sum_to_like", _sum_to_like_forward, lambda s, d, a: (tuple(s[1]), d[0]),
          lambda ops, g, xs, out, a: [ops.broadcast_like(g, xs[0]), None], arity=2)


def _expand_forward(xs, attrs, rng):
    return np.expand_dims(xs[0], attrs["axis"])


def _expand_infer(shapes, dtypes, attrs):
    s = list(shapes[0])
    axis = attrs["axis"]
    if not -(len(s) + 1) <= axis <= len(s):
        raise AxisError(f"axis {axis} out of range for expand_dims of rank {len(s)}")
    axis = axis % (len(s) + 1)
    s.insert(axis, 1)
    return tuple(s), dtypes[0]


_register("expand_dims", _expand_forward, _expand_infer,
          lambda ops, g, xs, out, a: [ops.reshape_like(g, xs[0])], arity=1)


def _squeeze_forward(xs, attrs, rng):
    x = xs[0]
    axis = _norm_axis(attrs["axis"], x.ndim)
    if x.shape[axis] != 1:
        raise ShapeError(f"cannot squeeze axis {axis} of extent {x.shape[axis]}")
    return np.squeeze(x, axis)


def _squeeze_infer(shapes, dtypes, attrs):
    s = tuple(shapes[0])
    axis = _norm_axis(attrs["axis"], len(s))
    if s[axis] not in (1, None):
        raise ShapeError(f"cannot squeeze axis {axis} of extent {s[axis]}")
    return s[:axis] + s[axis + 1:], dtypes[0]


_register("squeeze", _squeeze_forward, _squeeze_infer,
          lambda ops, g, xs, out, a: [ops.reshape_like(g, xs[0])], arity=1)


def _where_dtype(dts):
    c, a, b = dts
    if c != BOOL:
        raise DTypeError("where condition must be bool")
    if (a == BOOL) != (b == BOOL):
        raise DTypeError("where branches mix bool and numeric")
    if a == BOOL:
        return BOOL
    return F64 if F64 in (a, b) else I64


def _where_forward(xs, attrs, rng):
    dt = _where_dtype([x.dtype for x in xs])
    return np.where(xs[0], xs[1], xs[2]).astype(dt, copy=False)


def _vjp_where(ops, g, xs, out, attrs):
    c, a, b = xs
    zero = ops.zeros_like(g)
    return [None, _stl(ops, ops.where(c, g, zero), a), _stl(ops, ops.where(c, zero, g), b)]


_register("where", _where_forward,
          lambda s, d, a: (broadcast_shapes(*[tuple(x) for x in s]), _where_dtype(d)),
          _vjp_where, arity=3)


def _split_rows(n, num, index):
    if num < 1 or not 0 <= index < num:
        raise ShapeError(f"bad split {index} of {num}")
    if n % num:
        raise ShapeError(f"batch of {n} not divisible into {num} equal parts")
    size = n // num
    return slice(index * size, (index + 1) * size)


def _split_part_forward(xs, attrs, rng):
    x = xs[0]
    return x[_split_rows(x.shape[0], int(attrs["num"]), int(attrs["index"]))]


def _split_part_infer(shapes, dtypes, attrs):
    s = tuple(shapes[0])
    if not s:
        raise ShapeError("cannot split a scalar")
    if s[0] is None:
        return s, dtypes[0]
    sl = _split_rows(s[0], int(attrs["num"]), int(attrs["index"]))
    return (sl.stop - sl.start,) + s[1:], dtypes[0]


def _vjp_split(ops, g, xs, out, attrs):
    return [ops.unsplit_part(g, xs[0], num=attrs["num"], index=attrs["index"])]


_register("split_part", _split_part_forward, _split_part_infer, _vjp_split, arity=1)


def _unsplit_forward(xs, attrs, rng):
    g, x = xs
    out = np.zeros(x.shape, dtype=F64)
    out[_split_rows(x.shape[0], int(attrs["num"]), int(attrs["index"]))] = g
    return out


_register("unsplit_part", _unsplit_forward, lambda s, d, a: (tuple(s[1]), F64),
          lambda ops, g, xs, out, a: [ops.split_part(g, num=a["num"], index=a["index"]), None],
          arity=2)


# ---------------------------------------------------------------------------
# shape queries, ranges, randomness

_register("dim", lambda xs, a, r: np.asarray(xs[0].shape[_norm_axis(a["axis"], xs[0].ndim)], I64),
          lambda s, d, a: ((), I64), arity=1)
_register("size", lambda xs, a, r: np.asarray(xs[0].size, I64), lambda s, d, a: ((), I64), arity=1)


def _count(x) -> int:
    if x.ndim != 0 or x.dtype == BOOL:
        raise ShapeError("count operand must be an integer scalar")
    n = int(x)
    if n < 0:
        raise ShapeError(f"negative count {n}")
    return n


_register("arange", lambda xs, a, r: np.arange(_count(xs[0]), dtype=I64),
          lambda s, d, a: ((None,), I64), arity=1)


def _need_rng(rng):
    if rng is None:
        raise ExecutionError("random primitive evaluated without an rng")
    return rng


_register("random_uniform",
          lambda xs, a, r: _need_rng(r).random(_count(xs[0])),
          lambda s, d, a: ((None,), F64), arity=1, random=True)
_register("random_uniform_like",
          lambda xs, a, r: np.asarray(_need_rng(r).random(xs[0].shape), F64),
          lambda s, d, a: (tuple(s[0]), F64), arity=1, random=True)
_register("random_int_like",
          lambda xs, a, r: np.asarray(_need_rng(r).integers(0, int(a["high"]), size=xs[0].shape), I64),
          lambda s, d, a: (tuple(s[0]), I64), arity=1, random=True)


# ---------------------------------------------------------------------------

def eval_primitive(op_code: str, inputs, attrs=None, rng=None) -> np.ndarray:
    """Evaluate one primitive on concrete arrays (or Tensors)."""
    try:
        prim = PRIMITIVES[op_code]
    except KeyError:
        raise ExecutionError(f"unknown primitive {op_code!r}") from None
    arrays = [as_array(getattr(x, "data", x)) for x in inputs]
    if prim.arity is not None and len(arrays) != prim.arity:
        raise ShapeError(f"{op_code} takes {prim.arity} inputs, got {len(arrays)}")
    return prim.forward(arrays, dict(attrs or {}), rng)


def infer_primitive(op_code: str, shapes, dtypes, attrs=None):
    prim = PRIMITIVES[op_code]
    if prim.arity is not None and len(shapes) != prim.arity:
        raise ShapeError(f"{op_code} takes {prim.arity} inputs, got {len(shapes)}")
    shape, dtype = prim.infer([tuple(s) for s in shapes], list(dtypes), dict(attrs or {}))
    return tuple(shape), dtype
