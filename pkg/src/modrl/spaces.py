"""Typed, shaped descriptions of data flowing through component graphs.

Boxes describe dense leaves (float, int or bool); ``Dict`` and ``Tuple`` nest
other spaces. Batch and time ranks are flags, not extents: a value of a space
with both ranks has shape ``(batch, time, *shape)``.

A time rank without a batch rank is accepted but nonstandard; ``fold`` and
``unfold`` require both.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from modrl.errors import RankMismatchError, ShapeError, SpaceError

FLOAT = np.dtype("float64")
INT = np.dtype("int64")
BOOL = np.dtype("bool")

# Unbounded int boxes sample from this range.
_INT_SAMPLE_RANGE = (-1000, 1000)


class Space:
    kind = "space"

    def __init__(self, add_batch_rank: bool = False, add_time_rank: bool = False):
        self.has_batch_rank = bool(add_batch_rank)
        self.has_time_rank = bool(add_time_rank)

    # structure -----------------------------------------------------------
    @property
    def is_container(self) -> bool:
        return False

    def with_ranks(self, batch: Optional[bool] = None, time: Optional[bool] = None) -> "Space":
        raise NotImplementedError

    def with_batch_rank(self, flag: bool = True) -> "Space":
        return self.with_ranks(batch=flag)

    def flatten(self) -> "OrderedDict[str, Space]":
        return flatten(self)

    # values --------------------------------------------------------------
    def _check_ranks(self, batch, time):
        if batch is not None and not self.has_batch_rank:
            raise RankMismatchError(f"batch={batch} given but {self!r} has no batch rank")
        if time is not None and not self.has_time_rank:
            raise RankMismatchError(f"time={time} given but {self!r} has no time rank")

    def _lead(self, batch, time) -> tuple:
        self._check_ranks(batch, time)
        lead = ()
        if self.has_batch_rank:
            lead += (1 if batch is None else int(batch),)
        if self.has_time_rank:
            lead += (1 if time is None else int(time),)
        return lead

    def sample(self, batch: Optional[int] = None, time: Optional[int] = None, rng=None):
        raise NotImplementedError

    def zeros(self, batch: Optional[int] = None, time: Optional[int] = None):
        raise NotImplementedError

    def contains(self, value) -> bool:
        raise NotImplementedError

    def compatible(self, other: "Space") -> bool:
        """Same structure, kinds, shapes, dtypes and ranks (bounds ignored)."""
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError

    def __ne__(self, other):
        return not self == other


class BoxSpace(Space):
    dtype = FLOAT

    def __init__(self, shape: Sequence[int] = (), low=None, high=None,
                 add_batch_rank: bool = False, add_time_rank: bool = False):
        super().__init__(add_batch_rank, add_time_rank)
        shape = tuple(int(d) for d in shape)
        if any(d < 0 for d in shape):
            raise SpaceError(f"negative extent in shape {shape}")
        self.shape = shape
        self.low = low
        self.high = high

    @property
    def rank(self) -> int:
        return len(self.shape)

    def full_shape(self, batch: Optional[int] = None, time: Optional[int] = None) -> tuple:
        return self._lead(batch, time) + self.shape

    def symbolic_shape(self) -> tuple:
        lead = (None,) * (int(self.has_batch_rank) + int(self.has_time_rank))
        return lead + self.shape

    def with_ranks(self, batch=None, time=None):
        new = self._copy()
        if batch is not None:
            new.has_batch_rank = bool(batch)
        if time is not None:
            new.has_time_rank = bool(time)
        return new

    def _copy(self):
        raise NotImplementedError

    def zeros(self, batch=None, time=None):
        out = np.zeros(self.full_shape(batch, time), dtype=self.dtype)
        return out[()] if out.ndim == 0 else out

    def _shape_ok(self, arr: np.ndarray) -> bool:
        lead = int(self.has_batch_rank) + int(self.has_time_rank)
        return arr.ndim == lead + self.rank and tuple(arr.shape[lead:]) == self.shape

    def compatible(self, other):
        return (type(self) is type(other) and self.shape == other.shape
                and self.has_batch_rank == other.has_batch_rank
                and self.has_time_rank == other.has_time_rank)

    def _rank_spec(self) -> dict:
        spec = {}
        if self.has_batch_rank:
            spec["add_batch_rank"] = True
        if self.has_time_rank:
            spec["add_time_rank"] = True
        return spec

    def __eq__(self, other):
        return (self.compatible(other) and _bound_eq(self.low, other.low)
                and _bound_eq(self.high, other.high)
                and getattr(self, "num_categories", 0) == getattr(other, "num_categories", 0))

    def __hash__(self):
        return hash((type(self).__name__, self.shape, self.has_batch_rank, self.has_time_rank))

    def _rank_repr(self) -> str:
        flags = []
        if self.has_batch_rank:
            flags.append("B")
        if self.has_time_rank:
            flags.append("T")
        return f"[{','.join(flags)}]" if flags else ""


def _bound_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


class FloatBox(BoxSpace):
    kind = "float_box"
    dtype = FLOAT

    def _copy(self):
        return FloatBox(self.shape, self.low, self.high, self.has_batch_rank, self.has_time_rank)

    def sample(self, batch=None, time=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        shape = self.full_shape(batch, time)
        low = -np.inf if self.low is None else np.asarray(self.low, dtype=FLOAT)
        high = np.inf if self.high is None else np.asarray(self.high, dtype=FLOAT)
        lo_fin, hi_fin = np.all(np.isfinite(low)), np.all(np.isfinite(high))
        if lo_fin and hi_fin:
            out = rng.uniform(low, high, size=shape)
        elif lo_fin:
            out = low + np.abs(rng.standard_normal(shape))
        elif hi_fin:
            out = high - np.abs(rng.standard_normal(shape))
        else:
            out = rng.standard_normal(shape)
        out = np.asarray(out, dtype=FLOAT)
        return out[()] if out.ndim == 0 else out

    def contains(self, value) -> bool:
        arr = np.asarray(value)
        if arr.dtype == BOOL or not np.issubdtype(arr.dtype, np.number):
            return False
        if not self._shape_ok(arr):
            return False
        if self.low is not None and np.any(arr < self.low):
            return False
        if self.high is not None and np.any(arr > self.high):
            return False
        return True

    def to_spec(self):
        spec = {"type": self.kind, "shape": list(self.shape)}
        if self.low is not None:
            spec["low"] = np.asarray(self.low).tolist()
        if self.high is not None:
            spec["high"] = np.asarray(self.high).tolist()
        spec.update(self._rank_spec())
        return spec

    def __repr__(self):
        return f"FloatBox{self.shape}{self._rank_repr()}"


class IntBox(BoxSpace):
    """Integer box; categorical over ``{0..n-1}`` when ``num_categories > 0``."""

    kind = "int_box"
    dtype = INT

    def __init__(self, num_categories: int = 0, shape: Sequence[int] = (), low=None, high=None,
                 add_batch_rank: bool = False, add_time_rank: bool = False):
        num_categories = int(num_categories or 0)
        if num_categories < 0:
            raise SpaceError("num_categories must be nonnegative")
        if num_categories > 0:
            low, high = 0, num_categories - 1
        super().__init__(shape, low, high, add_batch_rank, add_time_rank)
        self.num_categories = num_categories

    def _copy(self):
        if self.num_categories:
            return IntBox(self.num_categories, self.shape, add_batch_rank=self.has_batch_rank,
                          add_time_rank=self.has_time_rank)
        return IntBox(0, self.shape, self.low, self.high, self.has_batch_rank, self.has_time_rank)

    def sample(self, batch=None, time=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        shape = self.full_shape(batch, time)
        low = _INT_SAMPLE_RANGE[0] if self.low is None else self.low
        high = _INT_SAMPLE_RANGE[1] if self.high is None else self.high
        out = np.asarray(rng.integers(low, np.asarray(high) + 1, size=shape), dtype=INT)
        return out[()] if out.ndim == 0 else out

    def contains(self, value) -> bool:
        arr = np.asarray(value)
        if arr.dtype == BOOL:
            return False
        if np.issubdtype(arr.dtype, np.floating):
            if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
                return False
        elif not np.issubdtype(arr.dtype, np.integer):
            return False
        if not self._shape_ok(arr):
            return False
        if self.low is not None and np.any(arr < self.low):
            return False
        if self.high is not None and np.any(arr > self.high):
            return False
        return True

    def to_spec(self):
        spec = {"type": self.kind}
        if self.num_categories:
            spec["num_categories"] = self.num_categories
        if self.shape:
            spec["shape"] = list(self.shape)
        if not self.num_categories:
            if self.low is not None:
                spec["low"] = np.asarray(self.low).tolist()
            if self.high is not None:
                spec["high"] = np.asarray(self.high).tolist()
        spec.update(self._rank_spec())
        return spec

    def __repr__(self):
        cat = f"({self.num_categories})" if self.num_categories else ""
        return f"IntBox{cat}{self.shape}{self._rank_repr()}"


class BoolBox(BoxSpace):
    kind = "bool_box"
    dtype = BOOL

    def __init__(self, shape: Sequence[int] = (), add_batch_rank: bool = False,
                 add_time_rank: bool = False):
        super().__init__(shape, None, None, add_batch_rank, add_time_rank)

    def _copy(self):
        return BoolBox(self.shape, self.has_batch_rank, self.has_time_rank)

    def sample(self, batch=None, time=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        out = np.asarray(rng.integers(0, 2, size=self.full_shape(batch, time)) == 1)
        return out[()] if out.ndim == 0 else out

    def contains(self, value) -> bool:
        arr = np.asarray(value)
        return arr.dtype == BOOL and self._shape_ok(arr)

    def to_spec(self):
        spec = {"type": self.kind}
        if self.shape:
            spec["shape"] = list(self.shape)
        spec.update(self._rank_spec())
        return spec

    def __repr__(self):
        return f"BoolBox{self.shape}{self._rank_repr()}"


class ContainerSpace(Space):
    @property
    def is_container(self) -> bool:
        return True

    def _children(self):
        raise NotImplementedError

    def compatible(self, other):
        if type(self) is not type(other):
            return False
        a, b = flatten(self), flatten(other)
        return list(a) == list(b) and all(a[k].compatible(b[k]) for k in a)

    def __eq__(self, other):
        if type(self) is not type(other):
            return False
        a, b = flatten(self), flatten(other)
        return list(a) == list(b) and all(a[k] == b[k] for k in a)

    def __hash__(self):
        return hash(tuple(flatten(self).keys()))


class Dict(ContainerSpace):
    kind = "dict"

    def __init__(self, spaces: Optional[Mapping[str, Space]] = None, add_batch_rank: bool = False,
                 add_time_rank: bool = False, **kwargs):
        super().__init__(add_batch_rank, add_time_rank)
        spaces = dict(spaces or {}, **kwargs)
        if not spaces:
            raise SpaceError("Dict space needs at least one child")
        self.spaces = OrderedDict()
        for key in sorted(spaces):
            if not isinstance(key, str) or "/" in key or key == "":
                raise SpaceError(f"invalid Dict key {key!r}")
            child = spaces[key]
            if not isinstance(child, Space):
                raise SpaceError(f"child {key!r} is not a Space")
            self.spaces[key] = child.with_ranks(add_batch_rank, add_time_rank)

    def _children(self):
        return self.spaces.values()

    def __getitem__(self, key):
        return self.spaces[key]

    def keys(self):
        return self.spaces.keys()

    def with_ranks(self, batch=None, time=None):
        b = self.has_batch_rank if batch is None else batch
        t = self.has_time_rank if time is None else time
        return Dict(self.spaces, add_batch_rank=b, add_time_rank=t)

    def sample(self, batch=None, time=None, rng=None):
        self._check_ranks(batch, time)
        rng = np.random.default_rng() if rng is None else rng
        return {k: s.sample(batch, time, rng) for k, s in self.spaces.items()}

    def zeros(self, batch=None, time=None):
        self._check_ranks(batch, time)
        return {k: s.zeros(batch, time) for k, s in self.spaces.items()}

    def contains(self, value) -> bool:
        if not isinstance(value, Mapping) or set(value) != set(self.spaces):
            return False
        return all(s.contains(value[k]) for k, s in self.spaces.items())

    def to_spec(self):
        spec = {"type": self.kind, "spaces": {k: s.with_ranks(False, False).to_spec()
                                             for k, s in self.spaces.items()}}
        if self.has_batch_rank:
            spec["add_batch_rank"] = True
        if self.has_time_rank:
            spec["add_time_rank"] = True
        return spec

    def __repr__(self):
        inner = ", ".join(f"{k}: {v!r}" for k, v in self.spaces.items())
        return "Dict{" + inner + "}"


class Tuple(ContainerSpace):
    kind = "tuple"

    def __init__(self, *spaces: Space, add_batch_rank: bool = False, add_time_rank: bool = False):
        super().__init__(add_batch_rank, add_time_rank)
        if len(spaces) == 1 and isinstance(spaces[0], (list, tuple)):
            spaces = tuple(spaces[0])
        if not spaces:
            raise SpaceError("Tuple space needs at least one child")
        for child in spaces:
            if not isinstance(child, Space):
                raise SpaceError(f"{child!r} is not a Space")
        self.spaces = tuple(s.with_ranks(add_batch_rank, add_time_rank) for s in spaces)

    def _children(self):
        return self.spaces

    def __getitem__(self, i):
        return self.spaces[i]

    def __len__(self):
        return len(self.spaces)

    def with_ranks(self, batch=None, time=None):
        b = self.has_batch_rank if batch is None else batch
        t = self.has_time_rank if time is None else time
        return Tuple(*self.spaces, add_batch_rank=b, add_time_rank=t)

    def sample(self, batch=None, time=None, rng=None):
        self._check_ranks(batch, time)
        rng = np.random.default_rng() if rng is None else rng
        return tuple(s.sample(batch, time, rng) for s in self.spaces)

    def zeros(self, batch=None, time=None):
        self._check_ranks(batch, time)
        return tuple(s.zeros(batch, time) for s in self.spaces)

    def contains(self, value) -> bool:
        if not isinstance(value, (tuple, list)) or len(value) != len(self.spaces):
            return False
        return all(s.contains(v) for s, v in zip(self.spaces, value))

    def to_spec(self):
        spec = {"type": self.kind, "spaces": [s.with_ranks(False, False).to_spec() for s in self.spaces]}
        if self.has_batch_rank:
            spec["add_batch_rank"] = True
        if self.has_time_rank:
            spec["add_time_rank"] = True
        return spec

    def __repr__(self):
        return "Tuple(" + ", ".join(repr(s) for s in self.spaces) + ")"


# ---------------------------------------------------------------------------
# nested-structure utilities

def is_container_value(value) -> bool:
    return isinstance(value, (Mapping, tuple, list))


def _walk(item, path, out):
    if isinstance(item, Dict):
        for k, child in item.spaces.items():
            _walk(child, f"{path}/{k}", out)
    elif isinstance(item, Tuple):
        for i, child in enumerate(item.spaces):
            _walk(child, f"{path}/{i}", out)
    elif isinstance(item, Mapping):
        for k in item:
            _walk(item[k], f"{path}/{k}", out)
    elif isinstance(item, (tuple, list)):
        for i, child in enumerate(item):
            _walk(child, f"{path}/{i}", out)
    else:
        out.append((path, item))


def flatten(space_or_value) -> "OrderedDict[str, Any]":
    """Map every leaf to its "/"-joined path, ordered lexicographically.

    A bare box (or bare leaf value) flattens to the single key ``""``.
    """
    items: list = []
    _walk(space_or_value, "", items)
    keys = [k for k, _ in items]
    if len(set(keys)) != len(keys):
        raise SpaceError("duplicate flat keys")
    return OrderedDict(sorted(items, key=lambda kv: kv[0]))


def unflatten(flat: Mapping[str, Any], like=None):
    """Inverse of :func:`flatten`.

    ``like`` (a space or value) supplies the container structure; without it,
    every nesting level becomes a dict.
    """
    if like is not None:
        return _rebuild(flat, like, "")
    if list(flat.keys()) == [""]:
        return flat[""]
    root: dict = {}
    for key, leaf in flat.items():
        parts = key.split("/")[1:]
        node = root
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = leaf
    return root


def _rebuild(flat, like, path):
    if isinstance(like, Dict):
        return {k: _rebuild(flat, c, f"{path}/{k}") for k, c in like.spaces.items()}
    if isinstance(like, Tuple):
        return tuple(_rebuild(flat, c, f"{path}/{i}") for i, c in enumerate(like.spaces))
    if isinstance(like, Mapping):
        return {k: _rebuild(flat, like[k], f"{path}/{k}") for k in like}
    if isinstance(like, (tuple, list)):
        return tuple(_rebuild(flat, c, f"{path}/{i}") for i, c in enumerate(like))
    return flat[path]


def map_structure(fn, value):
    if isinstance(value, Mapping):
        return {k: map_structure(fn, v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return tuple(map_structure(fn, v) for v in value)
    return fn(value)


def fold_time_into_batch(value, space: Space):
    """Reshape leading ``(B, T)`` dims of every leaf into ``(B*T,)``."""
    if not (space.has_batch_rank and space.has_time_rank):
        raise ShapeError(f"fold requires batch and time ranks on {space!r}")

    def fold(leaf):
        arr = np.asarray(leaf)
        if arr.ndim < 2:
            raise ShapeError(f"leaf of rank {arr.ndim} cannot be folded")
        return arr.reshape((arr.shape[0] * arr.shape[1],) + arr.shape[2:])

    return map_structure(fold, value)


def unfold_time_from_batch(value, space: Space, orig_batch: int, orig_time: int):
    if not (space.has_batch_rank and space.has_time_rank):
        raise ShapeError(f"unfold requires batch and time ranks on {space!r}")

    def unfold(leaf):
        arr = np.asarray(leaf)
        if arr.ndim < 1 or arr.shape[0] != orig_batch * orig_time:
            raise ShapeError(f"leading extent {arr.shape[:1]} != {orig_batch}*{orig_time}")
        return arr.reshape((orig_batch, orig_time) + arr.shape[1:])

    return map_structure(unfold, value)


def sample(space: Space, batch=None, time=None, rng=None):
    return space.sample(batch, time, rng)


def zeros(space: Space, batch=None, time=None):
    return space.zeros(batch, time)


# ---------------------------------------------------------------------------
# config literals

def space_from_spec(spec) -> Space:
    """Build a space from its config literal, e.g. ``{"type": "float_box", "shape": [4]}``."""
    if isinstance(spec, Space):
        return spec
    if not isinstance(spec, Mapping) or "type" not in spec:
        raise SpaceError(f"space literal needs a 'type': {spec!r}")
    spec = dict(spec)
    kind = spec.pop("type")
    batch = spec.pop("add_batch_rank", False)
    time = spec.pop("add_time_rank", False)
    allowed = {
        "float_box": {"shape", "low", "high"},
        "int_box": {"shape", "low", "high", "num_categories"},
        "bool_box": {"shape"},
        "dict": {"spaces"},
        "tuple": {"spaces"},
    }
    if kind not in allowed:
        raise SpaceError(f"unknown space type {kind!r}")
    unknown = set(spec) - allowed[kind]
    if unknown:
        raise SpaceError(f"unknown keys for {kind}: {sorted(unknown)}")
    if kind == "float_box":
        return FloatBox(spec.get("shape", ()), spec.get("low"), spec.get("high"), batch, time)
    if kind == "int_box":
        return IntBox(spec.get("num_categories", 0), spec.get("shape", ()), spec.get("low"),
                      spec.get("high"), batch, time)
    if kind == "bool_box":
        return BoolBox(spec.get("shape", ()), batch, time)
    children = spec.get("spaces")
    if kind == "dict":
        if not isinstance(children, Mapping):
            raise SpaceError("dict space needs a 'spaces' mapping")
        return Dict({k: space_from_spec(v) for k, v in children.items()},
                    add_batch_rank=batch, add_time_rank=time)
    if not isinstance(children, (list, tuple)):
        raise SpaceError("tuple space needs a 'spaces' list")
    return Tuple(*[space_from_spec(v) for v in children], add_batch_rank=batch, add_time_rank=time)


def space_from_value_shape(shape: tuple, dtype, batch_dims: int = 0) -> BoxSpace:
    """Box space for a symbolic shape whose first ``batch_dims`` entries are batch/time."""
    dtype = np.dtype(dtype)
    body = tuple(shape[batch_dims:])
    if any(d is None for d in body):
        raise SpaceError(f"unknown extent outside batch/time ranks: {shape}")
    ranks = dict(add_batch_rank=batch_dims >= 1, add_time_rank=batch_dims >= 2)
    if dtype == BOOL:
        return BoolBox(body, **ranks)
    if np.issubdtype(dtype, np.integer):
        return IntBox(0, body, **ranks)
    return FloatBox(body, **ranks)
