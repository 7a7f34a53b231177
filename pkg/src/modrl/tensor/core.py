"""Dense tensors and named variables."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from modrl.errors import DTypeError, VariableError

F64 = np.dtype("float64")
I64 = np.dtype("int64")
BOOL = np.dtype("bool")
DTYPES = {"f64": F64, "i64": I64, "bool": BOOL,
          "float64": F64, "int64": I64}


def as_array(value) -> np.ndarray:
    """Coerce to one of the three supported dtypes (f64, i64, bool)."""
    arr = np.asarray(value)
    if arr.dtype == BOOL or arr.dtype == F64 or arr.dtype == I64:
        return arr
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype(F64)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(I64)
    raise DTypeError(f"unsupported dtype {arr.dtype}")


def dtype_of(name) -> np.dtype:
    if isinstance(name, np.dtype):
        return name
    if isinstance(name, type) and name in (float, int, bool):
        return {float: F64, int: I64, bool: BOOL}[name]
    try:
        return DTYPES[str(name)]
    except KeyError:
        raise DTypeError(f"unknown dtype {name!r}") from None


class Tensor:
    """Immutable dense value. ``var_name`` tags tensors that are variable reads."""

    __slots__ = ("data", "var_name")

    def __init__(self, data, var_name: Optional[str] = None):
        self.data = as_array(data)
        self.var_name = var_name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", var={self.var_name}" if self.var_name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


@dataclass
class Variable:
    full_name: str
    initial_value: np.ndarray
    trainable: bool = True
    device: Optional[str] = None
    owner: Optional[str] = field(default=None, repr=False)

    def __post_init__(self):
        self.initial_value = as_array(self.initial_value)

    @property
    def shape(self) -> tuple:
        return self.initial_value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.initial_value.dtype

    def check_assignable(self, value: np.ndarray):
        if value.shape != self.shape:
            raise VariableError(f"shape {value.shape} != {self.shape} for variable {self.full_name}")
        if value.dtype != self.dtype:
            raise VariableError(f"dtype {value.dtype} != {self.dtype} for variable {self.full_name}")
