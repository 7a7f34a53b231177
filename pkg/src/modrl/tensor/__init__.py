from modrl.tensor.autodiff import Tape, backprop, finite_diff, grad
from modrl.tensor.core import BOOL, F64, I64, Tensor, Variable, as_array, dtype_of
from modrl.tensor.ops import EagerOps, Ops, OverlayStore, VariableStore
from modrl.tensor.primitives import PRIMITIVES, eval_primitive, infer_primitive

__all__ = [
    "BOOL", "F64", "I64", "Tensor", "Variable", "Tape", "as_array", "dtype_of",
    "backprop", "grad", "finite_diff", "Ops", "EagerOps", "VariableStore", "OverlayStore",
    "PRIMITIVES", "eval_primitive", "infer_primitive",
]
