"""Text checkpoints: a header line, a variable count, then one block per variable.

Values are written as C99 hex floats (``float.hex``) so f64 round-trips bit-exact;
integer and bool variables are written as decimal integers.
"""
from __future__ import annotations

import numpy as np

from modrl.errors import CheckpointError

HEADER = "modrl-checkpoint 1"


def write_checkpoint(path, values: dict):
    lines = [HEADER, str(len(values))]
    for name in sorted(values):
        arr = np.asarray(values[name])
        lines.append(name)
        lines.append(arr.dtype.name)
        lines.append(" ".join(str(d) for d in arr.shape))
        flat = arr.reshape(-1)
        if arr.dtype == np.float64:
            lines.append(" ".join(float(x).hex() for x in flat))
        else:
            lines.append(" ".join(str(int(x)) for x in flat))
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from None


def read_checkpoint(path) -> dict:
    try:
        with open(path) as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if not lines or lines[0] != HEADER:
        raise CheckpointError(f"{path}: not a checkpoint (bad header)")
    try:
        count = int(lines[1])
        out = {}
        pos = 2
        for _ in range(count):
            name, dtype, shape_text, data = lines[pos:pos + 4]
            pos += 4
            shape = tuple(int(d) for d in shape_text.split())
            tokens = data.split()
            if dtype == "float64":
                flat = np.array([float.fromhex(t) for t in tokens], np.float64)
            elif dtype in ("int64", "bool"):
                flat = np.array([int(t) for t in tokens], np.int64).astype(dtype)
            else:
                raise CheckpointError(f"{path}: unsupported dtype {dtype}")
            if name in out:
                raise CheckpointError(f"{path}: variable {name} listed twice")
            out[name] = flat.reshape(shape)
    except (ValueError, IndexError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from None
    return out
