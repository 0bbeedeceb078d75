"""JSON fixture format for jagged, jagged² and dense tensors.

    jagged:  {"dim": D, "offsets": [...], "values": [...]}
    jagged²: {"seq_lengths": [...], "values": [...]}
    dense:   {"shape": [...], "data": [...]}

Values are flat decimal numbers; scientific notation is accepted on read.
Floats are written with ``repr`` so a float64 round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Jagged2Tensor, JaggedTensor, ShapeError


def to_obj(t) -> dict:
    if isinstance(t, JaggedTensor):
        return {
            "dim": t.dim,
            "offsets": [int(o) for o in t.offsets],
            "values": [float(v) for v in t.values.reshape(-1)],
        }
    if isinstance(t, Jagged2Tensor):
        return {
            "seq_lengths": [int(n) for n in t.seq_lengths],
            "values": [float(v) for v in t.values],
        }
    arr = np.asarray(t)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def from_obj(obj: dict, dtype=np.float64):
    if "offsets" in obj:
        dim = int(obj["dim"])
        offsets = np.asarray(obj["offsets"], dtype=np.int64)
        values = np.asarray(obj["values"], dtype=dtype).reshape(-1, dim)
        return JaggedTensor(values, offsets)
    if "seq_lengths" in obj:
        return Jagged2Tensor(obj["seq_lengths"], np.asarray(obj["values"], dtype=dtype))
    if "shape" in obj:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=dtype)
        if data.size != int(np.prod(shape)):
            raise ShapeError(f"dense fixture: {data.size} elements for shape {shape}")
        return data.reshape(shape)
    raise ValueError(f"unrecognised fixture keys: {sorted(obj)}")


def dumps(t) -> str:
    return json.dumps(to_obj(t))


def loads(text: str, dtype=np.float64):
    return from_obj(json.loads(text), dtype)


def save(t, path) -> None:
    Path(path).write_text(dumps(t), encoding="utf-8")


def load(path, dtype=np.float64):
    return loads(Path(path).read_text(encoding="utf-8"), dtype)
