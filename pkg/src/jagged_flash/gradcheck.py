"""Central finite-difference checks for every operator's backward pass."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .attention import jagged_flash_attention_backward, jagged_flash_attention_forward
from .core import Jagged2Tensor, JaggedTensor, random_jagged
from .linalg import Layer
from .padded import as_array

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-5
ABS_FLOOR = 1e-8
DENOM_FLOOR = 1e-8


class GradCheckError(RuntimeError):
    pass


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; the step is ``eps * max(1, |x_i|)``."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = eps * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise GradCheckError(
                f"non-finite objective at coordinate {np.unravel_index(i, x.shape)}"
            )
        gflat[i] = (fp - fm) / (2 * h)
    return grad


@dataclass(frozen=True)
class ShapeSpec:
    lengths: tuple[int, ...] = (0, 1, 2, 5)
    dim: int = 3
    t: int = 2


@dataclass
class GradCheckReport:
    op_id: str
    max_relative_error: float
    max_absolute_error: float
    worst_coordinate: tuple[int, ...] | None
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __bool__(self):
        return self.passed


# --- generic input flattening -------------------------------------------------


def leaves(obj) -> list[np.ndarray]:
    if isinstance(obj, (JaggedTensor, Jagged2Tensor)):
        return [np.asarray(obj.values)]
    if isinstance(obj, Layer):
        return [obj.weight, obj.bias]
    if isinstance(obj, (tuple, list)):
        return [leaf for item in obj for leaf in leaves(item)]
    return [np.asarray(obj)]


def rebuild(obj, arrays: list[np.ndarray]):
    """Inverse of ``leaves``: same structure as ``obj`` with arrays taken in order."""
    it = iter(arrays)

    def go(o):
        if isinstance(o, (JaggedTensor, Jagged2Tensor)):
            return o.with_values(next(it))
        if isinstance(o, Layer):
            return Layer(next(it), next(it), o.activation)
        if isinstance(o, (tuple, list)):
            return type(o)(go(item) for item in o)
        return next(it).reshape(np.shape(o))

    return go(obj)


# --- per-operator recipes -----------------------------------------------------


def _jagged2(rng, lengths):
    lengths = np.asarray(lengths)
    return Jagged2Tensor(lengths, rng.standard_normal(int((lengths * lengths).sum())))


def _mlp_layers(rng, d, t):
    return (
        Layer(rng.standard_normal((d, t)), rng.standard_normal(t), "relu"),
        Layer(rng.standard_normal((t, d)), rng.standard_normal(d), "none"),
    )


def _mlp_near_kink(inputs, margin=1e-3) -> bool:
    x, layers = inputs
    z = x.values @ layers[0].weight + layers[0].bias
    return z.size > 0 and np.abs(z).min() < margin


def _build(op_id: str, rng, spec: ShapeSpec):
    L, D, T = spec.lengths, spec.dim, spec.t
    B = len(L)
    if op_id == "jagged_dense_bmm":
        return random_jagged(rng, L, D), rng.standard_normal((B, D, T))
    if op_id == "jagged_jagged_bmm":
        return random_jagged(rng, L, D), random_jagged(rng, L, T)
    if op_id in ("jagged_softmax",):
        return (random_jagged(rng, L, D),)
    if op_id == "jagged_jagged_bmm_jagged_out":
        return random_jagged(rng, L, D), random_jagged(rng, L, D)
    if op_id == "array_jagged_bmm_jagged_out":
        return _jagged2(rng, L), random_jagged(rng, L, D)
    if op_id == "jagged2_softmax":
        return (_jagged2(rng, L),)
    if op_id == "jagged_mlp":
        # finite differences straddling a relu kink are meaningless: redraw
        for _ in range(100):
            inputs = (random_jagged(rng, L, D), _mlp_layers(rng, D, T))
            if not _mlp_near_kink(inputs):
                return inputs
        raise GradCheckError("could not draw relu pre-activations away from 0")
    if op_id == "jagged_flash_attention":
        return tuple(random_jagged(rng, L, D) for _ in range(3))
    raise KeyError(f"unknown operator {op_id!r}")


def _flash_forward(inputs, block_q=3, block_k=2):
    return jagged_flash_attention_forward(*inputs, block_q=block_q, block_k=block_k)


def forward_fn(op_id: str) -> Callable:
    if op_id == "jagged_flash_attention":
        return lambda inputs: _flash_forward(inputs)[0]
    if op_id in linalg.FORWARD:
        return lambda inputs: linalg.FORWARD[op_id](*inputs)
    raise KeyError(f"unknown operator {op_id!r}")


def backward_fn(op_id: str) -> Callable:
    if op_id == "jagged_flash_attention":
        def flash_vjp(inputs, grad_out):
            _, saved = _flash_forward(inputs)
            return jagged_flash_attention_backward(*inputs, grad_out, saved)
        return flash_vjp
    if op_id in linalg.FORWARD:
        return lambda inputs, grad_out: linalg.vjp(op_id, inputs, grad_out)
    raise KeyError(f"unknown operator {op_id!r}")


CHECKED_OPS = tuple(linalg.FORWARD) + ("jagged_flash_attention",)


def random_like(out, rng):
    if isinstance(out, (JaggedTensor, Jagged2Tensor)):
        return out.with_values(rng.standard_normal(out.values.shape))
    return rng.standard_normal(np.shape(out))


def check_op(
    op_id: str,
    shape_spec: ShapeSpec = ShapeSpec(),
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    eps: float = DEFAULT_EPS,
    backward: Callable | None = None,
) -> GradCheckReport:
    """Compare analytic and numeric gradients of ``<u, op(inputs)>`` for every input slot.

    ``backward(inputs, grad_out)`` overrides the registered backward; tests use
    it to feed a deliberately broken gradient.
    """
    fwd = forward_fn(op_id)
    bwd = backward or backward_fn(op_id)
    rng = np.random.default_rng(seed)
    inputs = _build(op_id, rng, shape_spec)
    out = fwd(inputs)
    u = random_like(out, rng)
    u_flat = as_array(u)

    analytic = [np.asarray(g, dtype=np.float64) for g in leaves(bwd(inputs, u))]
    base = leaves(inputs)
    if len(analytic) != len(base):
        raise GradCheckError(f"{op_id}: backward returned {len(analytic)} slots, expected {len(base)}")

    max_rel = max_abs = 0.0
    worst = None
    for slot, x0 in enumerate(base):

        def objective(x, slot=slot):
            arrays = list(base)
            arrays[slot] = x
            return float(u_flat @ as_array(fwd(rebuild(inputs, arrays))))

        numeric = numerical_grad(objective, x0, eps)
        a = analytic[slot].reshape(numeric.shape)
        abs_err = np.abs(a - numeric)
        rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), DENOM_FLOOR)
        if rel_err.size:
            k = int(np.argmax(rel_err))
            if rel_err.flat[k] > max_rel or worst is None:
                max_rel = float(rel_err.flat[k])
                worst = (slot,) + tuple(int(j) for j in np.unravel_index(k, rel_err.shape))
            max_abs = max(max_abs, float(abs_err.max()))
    passed = max_rel < tol or max_abs < ABS_FLOOR
    return GradCheckReport(op_id, max_rel, max_abs, worst, tol, passed)


def random_shape_spec(rng, length_choices: Sequence[int], max_batch: int = 4, max_dim: int = 4) -> ShapeSpec:
    B = int(rng.integers(1, max_batch + 1))
    lengths = tuple(int(n) for n in rng.choice(length_choices, size=B))
    return ShapeSpec(lengths, int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1)))


def check_suite(op_id: str, cases: int = 20, seed: int = 0, tol: float = DEFAULT_TOL) -> list[GradCheckReport]:
    """``cases`` seeded random shapes; attention uses longer segments than the linalg ops."""
    rng = np.random.default_rng(seed)
    choices = (1, 2, 17) if op_id == "jagged_flash_attention" else (0, 1, 2, 5, 7)
    return [
        check_op(op_id, random_shape_spec(rng, choices), seed=seed * 1000 + c, tol=tol)
        for c in range(cases)
    ]
