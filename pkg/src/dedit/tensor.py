"""Dense float tensors with a reverse-mode autodiff tape.

The primitive set is deliberately small: matmul, add, sub, mul, scale,
row_softmax, gelu, layer_norm, gather_rows, assemble_rows, reshape,
transpose, mean_square and total_sum. That closed set is enough for a
patch-transformer denoiser, its text encoder and the training loss.

Values default to float32. Gradient-check oracles may build float64
graphs through the same code paths (the usual gradcheck trick): central
differences at step 1e-3 are meaningless in float32.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, DivergenceError, EvaluationError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN_EPS = 1e-5


class Tensor:
    """A dense array plus an optional gradient buffer.

    `values` is always C-contiguous. `grad` is allocated lazily and
    accumulates across backprop calls until `zero_grad` is called.
    """

    __slots__ = ("values", "grad", "requires_grad", "produced")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.values: np.ndarray = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.produced = False  # True iff written by a recorded primitive

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.values.dtype, copy=True).reshape(self.values.shape)
        else:
            self.grad += g.reshape(self.values.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        flags = "+grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.values.dtype}{flags})"


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def full(shape, value, dtype=np.float32) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype))


# --------------------------------------------------------------------------
# Tape

class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple, vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class ComputationTape:
    """Ordered record of primitive applications for one logical thread."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


_tls = threading.local()


def active_tape() -> ComputationTape:
    tape = getattr(_tls, "tape", None)
    if tape is None:
        tape = ComputationTape()
        _tls.tape = tape
    return tape


def clear_tape() -> None:
    active_tape().clear()


class tape_scope:
    """Context manager that swaps in a fresh tape and restores the old one."""

    def __enter__(self) -> ComputationTape:
        self._saved = getattr(_tls, "tape", None)
        _tls.tape = ComputationTape()
        return _tls.tape

    def __exit__(self, *exc) -> bool:
        _tls.tape = self._saved
        return False


class no_grad:
    """Context manager that suppresses tape recording entirely; used by
    samplers and evaluation paths where gradients are never wanted."""

    def __enter__(self) -> None:
        self._saved = getattr(_tls, "no_grad", False)
        _tls.no_grad = True

    def __exit__(self, *exc) -> bool:
        _tls.no_grad = self._saved
        return False


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.produced


def _check_finite(arr: np.ndarray, op: str) -> None:
    # One float64 reduction catches every NaN/Inf without allocating a mask.
    if arr.size and not math.isfinite(float(np.sum(arr, dtype=np.float64))):
        raise DivergenceError(f"non-finite values after {op}")


def _emit(op: str, values: np.ndarray, inputs: tuple, vjp: Optional[Callable]) -> Tensor:
    _check_finite(values, op)
    out = Tensor.__new__(Tensor)
    out.values = np.ascontiguousarray(values)
    out.grad = None
    out.requires_grad = False
    out.produced = False
    if (vjp is not None and not getattr(_tls, "no_grad", False)
            and any(_tracked(t) for t in inputs)):
        out.produced = True
        active_tape().nodes.append(_Node(out, inputs, vjp))
    return out


# --------------------------------------------------------------------------
# Primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul needs [M,K]x[K,N], got {av.shape} x {bv.shape}")

    def vjp(g):
        ga = g @ bv.T if _tracked(a) else None
        gb = av.T @ g if _tracked(b) else None
        return ga, gb

    return _emit("matmul", av @ bv, (a, b), vjp)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> bool:
    """Validate elementwise shapes; returns True when b broadcasts as a row vector."""
    if a.values.shape == b.values.shape:
        return False
    if b.values.ndim == 1 and a.values.ndim >= 1 and a.values.shape[-1] == b.values.shape[0]:
        return True
    raise DimensionError(f"{op} shapes {a.values.shape} and {b.values.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    row_bcast = _binary_shapes(a, b, "add")

    def vjp(g):
        ga = g if _tracked(a) else None
        if not _tracked(b):
            gb = None
        elif row_bcast:
            gb = g.reshape(-1, b.values.shape[0]).sum(axis=0)
        else:
            gb = g
        return ga, gb

    return _emit("add", a.values + b.values, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    row_bcast = _binary_shapes(a, b, "sub")

    def vjp(g):
        ga = g if _tracked(a) else None
        if not _tracked(b):
            gb = None
        elif row_bcast:
            gb = -g.reshape(-1, b.values.shape[0]).sum(axis=0)
        else:
            gb = -g
        return ga, gb

    return _emit("sub", a.values - b.values, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"mul shapes {a.values.shape} and {b.values.shape}")
    av, bv = a.values, b.values

    def vjp(g):
        ga = g * bv if _tracked(a) else None
        gb = g * av if _tracked(b) else None
        return ga, gb

    return _emit("mul", av * bv, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _emit("scale", a.values * a.values.dtype.type(s), (a,), vjp)


def row_softmax(x: Tensor) -> Tensor:
    xv = x.values
    if xv.ndim != 2 or xv.shape[0] == 0 or xv.shape[1] == 0:
        raise DimensionError(f"row_softmax needs a nonempty [R,C] matrix, got {xv.shape}")
    shifted = xv - xv.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _emit("row_softmax", y, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    xv = x.values
    phi = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    y = xv * phi

    def vjp(g):
        pdf = np.exp(-0.5 * xv * xv) * _INV_SQRT2PI
        return (g * (phi + xv * pdf),)

    return _emit("gelu", y.astype(xv.dtype, copy=False), (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    xv = x.values
    if xv.ndim != 2:
        raise DimensionError(f"layer_norm input must be [R,C], got {xv.shape}")
    c = xv.shape[1]
    if gain.values.shape != (c,) or bias.values.shape != (c,):
        raise DimensionError("layer_norm gain/bias must match the row width")
    mean = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    norm = (xv - mean) * inv
    gv = gain.values

    def vjp(g):
        ggain = (g * norm).sum(axis=0) if _tracked(gain) else None
        gbias = g.sum(axis=0) if _tracked(bias) else None
        if _tracked(x):
            gy = g * gv
            m1 = gy.mean(axis=1, keepdims=True)
            m2 = (gy * norm).mean(axis=1, keepdims=True)
            gx = inv * (gy - m1 - norm * m2)
        else:
            gx = None
        return gx, ggain, gbias

    y = norm * gv + bias.values
    return _emit("layer_norm", y.astype(xv.dtype, copy=False), (x, gain, bias), vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows of a [R,C] table by integer index (embedding lookup)."""
    tv = table.values
    if tv.ndim != 2:
        raise DimensionError(f"gather_rows table must be [R,C], got {tv.shape}")
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= tv.shape[0]):
        raise DimensionError(f"gather_rows index out of range for table with {tv.shape[0]} rows")

    def vjp(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit("gather_rows", tv[idx], (table,), vjp)


def assemble_rows(groups: Sequence[tuple], total_rows: int) -> Tensor:
    """Scatter disjoint row groups into one [total_rows, C] matrix.

    `groups` is a sequence of (positions, Tensor) pairs whose position
    sets must exactly partition range(total_rows).
    """
    if not groups:
        raise DimensionError("assemble_rows needs at least one group")
    width = groups[0][1].values.shape[1]
    seen = np.zeros(total_rows, dtype=np.int64)
    out = np.empty((total_rows, width), dtype=groups[0][1].values.dtype)
    positions = []
    tensors = []
    for pos, rows in groups:
        pos = np.asarray(pos, dtype=np.int64).reshape(-1)
        rv = rows.values
        if rv.ndim != 2 or rv.shape != (pos.size, width):
            raise DimensionError(f"assemble_rows group shape {rv.shape} vs {pos.size} positions")
        if pos.size and (pos.min() < 0 or pos.max() >= total_rows):
            raise DimensionError("assemble_rows position out of range")
        seen[pos] += 1
        out[pos] = rv
        positions.append(pos)
        tensors.append(rows)
    if not np.all(seen == 1):
        raise DimensionError("assemble_rows groups must exactly partition the rows")

    def vjp(g):
        return tuple(g[p] if _tracked(t) else None for p, t in zip(positions, tensors))

    return _emit("assemble_rows", out, tuple(tensors), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.values.shape

    def vjp(g):
        return (g.reshape(old),)

    try:
        vals = x.values.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return _emit("reshape", vals, (x,), vjp)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    xv = x.values
    if axes is None:
        if xv.ndim != 2:
            raise DimensionError("default transpose expects a matrix; pass axes otherwise")
        axes = (1, 0)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _emit("transpose", xv.transpose(axes), (x,), vjp)


def mean_square(x: Tensor) -> Tensor:
    xv = x.values
    n = xv.size
    if n == 0:
        raise DimensionError("mean_square of an empty tensor")

    def vjp(g):
        return (xv * (2.0 * float(g.reshape(-1)[0]) / n),)

    return _emit("mean_square", np.asarray(np.mean(xv * xv), dtype=xv.dtype).reshape(()), (x,), vjp)


def total_sum(x: Tensor) -> Tensor:
    xv = x.values

    def vjp(g):
        return (np.full_like(xv, float(g.reshape(-1)[0])),)

    return _emit("total_sum", np.asarray(xv.sum(), dtype=xv.dtype).reshape(()), (x,), vjp)


# --------------------------------------------------------------------------
# Backprop

def backprop(loss: Tensor) -> None:
    """Populate grads of every requires_grad leaf with d loss / d leaf.

    Leaf grads accumulate additively across calls; intermediate flow
    buffers are private to each call, so calling twice without clearing
    doubles every leaf grad exactly.
    """
    if loss.values.size != 1:
        raise ContractError(f"backprop needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if not tape.nodes:
        raise ContractError("backprop on an empty tape")

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and not loss.produced:
        leaves[id(loss)] = loss

    for node in reversed(tape.nodes):
        g = flow.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not _tracked(t):
                continue
            key = id(t)
            if key in flow:
                flow[key] = flow[key] + gi
            else:
                flow[key] = gi
            if t.requires_grad and not t.produced:
                leaves[key] = t

    for key, t in leaves.items():
        g = flow.get(key)
        if g is not None:
            t.accumulate_grad(g)


# --------------------------------------------------------------------------
# Optimizer

class AdamState:
    """First/second moment buffers for one parameter list."""

    def __init__(self, params: Iterable[Tensor]):
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.step_count = 0


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction. Grads are left untouched."""
    if len(state.m) != len(params):
        raise ContractError("Adam state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise ContractError("adam_step on a parameter with no gradient")
        if p.grad.shape != p.values.shape:
            raise ContractError("gradient shape does not match parameter")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.values -= (lr * update).astype(p.values.dtype, copy=False)
        _check_finite(p.values, "adam_step")


# --------------------------------------------------------------------------
# Gradient oracle

def finite_diff_check(f: Callable[[Tensor], Tensor], p: Tensor, step: float,
                      max_coords: int = 20, seed: int = 0) -> float:
    """Max relative error between backprop grads and central differences.

    Perturbs up to `max_coords` randomly chosen coordinates of `p` in
    place (restoring them), evaluating `f` on a scratch tape each time.
    """
    if step <= 0:
        raise ContractError("finite_diff_check needs step > 0")

    def run() -> float:
        out = f(p)
        v = out.item()
        if not math.isfinite(v):
            raise EvaluationError("objective returned a non-finite value")
        return v, out

    with tape_scope():
        saved_grad = p.grad
        p.grad = None
        _, out = run()
        backprop(out)
        if p.grad is None:
            raise EvaluationError("objective does not depend on the parameter")
        analytic = p.grad.reshape(-1).copy()
        p.grad = saved_grad

    n = p.values.size
    rng = np.random.default_rng(seed)
    if n <= max_coords:
        coords = np.arange(n)
    else:
        coords = rng.choice(n, size=max_coords, replace=False)

    flat = p.values.reshape(-1)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        with tape_scope():
            flat[c] = orig + step
            fp, _ = run()
            flat[c] = orig - step
            fm, _ = run()
            flat[c] = orig
        numeric = (fp - fm) / (2.0 * step)
        a = float(analytic[c])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
