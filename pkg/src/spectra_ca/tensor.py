"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every differentiable primitive goes through :func:`record`. When a
:class:`Tape` is active and at least one input depends on a trainable leaf,
the primitive is appended to the tape together with its vector-Jacobian
product; otherwise only the forward value is computed, which keeps pure
evaluation cheap.

    >>> w = Tensor([3.0], name="w", trainable=True)
    >>> with Tape() as tape:
    ...     loss = square(w).sum()
    >>> tape.backward(loss)["w"]
    array([6.])
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

__all__ = [
    "Tensor", "Tape", "record", "as_tensor", "set_debug", "fd_gradient_check",
    "extended_precision",
    "matmul", "add", "sub", "mul", "div", "scale", "neg", "reshape", "concat",
    "slice_", "transpose", "sum_", "mean", "cos", "sin", "exp", "tanh",
    "softplus", "softmax", "square", "sqrt",
]

_DEBUG = False
_TAPES: list["Tape"] = []
# evaluation dtype for primitives; widened only inside extended_precision()
_EVAL = np.float64


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on the output of every primitive."""
    global _DEBUG
    _DEBUG = bool(flag)


class extended_precision:
    """Evaluate primitives in ``np.longdouble`` while the context is active.

    Leaves keep their float64 storage; only intermediate results are carried
    in the wider type. Meant for finite-difference oracles, where rounding
    noise of order eps*|L|/h would otherwise swamp the comparison. No tape
    may record inside the context.
    """

    def __enter__(self):
        global _EVAL
        if _TAPES:
            raise ContractError("extended precision is for tape-free evaluation only")
        self._prev, _EVAL = _EVAL, np.longdouble
        return self

    def __exit__(self, *exc):
        global _EVAL
        _EVAL = self._prev
        return False


class Tensor:
    """A float64 array that can take part in tape recording.

    Leaves are created directly; ``trainable`` leaves need a ``name`` so that
    :meth:`Tape.backward` can report their gradient.
    """

    __slots__ = ("data", "name", "trainable", "_tracked")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None, trainable: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if trainable and name is None:
            raise ContractError("trainable tensors need a name")
        self.data = arr
        self.name = name
        self.trainable = trainable
        self._tracked = trainable

    @classmethod
    def _result(cls, data: np.ndarray, tracked: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.name = None
        t.trainable = False
        t._tracked = tracked
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, trainable={self.trainable})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, key): return slice_(self, key)

    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)

    @property
    def T(self): return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "output", "vjp")

    def __init__(self, kind, inputs, output, vjp):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Append-only record of primitives for one forward pass.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.parameters: dict[str, Tensor] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def clear(self) -> None:
        self.nodes.clear()
        self.parameters.clear()

    def _register(self, t: Tensor) -> None:
        if t.trainable:
            known = self.parameters.get(t.name)
            if known is not None and known is not t:
                raise ContractError(f"two different trainable tensors named {t.name!r}")
            self.parameters[t.name] = t

    def backward(self, output: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a one-element ``output`` w.r.t. every registered parameter.

        Parameters used on the tape but not reachable from ``output`` get a
        zero gradient. Non-trainable leaves get nothing.
        """
        if output.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            need = tuple(t._tracked for t in node.inputs)
            for inp, gi in zip(node.inputs, node.vjp(g, need)):
                if gi is None or not inp._tracked:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        out = {}
        for name, p in self.parameters.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.data) if g is None else np.asarray(g).reshape(p.shape)
        if output.trainable:
            out[output.name] = np.ones_like(output.data)
        return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# Each primitive maps input arrays (plus keyword options) to the output array
# and a closure turning the output cotangent into per-input cotangents.

def _p_add(a, b):
    return a + b, lambda g, need: (_unbroadcast(g, a.shape) if need[0] else None,
                                   _unbroadcast(g, b.shape) if need[1] else None)


def _p_sub(a, b):
    return a - b, lambda g, need: (_unbroadcast(g, a.shape) if need[0] else None,
                                   _unbroadcast(-g, b.shape) if need[1] else None)


def _p_mul(a, b):
    return a * b, lambda g, need: (_unbroadcast(g * b, a.shape) if need[0] else None,
                                   _unbroadcast(g * a, b.shape) if need[1] else None)


def _p_div(a, b):
    out = a / b
    return out, lambda g, need: (_unbroadcast(g / b, a.shape) if need[0] else None,
                                 _unbroadcast(-g * out / b, b.shape) if need[1] else None)


def _blas_ready(a: np.ndarray) -> np.ndarray:
    if a.ndim > 2 and a.itemsize not in (a.strides[-1], a.strides[-2]):
        return np.ascontiguousarray(a)
    return a


def _p_matmul(a, b):
    # stacked matmuls over views with no unit-stride axis fall off the BLAS path
    a, b = _blas_ready(a), _blas_ready(b)

    def vjp(g, need):
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape) if need[0] else None
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape) if need[1] else None
        return ga, gb
    return a @ b, vjp


def _p_scale(a, *, factor):
    return a * factor, lambda g, need: (g * factor,)


def _p_reshape(a, *, shape):
    return a.reshape(shape), lambda g, need: (g.reshape(a.shape),)


def _p_transpose(a, *, axes):
    inv = tuple(np.argsort(axes))
    return np.transpose(a, axes), lambda g, need: (np.transpose(g, inv),)


def _p_slice(a, *, key):
    basic = all(k is Ellipsis or k is None or isinstance(k, (slice, int, np.integer))
                for k in (key if isinstance(key, tuple) else (key,)))

    def vjp(g, need):
        full = np.zeros_like(a)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)
    return a[key], vjp


def _p_sum(a, *, axis, keepdims):
    out = a.sum(axis=axis, keepdims=keepdims)

    def vjp(g, need):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * a.ndim)
        return (np.broadcast_to(g, a.shape),)
    return out, vjp


def _p_mean(a, *, axis, keepdims):
    out, vjp_sum = _p_sum(a, axis=axis, keepdims=keepdims)
    n = a.size // max(out.size, 1)
    return out / n, lambda g, need: (vjp_sum(g, need)[0] / n,)


def _p_cos(a):
    return np.cos(a), lambda g, need: (-g * np.sin(a),)


def _p_sin(a):
    return np.sin(a), lambda g, need: (g * np.cos(a),)


def _p_exp(a):
    out = np.exp(a)
    return out, lambda g, need: (g * out,)


def _p_tanh(a):
    out = np.tanh(a)
    return out, lambda g, need: (g * (1.0 - out * out),)


def _p_softplus(a):
    out = np.logaddexp(0.0, a)
    return out, lambda g, need: (g * 0.5 * (1.0 + np.tanh(0.5 * a)),)


def _p_softmax(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, lambda g, need: (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _p_square(a):
    return a * a, lambda g, need: (2.0 * g * a,)


def _p_sqrt(a):
    out = np.sqrt(a)
    return out, lambda g, need: (0.5 * g / out,)


_PRIMS: dict[str, Callable] = {
    "add": _p_add, "sub": _p_sub, "mul": _p_mul, "division": _p_div,
    "matmul": _p_matmul, "scale": _p_scale, "reshape": _p_reshape,
    "transpose": _p_transpose, "slice": _p_slice, "sum": _p_sum, "mean": _p_mean,
    "cos": _p_cos, "sin": _p_sin, "exp": _p_exp, "tanh": _p_tanh,
    "softplus": _p_softplus, "softmax": _p_softmax, "square": _p_square,
    "sqrt": _p_sqrt,
}


def _check_shapes(kind: str, arrays: Sequence[np.ndarray], opts: dict) -> None:
    if kind in ("add", "sub", "mul", "division"):
        a, b = arrays
        _broadcast_shape(kind, a, b)
    elif kind == "matmul":
        a, b = arrays
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None
    elif kind == "reshape":
        shape, size = opts["shape"], arrays[0].size
        known = int(np.prod([s for s in shape if s != -1]))
        free = sum(1 for s in shape if s == -1)
        ok = (free == 0 and known == size) or (free == 1 and known > 0 and size % known == 0)
        if not ok:
            raise DimensionError(f"reshape: cannot reshape {arrays[0].shape} to {shape}")
    elif kind == "transpose":
        if sorted(opts["axes"]) != list(range(arrays[0].ndim)):
            raise DimensionError(f"transpose: axes {opts['axes']} invalid for shape {arrays[0].shape}")


def record(op_kind: str, inputs: Sequence, **opts) -> Tensor:
    """Evaluate primitive ``op_kind`` and append it to the active tape.

    Supported kinds: add, sub, mul, division, matmul, scale, reshape,
    transpose, slice, sum, mean, cos, sin, exp, tanh, softplus, softmax,
    square, sqrt (concat has its own entry point).
    """
    prim = _PRIMS.get(op_kind)
    if prim is None:
        raise ContractError(f"unknown primitive {op_kind!r}")
    tensors = [as_tensor(x) for x in inputs]
    arrays = [t.data if t.data.dtype == _EVAL else t.data.astype(_EVAL) for t in tensors]
    _check_shapes(op_kind, arrays, opts)
    out, vjp = prim(*arrays, **opts)
    return _finish(op_kind, tensors, np.asarray(out, dtype=_EVAL), vjp)


def _finish(kind, tensors, out, vjp) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(out)):
        raise NumericalError(f"{kind} produced non-finite values")
    tape = _TAPES[-1] if _TAPES else None
    tracked = tape is not None and any(t._tracked for t in tensors)
    result = Tensor._result(out, tracked)
    if tracked:
        for t in tensors:
            tape._register(t)
        tape.nodes.append(_Node(kind, tensors, result, vjp))
    return result


def add(a, b): return record("add", (a, b))
def sub(a, b): return record("sub", (a, b))
def mul(a, b): return record("mul", (a, b))
def div(a, b): return record("division", (a, b))
def matmul(a, b): return record("matmul", (a, b))
def scale(a, factor: float): return record("scale", (a,), factor=float(factor))
def neg(a): return record("scale", (a,), factor=-1.0)
def cos(a): return record("cos", (a,))
def sin(a): return record("sin", (a,))
def exp(a): return record("exp", (a,))
def tanh(a): return record("tanh", (a,))
def softplus(a): return record("softplus", (a,))
def square(a): return record("square", (a,))
def sqrt(a): return record("sqrt", (a,))


def softmax(a):
    """Softmax over the last axis, evaluated with max-subtraction."""
    return record("softmax", (a,))


def reshape(a, shape):
    return record("reshape", (a,), shape=tuple(int(s) for s in np.atleast_1d(shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    return record("transpose", (a,), axes=tuple(axes))


def slice_(a, key):
    return record("slice", (a,), key=key)


def sum_(a, axis=None, keepdims=False):
    return record("sum", (a,), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return record("mean", (a,), axis=axis, keepdims=keepdims)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {[x.shape for x in ts]} differ off axis {axis}")
    arrays = [t.data for t in ts]
    out = np.concatenate(arrays, axis=ax)
    bounds = np.cumsum([0] + [a.shape[ax] for a in arrays])

    def vjp(g, need):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(arrays)))
    return _finish("concat", ts, out, vjp)


def fd_gradient_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      h: float = 1e-6, detail: bool = False):
    """Compare tape gradients with central finite differences.

    ``loss_fn`` must rebuild the loss from the current contents of
    ``params`` on every call. Each parameter entry is perturbed in place by
    ``±h`` and restored; the perturbed losses are evaluated under
    :class:`extended_precision`, so the differences are limited by
    truncation (order h^2) rather than float64 rounding. The error of one
    parameter is
    ``||fd - g|| / max(||g||, 1e-12)`` over all its entries, so entries with
    near-zero gradients (where differencing noise of order eps*|L|/h
    dominates) do not swamp the comparison. Returns the maximum over
    parameters; with ``detail=True`` also returns the per-parameter values.
    """
    if not h > 0:
        raise ContractError("finite-difference step must be positive")
    with Tape() as tape:
        loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NumericalError("loss is not finite at the unperturbed parameters")
    grads = tape.backward(loss)

    def value():
        with extended_precision():
            v = loss_fn().data.reshape(-1)[0]
        if not np.isfinite(v):
            raise NumericalError("loss is not finite during finite differencing")
        return v

    worst: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ContractError(f"parameter {name!r} is not contiguous")
        g = grads.get(name, np.zeros_like(p.data)).reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up_at = flat[i]
            up = value()
            flat[i] = orig - h
            down_at = flat[i]
            down = value()
            flat[i] = orig
            # divide by the step actually taken after rounding orig +- h
            fd[i] = float((up - down) / (np.longdouble(up_at) - np.longdouble(down_at)))
        worst[name] = float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))
    top = max(worst.values(), default=0.0)
    return (top, worst) if detail else top
