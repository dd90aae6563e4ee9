"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation appends a :class:`Node` to the calling
thread's active :class:`Tape`.  :func:`backward` walks the tape in reverse
and accumulates gradients into leaf tensors, after which the tape is
consumed.  Use :func:`no_grad` for inference so nothing is recorded.

Backward rules are module-level functions looked up when an operation is
applied; tests patch them to confirm the gradient checker notices a wrong
rule.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, UsageError

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "Node",
    "no_grad",
    "is_recording",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "log",
    "square",
    "elementwise",
    "relu",
    "conv2d",
    "reshape",
    "reduce",
    "sum",
    "mean",
    "max",
    "logsumexp",
    "backward",
    "grad_check",
    "GradCheckReport",
]

_local = threading.local()


class Node:
    """One recorded operation: inputs, output and the arrays backward needs."""

    __slots__ = ("op", "inputs", "output", "saved", "forward", "backward", "tape")

    def __init__(self, op, inputs, output, saved, forward, backward, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.forward = forward
        self.backward = backward
        self.tape = tape

    def __repr__(self):
        shapes = ", ".join(str(t.shape) for t in self.inputs)
        return f"Node({self.op}: ({shapes}) -> {self.output.shape})"


class Tape:
    """Ordered record of operations for a single backward pass.

    Nodes are appended as operations execute, so inputs always precede the
    operations that consume them.  A tape can be used as a context manager
    to make it the active tape of the current thread::

        with Tape() as tape:
            loss = model_loss(...)
        backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False
        self._previous = None

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        self._previous = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._previous
        self._previous = None
        return False

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded forward computation from the recorded leaves.

        Intermediate values are taken from the replay itself, not from the
        stored outputs, so the whole chain is recomputed.  Returns the
        outputs in tape order.
        """
        if self.consumed:
            raise UsageError("cannot replay a consumed tape")
        values: dict[int, np.ndarray] = {}
        outputs = []
        for node in self.nodes:
            args = [values.get(id(t), saved) for t, saved in zip(node.inputs, node.saved)]
            out = node.forward(*args)
            values[id(node.output)] = out
            outputs.append(out)
        return outputs


def _active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _local.tape = tape
    return tape


def is_recording() -> bool:
    return not getattr(_local, "paused", False)


@contextmanager
def no_grad():
    """Disable recording in the current thread."""
    previous = getattr(_local, "paused", False)
    _local.paused = True
    try:
        yield
    finally:
        _local.paused = previous


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> Tensor:
        t = cls.__new__(cls)
        t.data = array
        t.grad = None
        t.requires_grad = False
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape(self) -> Tape | None:
        return None if self._node is None else self._node.tape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def square(self):
        return square(self)

    def relu(self):
        return relu(self)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named learnable tensor.  Frozen parameters receive no gradient."""

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool):
        self._frozen = bool(value)
        self.requires_grad = not self._frozen

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, forward: Callable, backward_rule: Callable, *inputs: Tensor) -> Tensor:
    saved = tuple(t.data for t in inputs)
    out = Tensor._wrap(forward(*saved))
    if is_recording() and any(t.requires_grad for t in inputs):
        tape = _active_tape()
        out.requires_grad = True
        out._node = Node(op, inputs, out, saved, forward, backward_rule, tape)
        tape.nodes.append(out._node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------


def _add_backward(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_backward(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_backward(g, out, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _neg_backward(g, out, x):
    return (-g,)


def _exp_backward(g, out, x):
    return (g * out,)


def _log_backward(g, out, x):
    return (g / x,)


def _square_backward(g, out, x):
    return (2.0 * x * g,)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _apply("add", np.add, _add_backward, a, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _apply("sub", np.subtract, _sub_backward, a, b)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _apply("mul", np.multiply, _mul_backward, a, b)


def neg(x) -> Tensor:
    return _apply("neg", np.negative, _neg_backward, as_tensor(x))


def scale(x, factor: float) -> Tensor:
    factor = float(factor)

    def forward(a):
        return a * factor

    def scale_backward(g, out, a):
        return (g * factor,)

    return _apply("scale", forward, scale_backward, as_tensor(x))


def exp(x) -> Tensor:
    return _apply("exp", np.exp, _exp_backward, as_tensor(x))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive input")
    return _apply("log", np.log, _log_backward, x)


def square(x) -> Tensor:
    return _apply("square", np.square, _square_backward, as_tensor(x))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale, "exp": exp, "log": log, "square": square}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch ``kind`` in {add, sub, mul, scale, exp, log, square}."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands)


def _relu_forward(x):
    return np.maximum(x, 0.0)


def _relu_backward(g, out, x):
    return (g * (x > 0.0),)


def relu(x) -> Tensor:
    return _apply("relu", _relu_forward, _relu_backward, as_tensor(x))


# --- linear algebra ----------------------------------------------------------


def _matmul_backward(g, out, a, b):
    return g @ b.T, a.T @ g


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _apply("matmul", np.matmul, _matmul_backward, a, b)


def _conv_extents(h, w, kh, kw, stride):
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def _conv2d_forward(x, k, stride):
    batch, _, h, w = x.shape
    cout, _, kh, kw = k.shape
    oh, ow = _conv_extents(h, w, kh, kw, stride)
    out = np.zeros((batch, cout, oh, ow))
    for p in range(kh):
        for q in range(kw):
            patch = x[:, :, p : p + stride * (oh - 1) + 1 : stride, q : q + stride * (ow - 1) + 1 : stride]
            out += np.einsum("bcij,oc->boij", patch, k[:, :, p, q])
    return out


def _conv2d_backward(g, out, x, k, stride):
    kh, kw = k.shape[2:]
    oh, ow = g.shape[2:]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for p in range(kh):
        for q in range(kw):
            rows = slice(p, p + stride * (oh - 1) + 1, stride)
            cols = slice(q, q + stride * (ow - 1) + 1, stride)
            gk[:, :, p, q] = np.einsum("boij,bcij->oc", g, x[:, :, rows, cols])
            gx[:, :, rows, cols] += np.einsum("boij,oc->bcij", g, k[:, :, p, q])
    return gx, gk


def conv2d(x, kernel, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    ``x`` is ``batch x cin x h x w`` and ``kernel`` is ``cout x cin x kh x kw``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d: input channels {x.shape[1]} != kernel channels {kernel.shape[1]}")
    if kernel.shape[2] > x.shape[2] or kernel.shape[3] > x.shape[3]:
        raise DimensionError(f"conv2d: kernel {kernel.shape[2:]} larger than input {x.shape[2:]}")
    stride = int(stride)
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be positive, got {stride}")

    def forward(a, k):
        return _conv2d_forward(a, k, stride)

    def conv2d_backward(g, out, a, k):
        return _conv2d_backward(g, out, a, k, stride)

    return _apply("conv2d", forward, conv2d_backward, x, kernel)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        shape = np.empty(x.shape, dtype=np.int8).reshape(shape).shape
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    original = x.shape

    def forward(a):
        return a.reshape(shape)

    def reshape_backward(g, out, a):
        return (g.reshape(original),)

    return _apply("reshape", forward, reshape_backward, x)


# --- reductions --------------------------------------------------------------


def _normalize_axis(axis, ndim, op):
    if axis is None:
        return None
    axis = int(axis)
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _first_max_mask(x, axis):
    if axis is None:
        mask = np.zeros(x.size)
        mask[np.argmax(x)] = 1.0
        return mask.reshape(x.shape)
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    mask = np.zeros_like(x)
    np.put_along_axis(mask, idx, 1.0, axis=axis)
    return mask


def reduce(kind: str, x, axis=None, keepdims: bool = False) -> Tensor:
    """Reduce with ``kind`` in {sum, mean, max} over ``axis`` (all axes if None).

    The max gradient goes to the first maximal element only.
    """
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, kind)
    shape = x.shape
    if kind == "sum":

        def forward(a):
            return np.sum(a, axis=axis, keepdims=keepdims)

        def sum_backward(g, out, a):
            return (np.array(_expand(g, shape, axis, keepdims)),)

        return _apply("sum", forward, sum_backward, x)
    if kind == "mean":
        count = x.size if axis is None else shape[axis]

        def forward(a):
            return np.mean(a, axis=axis, keepdims=keepdims)

        def mean_backward(g, out, a):
            return (_expand(g, shape, axis, keepdims) / count,)

        return _apply("mean", forward, mean_backward, x)
    if kind == "max":
        if x.size == 0 or (axis is not None and shape[axis] == 0):
            raise DimensionError("max over an empty axis")

        def forward(a):
            return np.max(a, axis=axis, keepdims=keepdims)

        def max_backward(g, out, a):
            return (_expand(g, shape, axis, keepdims) * _first_max_mask(a, axis),)

        return _apply("max", forward, max_backward, x)
    raise ValueError(f"unknown reduction {kind!r}")


def sum(x, axis=None, keepdims=False) -> Tensor:
    return reduce("sum", x, axis, keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    return reduce("mean", x, axis, keepdims)


def max(x, axis=None, keepdims=False) -> Tensor:
    return reduce("max", x, axis, keepdims)


def _logsumexp_forward(x, axis, keepdims):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _logsumexp_backward(g, out, x, axis, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axis)
        out = np.expand_dims(out, axis)
    return (g * np.exp(x - out),)


def logsumexp(x, axis: int, keepdims: bool = False) -> Tensor:
    """Stable ``log(sum(exp(x)))`` along ``axis``; the gradient is the softmax."""
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, "logsumexp")
    if x.shape[axis] == 0:
        raise DimensionError("logsumexp over an empty axis")

    def forward(a):
        return _logsumexp_forward(a, axis, keepdims)

    def lse_backward(g, out, a):
        return _logsumexp_backward(g, out, a, axis, keepdims)

    return _apply("logsumexp", forward, lse_backward, x)


# --- backward ----------------------------------------------------------------


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Consumes the tape that recorded ``loss``.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise UsageError("loss was not produced by a recorded operation")
    tape = node.tape
    if tape.consumed:
        raise UsageError("tape already consumed by a previous backward call")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward(g, node.output.data, *node.saved)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is not None and t._node.tape is tape:
                key = id(t)
                pending[key] = pending[key] + gi if key in pending else gi
            else:
                t.grad = np.array(gi, dtype=np.float64) if t.grad is None else t.grad + gi
    tape.consumed = True
    tape.nodes = []


# --- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    analytic: list = field(repr=False)
    numeric: list = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable,
    x: Tensor | Sequence[Tensor],
    step: float = 1e-4,
    tolerance: float = 1e-5,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f`` with central differences.

    ``x`` is a tensor (``f(x)`` is evaluated) or a sequence of tensors
    (``f(*x)``).  The per-coordinate error is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps coordinates where
    both gradients vanish from dividing by zero.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    single = isinstance(x, Tensor)
    tensors = [x] if single else list(x)

    def call():
        return f(x) if single else f(*tensors)

    saved = [(t.grad, t.requires_grad) for t in tensors]
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    try:
        with Tape():
            loss = call()
            if loss.size != 1:
                raise DimensionError(f"grad_check needs a scalar function, got shape {loss.shape}")
            if not np.all(np.isfinite(loss.data)):
                raise DomainError("function value is not finite at the check point")
            backward(loss)
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

        numeric = []
        with no_grad():
            for t in tensors:
                original = t.data
                est = np.zeros_like(original)
                for idx in np.ndindex(original.shape):
                    plus = original.copy()
                    plus[idx] += step
                    minus = original.copy()
                    minus[idx] -= step
                    t.data = plus
                    f_plus = call().item()
                    t.data = minus
                    f_minus = call().item()
                    t.data = original
                    est[idx] = (f_plus - f_minus) / (2.0 * step)
                numeric.append(est)
    finally:
        for t, (grad, rg) in zip(tensors, saved):
            t.grad = grad
            t.requires_grad = rg

    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = float(np.maximum(worst, np.max(np.abs(a - n) / denom)))
    return GradCheckReport(worst, tolerance, analytic, numeric)
