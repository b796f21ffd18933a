"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records a closure on the output tensor that pushes the output
gradient back to its parents. ``backward`` walks the tape once and then
frees it, so a second ``backward`` on the same loss is an error.
"""
from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, FormatError, LabelError, NonFiniteError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, _lift(other, self.shape))
    __radd__ = lambda self, other: add(_lift(other, self.shape), self)
    __sub__ = lambda self, other: sub(self, _lift(other, self.shape))
    __rsub__ = lambda self, other: sub(_lift(other, self.shape), self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def backward(self):
        backward(self)


def _lift(value, shape):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(shape, float(value)))


def _result(data, parents, backward_fn, op):
    """Wrap ``data`` as an op output and, if recording, attach its adjoint."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), back, "matmul")


def add(a, b):
    _same_shape("add", a, b)

    def back(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    _same_shape("sub", a, b)

    def back(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    _same_shape("mul", a, b)

    def back(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), back, "mul")


def scale(a, c):
    def back(g):
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), back, "scale")


def add_bias(x, b):
    """Add a bias row ``b`` (shape ``(d,)``) to every row of ``x`` (shape ``(n, d)``).

    This is the only broadcasting the engine supports.
    """
    if b.data.ndim != 1 or x.data.ndim != 2 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")

    def back(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0))

    return _result(x.data + b.data, (x, b), back, "add_bias")


def tanh(a):
    y = np.tanh(a.data)

    def back(g):
        _accumulate(a, g * (1.0 - y * y))

    return _result(y, (a,), back, "tanh")


def sigmoid(a):
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def back(g):
        _accumulate(a, g * y * (1.0 - y))

    return _result(y, (a,), back, "sigmoid")


def relu(a):
    mask = a.data > 0

    def back(g):
        _accumulate(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), back, "relu")


def elementwise(op, a, b=None):
    """Dispatch one of ``add``, ``mul``, ``tanh``, ``sigmoid``, ``relu`` by name."""
    binary = {"add": add, "mul": mul}
    unary = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
    if op in binary:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return binary[op](a, b)
    if op in unary:
        return unary[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


def concat(tensors, axis=1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            _accumulate(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def take(a, index):
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(np.array(a.data[index]), (a,), back, "take")


def reshape(a, shape):
    def back(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), back, "reshape")


def sum_all(a):
    def back(g):
        _accumulate(a, np.full(a.shape, float(g)))

    return _result(np.array(a.data.sum()), (a,), back, "sum")


def mean_all(a):
    n = a.data.size

    def back(g):
        _accumulate(a, np.full(a.shape, float(g) / n))

    return _result(np.array(a.data.sum() / n), (a,), back, "mean")


def mse(pred, target):
    """Mean squared error against a constant target array."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size

    def back(g):
        _accumulate(pred, float(g) * 2.0 * diff / n)

    return _result(np.array((diff * diff).sum() / n), (pred,), back, "mse")


def softmax(logits):
    """Row-wise softmax as a plain array (no tape)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean over rows of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"softmax_cross_entropy: {n} rows but {targets.shape} targets")
    if n and (targets.min() < 0 or targets.max() >= c):
        raise LabelError(f"targets must lie in [0, {c}), got {targets.min()}..{targets.max()}")
    targets = targets.astype(np.intp)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (logsumexp - z[rows, targets]).sum() / n

    def back(g):
        p = np.exp(z - logsumexp[:, None])
        p[rows, targets] -= 1.0
        _accumulate(logits, float(g) * p / n)

    return _result(np.array(loss), (logits,), back, "softmax_cross_entropy")


def conv2d(x, weight, bias, stride=1):
    """Valid (unpadded) 2-D convolution over NHWC input.

    ``weight`` has shape ``(kh, kw, c_in, c_out)``, ``bias`` ``(c_out,)``.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[3] != weight.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    n, h, w, c = x.shape
    kh, kw, _, f = weight.shape
    if h < kh or w < kw:
        raise DimensionError(f"conv2d: input {h}x{w} smaller than kernel {kh}x{kw}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    # windows: n, h-kh+1, w-kw+1, c, kh, kw
    windows = windows[:, ::stride, ::stride][:, :oh, :ow]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)
    wmat = weight.data.reshape(kh * kw * c, f)
    out = (cols @ wmat + bias.data).reshape(n, oh, ow, f)

    def back(g):
        g2 = g.reshape(n * oh * ow, f)
        _accumulate(weight, (cols.T @ g2).reshape(weight.shape))
        _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, c)
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    dx[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += dcols[:, :, :, i, j, :]
            _accumulate(x, dx)

    return _result(out, (x, weight, bias), back, "conv2d")


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tensor that ``loss`` depends on, then free the tape."""
    if loss._consumed:
        raise ContractError("graph already consumed by a previous backward; run forward again")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        node._parents = ()
        node._backward = None
    loss._consumed = True


def init_uniform(rng, shape, fan_in, name=None):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, state):
    """One bias-corrected Adam update in place; gradients are zeroed afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p.shape} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    elif len(state.first_moment) != len(params):
        raise ContractError("optimizer state was built for a different parameter list")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = np.zeros_like(p.data)


MAGIC = b"FKT1"


def _array(value):
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def write_records(fh, arrays):
    for name, value in arrays.items():
        arr = np.asarray(_array(value), dtype="<f8", order="C")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<Q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_records(buf, offset=0):
    out = {}
    end = len(buf)
    try:
        while offset < end:
            (nlen,) = struct.unpack_from("<Q", buf, offset)
            offset += 8
            name = bytes(buf[offset:offset + nlen]).decode("utf-8")
            offset += nlen
            (rank,) = struct.unpack_from("<Q", buf, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", buf, offset)
            offset += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * count > end:
                raise FormatError(f"record {name!r} is truncated")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * count
    except struct.error as exc:
        raise FormatError(f"truncated record: {exc}") from None
    return out


def save_checkpoint(path, params):
    """Write named arrays (or tensors) to the ``FKT1`` container."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        write_records(fh, params)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not an FKT1 checkpoint")
    return read_records(buf, 4)
