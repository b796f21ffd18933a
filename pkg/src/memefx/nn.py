"""Layers built on :mod:`memefx.autograd`."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Layer:
    """Holds named parameters; sublayers are listed in ``_children`` order."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name, tensor):
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add_child(self, name, layer):
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()
            p.grad = None


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.W = self.add_param("W", ag.init_uniform(rng, (n_in, n_out), n_in))
        self.b = self.add_param("b", Tensor(np.zeros(n_out), requires_grad=True)) if bias else None

    def __call__(self, x):
        y = x @ self.W
        return ag.add_bias(y, self.b) if self.b is not None else y


class LSTM(Layer):
    """Single-layer LSTM returning the final hidden state.

    Gate order in the packed weights is input, forget, cell, output. Steps
    where ``mask`` is 0 carry the previous state through unchanged, so with
    trailing padding the result is the state after the last real token.
    """

    def __init__(self, n_in, hidden, rng):
        super().__init__()
        self.hidden = hidden
        fan_in = n_in + hidden
        self.W_x = self.add_param("W_x", ag.init_uniform(rng, (n_in, 4 * hidden), fan_in))
        self.W_h = self.add_param("W_h", ag.init_uniform(rng, (hidden, 4 * hidden), fan_in))
        self.b = self.add_param("b", Tensor(np.zeros(4 * hidden), requires_grad=True))

    def cell(self, x, h, c):
        H = self.hidden
        z = ag.add_bias(x @ self.W_x + h @ self.W_h, self.b)
        i = z[:, 0:H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        g = z[:, 2 * H:3 * H].tanh()
        o = z[:, 3 * H:4 * H].sigmoid()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def __call__(self, steps, mask=None):
        """``steps`` is a list of ``(n, n_in)`` tensors, ``mask`` an ``(n, T)`` 0/1 array."""
        n = steps[0].shape[0]
        h = Tensor(np.zeros((n, self.hidden)))
        c = Tensor(np.zeros((n, self.hidden)))
        for t, x in enumerate(steps):
            if mask is not None and not mask[:, t].any():
                continue
            h_new, c_new = self.cell(x, h, c)
            if mask is None or mask[:, t].all():
                h, c = h_new, c_new
                continue
            keep = Tensor(np.repeat(mask[:, t:t + 1].astype(np.float64), self.hidden, axis=1))
            hold = Tensor(1.0 - keep.data)
            h = keep * h_new + hold * h
            c = keep * c_new + hold * c
        return h


class Conv2D(Layer):
    def __init__(self, c_in, filters, kernel, stride, rng):
        super().__init__()
        kh, kw = kernel
        self.stride = stride
        self.W = self.add_param("W", ag.init_uniform(rng, (kh, kw, c_in, filters), kh * kw * c_in))
        self.b = self.add_param("b", Tensor(np.zeros(filters), requires_grad=True))

    def output_shape(self, h, w):
        kh, kw, _, f = self.W.shape
        return (h - kh) // self.stride + 1, (w - kw) // self.stride + 1, f

    def __call__(self, x):
        return ag.conv2d(x, self.W, self.b, self.stride)


def embed(table, ids):
    """Look up frozen embedding rows step by step: list of ``(n, dim)`` constants."""
    ids = np.asarray(ids, dtype=np.intp)
    return [Tensor(table[ids[:, t]]) for t in range(ids.shape[1])]
