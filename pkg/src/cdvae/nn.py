"""Small dense numerical core: reverse-mode autodiff, layers, parameters, Adam.

Everything runs in float64. Arrays are plain numpy ``ndarray``; a vector is a
1-D array and a batch of frames is a 2-D array with one frame per row.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in a computation."""


# ---------------------------------------------------------------------------
# Plain forward primitives


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``W @ x + b`` for a vector, or row-wise for a batch."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W.T + b


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis with population variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    if np.shape(gamma) != x.shape[-1:] or np.shape(beta) != x.shape[-1:]:
        raise ShapeError(f"layer_norm: x{x.shape} gamma{np.shape(gamma)} beta{np.shape(beta)}")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


# ---------------------------------------------------------------------------
# Reverse-mode autodiff


class Tensor:
    """Node of a computation graph.

    Leaves are created with :meth:`Tensor.leaf` (or :func:`constant`); every
    operation returns a new node that remembers its parents and how to push
    a cotangent back to them. Call :func:`backprop` on a scalar node.
    """

    __slots__ = ("data", "parents", "backward_fn", "op", "name")

    def __init__(self, data, parents: tuple = (), backward_fn: Callable | None = None,
                 op: str = "leaf", name: str | None = None):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite value produced by node '{name or op}'")
        self.data = data
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @classmethod
    def leaf(cls, data, name: str | None = None) -> "Tensor":
        return cls(data, name=name)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, name={self.name!r}, shape={self.shape})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return total(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def abs(self) -> "Tensor":
        return absolute(self)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor(a.data + b.data, (a, b), back, "add")


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return Tensor(a.data * b.data, (a, b), back, "mul")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by Tensor as NumericError
        out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    return Tensor(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,), "square")


def absolute(a: Tensor) -> Tensor:
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def total(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``a[..., start:stop]``."""
    def back(g):
        out = np.zeros_like(a.data)
        out[..., start:stop] = g
        return (out,)
    return Tensor(a.data[..., start:stop], (a,), back, "columns")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    n = a.shape[-1]
    return Tensor(np.concatenate([a.data, b.data], axis=-1), (a, b),
                  lambda g: (g[..., :n], g[..., n:]), "concat")


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Select rows ``table[index]``; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.intp)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)
    return Tensor(table.data[index], (table,), back, "gather")


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    out = dense_forward(x.data, W.data, b.data)

    def back(g):
        if x.data.ndim == 1:
            gW = np.outer(g, x.data)
            gb = g
        else:
            gW = g.T @ x.data
            gb = g.sum(axis=0)
        return g @ W.data, gW, gb
    return Tensor(out, (x, W, b), back, "dense")


def lrelu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return Tensor(x.data * scale, (x,), lambda g: (g * scale,), "lrelu")


def layer_norm_node(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)
    return Tensor(gamma.data * xhat + beta.data, (x, gamma, beta), back, "layer_norm")


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(loss: Tensor, params: dict[str, Tensor] | Iterable[Tensor]) -> dict | list:
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    ``params`` may be a mapping name -> leaf (a dict of gradients is returned)
    or a sequence of leaves (a list is returned). Leaves that do not influence
    the loss get zero gradients.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backprop needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not np.all(np.isfinite(pg)):
                raise NumericError(f"non-finite gradient flowing into node '{parent.name or parent.op}'")
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.array(pg, dtype=np.float64)

    def grad_of(t: Tensor) -> np.ndarray:
        g = grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    if isinstance(params, dict):
        return {k: grad_of(t) for k, t in params.items()}
    return [grad_of(t) for t in params]


# ---------------------------------------------------------------------------
# Parameters and optimization


class ParamStore:
    """Named float64 tensors backed by one contiguous buffer.

    The flat layout lets the optimizer update every tensor in a single pass;
    ``store[name]`` returns a writable view. Adam state (``m``, ``v``, ``t``)
    lives alongside.
    """

    def __init__(self, shapes: dict[str, Sequence[int]]):
        self.shapes = {k: tuple(int(n) for n in s) for k, s in shapes.items()}
        self.offsets: dict[str, int] = {}
        off = 0
        for name, shape in self.shapes.items():
            self.offsets[name] = off
            off += int(np.prod(shape, dtype=np.int64))
        self.size = off
        self.data = np.zeros(off)
        self.grad = np.zeros(off)
        self.m = np.zeros(off)
        self.v = np.zeros(off)
        self.t = 0

    def _view(self, buf: np.ndarray, name: str) -> np.ndarray:
        off = self.offsets[name]
        shape = self.shapes[name]
        return buf[off:off + int(np.prod(shape, dtype=np.int64))].reshape(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._view(self.data, name)

    def __contains__(self, name: str) -> bool:
        return name in self.shapes

    def names(self) -> list[str]:
        return list(self.shapes)

    def grad_of(self, name: str) -> np.ndarray:
        return self._view(self.grad, name)

    def slice_of(self, name: str) -> slice:
        off = self.offsets[name]
        return slice(off, off + int(np.prod(self.shapes[name], dtype=np.int64)))

    def flatten(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        flat = np.zeros(self.size)
        for name, g in grads.items():
            if np.shape(g) != self.shapes[name]:
                raise ShapeError(f"gradient for {name}: {np.shape(g)} != {self.shapes[name]}")
            flat[self.slice_of(name)] = np.ravel(g)
        return flat

    def copy(self) -> "ParamStore":
        other = ParamStore(self.shapes)
        for attr in ("data", "grad", "m", "v"):
            getattr(other, attr)[:] = getattr(self, attr)
        other.t = self.t
        return other


def adam_step(params: ParamStore, grads=None, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, in place.

    ``grads`` is a flat array, a name -> array mapping, or ``None`` to use
    ``params.grad``. Entries whose gradient is exactly zero keep their value
    and moment estimates (lazy update), so a zero gradient never moves a
    parameter regardless of accumulated momentum.
    """
    if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
        raise ValueError("adam_step: need lr > 0 and 0 <= beta1, beta2 < 1")
    if grads is None:
        flat = params.grad
    elif isinstance(grads, dict):
        flat = params.flatten(grads)
    else:
        flat = np.ascontiguousarray(grads, dtype=np.float64)
        if flat.shape != (params.size,):
            raise ShapeError(f"flat gradient of shape {flat.shape}, expected ({params.size},)")
    params.t += 1
    kernels.adam_update(params.data, flat, params.m, params.v, params.t,
                        lr, beta1, beta2, eps)
    return params


class Rng:
    """Seeded Gaussian/permutation source whose full state can be saved."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def normal(self, scale: float, shape) -> np.ndarray:
        return scale * self._gen.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self._gen.bit_generator.state = value

    def clone(self) -> "Rng":
        other = Rng(self.seed)
        other.state = self.state
        return other


def sample_standard_normal(rng: Rng, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    return rng.standard_normal(d)
