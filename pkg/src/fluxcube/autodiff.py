"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tape`` records every produced node in creation order, which is already a
topological order of the computation graph: an operation can only consume
nodes that exist. ``Tape.backward`` therefore walks the record once, in
reverse, and accumulates gradients into every leaf that contributed to the
loss. Nodes that never feed the loss keep a zero gradient.

Tensors built without a tape still compute forward values; they are cheap
"no-grad" evaluations used for validation metrics and finite-difference
oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GradientError(RuntimeError):
    """A gradient, loss, or update stopped being finite."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the graph: a value, its gradient slot, and a backward rule."""

    __slots__ = ("data", "grad", "tape", "_parents", "_backward")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._parents: tuple = ()
        self._backward = None
        if tape is not None:
            tape._record(self)

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # operator sugar; constants are lifted to tape-less Tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of operations for one differentiable evaluation."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def _record(self, node: Tensor) -> None:
        self._nodes.append(node)

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Register a trainable leaf; its .grad is filled by backward()."""
        return Tensor(data, tape=self)

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of every recorded node reachable from ``loss``.

        The loss must be scalar. Each node's backward rule runs exactly once,
        in reverse creation order, after all of its consumers have run.
        """
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)

    def grad_of(self, leaf: Tensor) -> np.ndarray:
        """Gradient of the last backward() for ``leaf`` (zeros if unused)."""
        if leaf.grad is None:
            return np.zeros_like(leaf.data)
        return leaf.grad


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    out = Tensor(data, tape)
    if tape is not None:
        out._parents = parents
        out._backward = backward
    return out


def _wants_grad(t: Tensor) -> bool:
    return t.tape is not None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def bw(g):
        if _wants_grad(a):
            a._accumulate(_unbroadcast(g, a.data.shape))
        if _wants_grad(b):
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def bw(g):
        if _wants_grad(a):
            a._accumulate(_unbroadcast(g, a.data.shape))
        if _wants_grad(b):
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def neg(a) -> Tensor:
    a = _lift(a)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(-g)

    return _make(-a.data, (a,), bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def bw(g):
        if _wants_grad(a):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if _wants_grad(b):
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data / b.data

    def bw(g):
        if _wants_grad(a):
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if _wants_grad(b):
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    exponent = float(exponent)
    data = a.data ** exponent

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked/broadcast semantics.

    ``a`` must have ndim >= 2. A 1-D ``b`` is treated as a column vector and
    the trailing axis of the result is squeezed, mirroring ``np.matmul``.
    """
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2:
        raise ValueError("matmul left operand must have ndim >= 2")
    b_vec = b.data.ndim == 1
    b_data = b.data[:, None] if b_vec else b.data
    data = np.matmul(a.data, b_data)

    def bw(g):
        g_mat = g[..., None] if b_vec else g
        if _wants_grad(a):
            ga = np.matmul(g_mat, np.swapaxes(b_data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if _wants_grad(b):
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g_mat)
            if b_vec:
                gb = gb[..., 0]
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data[..., 0] if b_vec else data, (a, b), bw)


def tanh(a) -> Tensor:
    a = _lift(a)
    data = np.tanh(a.data)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * (1.0 - data * data))

    return _make(data, (a,), bw)


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    a = _lift(a)
    data = np.maximum(a.data, 0.0)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * (a.data > 0.0))

    return _make(data, (a,), bw)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), the smooth rectifier; gradient is the sigmoid."""
    a = _lift(a)
    data = np.logaddexp(0.0, a.data)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g / (1.0 + np.exp(-a.data)))

    return _make(data, (a,), bw)


def exp(a) -> Tensor:
    a = _lift(a)
    data = np.exp(a.data)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * data)

    return _make(data, (a,), bw)


def log(a) -> Tensor:
    a = _lift(a)
    data = np.log(a.data)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g / a.data)

    return _make(data, (a,), bw)


def sin(a) -> Tensor:
    a = _lift(a)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), bw)


def cos(a) -> Tensor:
    a = _lift(a)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(-g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), bw)


def reduce_sum(a, axis=None) -> Tensor:
    a = _lift(a)
    data = a.data.sum(axis=axis)

    def bw(g):
        if _wants_grad(a):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _make(data, (a,), bw)


def reduce_mean(a, axis=None) -> Tensor:
    a = _lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def take_rows(a, indices) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate on backward."""
    a = _lift(a)
    idx = np.asarray(indices)

    def bw(g):
        if _wants_grad(a):
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _make(a.data[idx], (a,), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_lift(t) for t in tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            if _wants_grad(t):
                t._accumulate(piece)

    return _make(data, tensors, bw)


def where(condition, a, b) -> Tensor:
    """Elementwise select on a boolean array; gradient follows the branch taken."""
    cond = np.asarray(condition, dtype=bool)
    a, b = _lift(a), _lift(b)
    data = np.where(cond, a.data, b.data)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(_unbroadcast(np.where(cond, g, 0.0), a.data.shape))
        if _wants_grad(b):
            b._accumulate(_unbroadcast(np.where(cond, 0.0, g), b.data.shape))

    return _make(data, (a, b), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is passed only strictly inside the interval."""
    a = _lift(a)
    data = np.clip(a.data, lo, hi)

    def bw(g):
        if _wants_grad(a):
            a._accumulate(g * ((a.data > lo) & (a.data < hi)))

    return _make(data, (a,), bw)


def elman_chain(w_hidden, pre_activations) -> Tensor:
    """Unrolled recurrence h_t = tanh(W_h @ h_{t-1} + pre[t]) from h_0 = 0.

    Returns the stacked hidden states, shape (n, h). Fusing the chain into one
    node keeps the tape short for long windows; the backward rule is ordinary
    backpropagation through time.
    """
    w, pre = _lift(w_hidden), _lift(pre_activations)
    n, h = pre.data.shape
    states = np.empty((n, h), dtype=np.float64)
    prev = np.zeros(h, dtype=np.float64)
    w_data = w.data
    for t in range(n):
        prev = np.tanh(w_data @ prev + pre.data[t])
        states[t] = prev

    def bw(g):
        grad_w = np.zeros_like(w_data) if _wants_grad(w) else None
        grad_pre = np.zeros_like(pre.data) if _wants_grad(pre) else None
        carry = np.zeros(h, dtype=np.float64)
        w_t = w_data.T
        for t in range(n - 1, -1, -1):
            dz = (g[t] + carry) * (1.0 - states[t] * states[t])
            if grad_pre is not None:
                grad_pre[t] = dz
            if grad_w is not None:
                h_prev = states[t - 1] if t > 0 else np.zeros(h)
                grad_w += np.outer(dz, h_prev)
            carry = w_t @ dz
        if grad_w is not None:
            w._accumulate(grad_w)
        if grad_pre is not None:
            pre._accumulate(grad_pre)

    return _make(states, (w, pre), bw)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter moment accumulators for the Adam update rule."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update, applied in place to ``params``.

    Raises GradientError naming the offending block if any gradient is not
    finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in parameter block '{name}'")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradient blocks so their joint L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
