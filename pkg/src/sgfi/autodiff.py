"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tensor`` wraps an ndarray together with the closure that maps its
output gradient back onto its parents.  The graph is dynamic: every op
records itself as it executes, ``backward`` topologically sorts the
reachable subgraph (a ``Tape``) and walks it once in reverse.

Shape discipline is strict: binary ops require equal shapes, the only
broadcasting allowed is scalar-with-tensor.  Every op checks its output
for non-finite values and raises ``NonFiniteError`` immediately, so a
diverging computation fails at the op that produced it rather than at
the loss.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinity."""


_tid_counter = itertools.count()


class Tensor:
    """Node of the computation graph.

    Leaf tensors (``parents == ()``) optionally carry ``requires_grad``;
    interior nodes hold a ``grad_fn`` closure returning one gradient
    array per parent.  ``grad`` is populated on leaves by ``backward``
    and accumulates across calls until ``zero_grad``.
    """

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), grad_fn: Callable | None = None,
                 op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.grad: np.ndarray | None = None
        self.tid = next(_tid_counter)

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
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, leaves: Iterable["Tensor"] | None = None) -> dict:
        return backward(self, leaves)

    # arithmetic sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(op: str, out: np.ndarray, inputs: Sequence[Tensor],
          grad_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    if any(t.requires_grad for t in inputs):
        return Tensor(out, requires_grad=True, parents=tuple(inputs),
                      grad_fn=grad_fn, op=op)
    return Tensor(out, op=op)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ and "
                         "neither operand is scalar")


def _reduce_to(grad: np.ndarray, t: Tensor) -> np.ndarray:
    # collapse a full-shape gradient onto a scalar operand
    if t.shape != grad.shape:
        return np.sum(grad).reshape(t.shape)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def grad_fn(dout):
        return _reduce_to(dout, a), _reduce_to(dout, b)

    return _make("add", out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def grad_fn(dout):
        return _reduce_to(dout, a), _reduce_to(-dout, b)

    return _make("sub", out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def grad_fn(dout):
        return _reduce_to(dout * bd, a), _reduce_to(dout * ad, b)

    return _make("mul", out, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    with np.errstate(all="ignore"):
        out = a.data / b.data
    ad, bd = a.data, b.data

    def grad_fn(dout):
        return _reduce_to(dout / bd, a), _reduce_to(-dout * ad / (bd * bd), b)

    return _make("div", out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda dout: (-dout,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def grad_fn(dout):
        return dout @ bd.T, ad.T @ dout

    return _make("matmul", out, (a, b), grad_fn)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    return _make("relu", np.where(mask, a.data, 0.0), (a,),
                 lambda dout: (dout * mask,))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # numerically stable two-sided form
    out = np.where(a.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def grad_fn(dout):
        return (dout * out * (1.0 - out),)

    return _make("sigmoid", out, (a,), grad_fn)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda dout: (dout * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda dout: (dout * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _make("log", out, (a,), lambda dout: (dout / ad,))


def power(a: Tensor, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    with np.errstate(all="ignore"):
        out = np.power(a.data, p)
    ad = a.data

    def grad_fn(dout):
        return (dout * p * np.power(ad, p - 1.0),)

    return _make("power", out, (a,), grad_fn)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)

    def grad_fn(dout):
        return (dout * 0.5 / out,)

    return _make("sqrt", out, (a,), grad_fn)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis)
    shape = a.shape

    def grad_fn(dout):
        if axis is None:
            return (np.broadcast_to(dout, shape).copy(),)
        g = np.expand_dims(dout, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("reduce_sum", out, (a,), grad_fn)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(a, axis), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    old = a.shape
    return _make("reshape", out, (a,), lambda dout: (dout.reshape(old),))


def slice_(a: Tensor, idx) -> Tensor:
    """Basic (non-fancy) indexing; gradient scatters back into zeros."""
    a = _as_tensor(a)
    out = a.data[idx]
    shape = a.shape

    def grad_fn(dout):
        g = np.zeros(shape)
        g[idx] += dout
        return (g,)

    return _make("slice", np.array(out, copy=True), (a,), grad_fn)


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero-pad; ``pad_width`` is numpy-style ((before, after), ...) per axis."""
    a = _as_tensor(a)
    pw = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pw) != a.ndim:
        raise ShapeError(f"pad: {len(pw)} width pairs for {a.ndim}-d tensor")
    out = np.pad(a.data, pw)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, a.shape))
    return _make("pad", out, (a,), lambda dout: (dout[crop],))


# dispatch table; keys double as the op_kind vocabulary of forward_op
OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "power": power,
    "sqrt": sqrt,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "reshape": reshape,
    "slice": slice_,
    "pad": pad,
}


def forward_op(op_kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Run a registered op by name; records onto the graph as usual."""
    if op_kind not in OPS:
        raise ShapeError(f"unknown op kind {op_kind!r}")
    return OPS[op_kind](*inputs, **(attrs or {}))


class Tape:
    """Topologically ordered record of the ops reachable from a root.

    ``nodes`` lists every reachable tensor with each node strictly after
    all of its parents; ``run`` walks it once in reverse, accumulating
    into the leaf registry it returns.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def run(self, root_grad: np.ndarray) -> dict[int, np.ndarray]:
        with np.errstate(all="ignore"):
            return self._run(root_grad)

    def _run(self, root_grad: np.ndarray) -> dict[int, np.ndarray]:
        flows: dict[int, np.ndarray] = {self.nodes[-1].tid: root_grad}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = flows.pop(node.tid, None)
            if g is None:
                continue
            if node.grad_fn is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                    leaf_grads[node.tid] = node.grad
                continue
            parent_grads = node.grad_fn(g)
            if len(parent_grads) != len(node.parents):
                raise ShapeError(f"op {node.op!r}: grad_fn returned "
                                 f"{len(parent_grads)} gradients for "
                                 f"{len(node.parents)} parents")
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p.tid in flows:
                    flows[p.tid] = flows[p.tid] + pg
                else:
                    flows[p.tid] = pg
        return leaf_grads


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable requires-grad leaf.

    Returns a map from leaf tid to its (accumulated) gradient array.  When
    ``leaves`` is given, each listed tensor is guaranteed an entry, zeros
    if the loss does not depend on it.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = Tape.trace(loss).run(np.ones_like(loss.data))
    if leaves is not None:
        for t in leaves:
            if t.tid not in grads:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                grads[t.tid] = t.grad
    return grads


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


def finite_diff_check(f: Callable[[Tensor], Tensor], point: Tensor,
                      h: float = 1e-5) -> float:
    """Max relative error between analytic gradient and central differences.

    ``f`` must map a single tensor to a scalar tensor and be deterministic;
    it is evaluated twice at ``point`` and any bitwise discrepancy is an
    error.  Relative error per coordinate is |analytic - fd| / max(1, |fd|).
    """
    x0 = np.array(point.data, dtype=np.float64, copy=True)
    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ShapeError(f"finite_diff_check: f returned shape {out.shape}")
    repeat = f(Tensor(x0.copy(), requires_grad=True))
    if not np.array_equal(out.data, repeat.data):
        raise ValueError("finite_diff_check: f is not deterministic at point")
    backward(out, leaves=[probe])
    analytic = probe.grad.ravel()

    worst = 0.0
    flat = x0.ravel()
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] = flat[i] + h
        fp = f(Tensor(bump.reshape(x0.shape))).item()
        bump[i] = flat[i] - h
        fm = f(Tensor(bump.reshape(x0.shape))).item()
        fd = (fp - fm) / (2.0 * h)
        err = abs(analytic[i] - fd) / max(1.0, abs(fd))
        if err > worst:
            worst = err
    return worst
