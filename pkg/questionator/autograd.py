"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the tape that is active in the calling thread
(see `Tape`). Outside of a tape the same functions evaluate eagerly without
recording anything, which is how decoding and evaluation run.
"""

import threading

import numpy as np

from . import root_logger
from .errors import ContractError, NumericDomainError

PROB_CLAMP = 1e-12

_local = threading.local()


def active_tape():
    return getattr(_local, "tape", None)


class Node:
    __slots__ = ("op", "parents", "backward", "index", "tape")

    def __init__(self, op, parents, backward, index, tape):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.index = index
        self.tape = tape


class Tape:
    """Ordered record of the operations of one forward pass.

    Nodes are appended as operations execute, so every parent precedes its
    children. A tape belongs to the thread that entered it."""

    def __init__(self):
        self.nodes = []
        self.diagnostics = {"clamped": 0}
        self._previous = None

    def __enter__(self):
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._previous
        self._previous = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, parents, output, backward):
        node = Node(op, parents, backward, len(self.nodes), self)
        self.nodes.append(node)
        output.node = node
        return output


class Tensor:
    __slots__ = ("values", "grad", "node", "requires_grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.node = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ContractError(f"item() of a tensor with shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape}>"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t):
    return t.requires_grad or t.node is not None


def _emit(op, parents, out_values, backward):
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.node = None
    out.requires_grad = False
    out.name = None
    tape = active_tape()
    if tape is not None and any(_tracked(p) for p in parents):
        tape.record(op, parents, out, backward)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape, seed, params=None):
    """Propagate d(seed) into the `grad` of every leaf tensor reachable on `tape`.

    Leaves on the tape and any extra tensors in `params` start from a zero
    gradient, so unreachable parameters end with zero grad. Uses of a tensor at
    several places in the graph accumulate."""
    if seed.size != 1:
        raise ContractError(f"backward seed must be a scalar, got shape {seed.shape}")
    if seed.node is None or seed.node.tape is not tape:
        raise ContractError("backward seed was not recorded on the given tape")

    for p in params or ():
        p.zero_grad()
    for node in tape.nodes:
        for parent in node.parents:
            if parent.node is None and parent.requires_grad:
                parent.zero_grad()

    pending = {seed.node.index: np.ones_like(seed.values)}
    for index in range(seed.node.index, -1, -1):
        g = pending.pop(index, None)
        if g is None:
            continue
        node = tape.nodes[index]
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            if parent.node is not None and parent.node.tape is tape:
                slot = parent.node.index
                if slot in pending:
                    pending[slot] = pending[slot] + pg
                else:
                    pending[slot] = pg
            elif parent.requires_grad:
                parent.grad += pg


# elementwise


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.values + b.values, backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _emit("sub", (a, b), a.values - b.values, backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.values, b.values

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _emit("mul", (a, b), av * bv, backward)


def scale(a, factor):
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _emit("scale", (a,), a.values * factor, backward)


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.values))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _emit("sigmoid", (a,), y, backward)


def tanh(a):
    y = np.tanh(a.values)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _emit("tanh", (a,), y, backward)


# linear algebra and shape


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ContractError(f"matmul expects rank 1 or 2 operands, got {av.shape} and {bv.shape}")

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _emit("matmul", (a, b), np.asarray(av @ bv, dtype=np.float64), backward)


def concat(tensors):
    """Concatenate along the last axis."""
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _emit("concat", tuple(tensors), np.concatenate([t.values for t in tensors], axis=-1), backward)


def stack(tensors):
    """Stack equally shaped tensors along a new leading axis."""
    tensors = [_wrap(t) for t in tensors]

    def backward(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _emit("stack", tuple(tensors), np.stack([t.values for t in tensors]), backward)


def narrow(a, start, stop):
    """Slice [start, stop) of the last axis."""

    def backward(g):
        full = np.zeros_like(a.values)
        full[..., start:stop] = g
        return (full,)

    return _emit("narrow", (a,), a.values[..., start:stop].copy(), backward)


def gather(table, ids):
    """Rows of `table`; an int gives one row, a sequence gives a matrix."""
    index = ids if isinstance(ids, (int, np.integer)) else np.asarray(ids, dtype=np.int64)
    rows = table.values[index].copy()

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, index, g)
        return (full,)

    return _emit("gather", (table,), rows, backward)


def scatter_add(values, ids, width):
    """Sum `values[k]` into slot `ids[k]` of a zero vector of length `width`."""
    index = np.asarray(ids, dtype=np.int64)
    if values.shape != index.shape:
        raise ContractError(f"scatter_add of {values.shape} values with {index.shape} ids")
    if index.size and (index.min() < 0 or index.max() >= width):
        raise ContractError(f"scatter_add id out of range for width {width}")
    out = np.zeros(width)
    np.add.at(out, index, values.values)

    def backward(g):
        return (g[index],)

    return _emit("scatter_add", (values,), out, backward)


# reductions and losses


def softmax(logits):
    """Softmax over the last axis with max subtraction."""
    v = logits.values
    if v.shape[-1] < 1:
        raise ContractError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("softmax input contains non-finite values")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (logits,), y, backward)


def nll(probs, index, clamp=PROB_CLAMP):
    """-log probs[index], with the probability clamped from below."""
    p = probs.values[index]
    clamped = p < clamp
    if clamped:
        root_logger.debug(f"probability {p!r} at id {index} clamped to {clamp}")
        tape = active_tape()
        if tape is not None:
            tape.diagnostics["clamped"] += 1

    def backward(g):
        full = np.zeros_like(probs.values)
        if not clamped:
            full[index] = -g / p
        return (full,)

    return _emit("nll", (probs,), np.asarray(-np.log(max(p, clamp))), backward)


def sum_(a):
    def backward(g):
        return (np.full_like(a.values, g),)

    return _emit("sum", (a,), np.asarray(a.values.sum()), backward)


def mean(a, axis=None):
    if axis is None:
        n = a.values.size

        def backward(g):
            return (np.full_like(a.values, g / n),)

        return _emit("mean", (a,), np.asarray(a.values.sum() / n), backward)

    n = a.values.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.values.shape).copy(),)

    return _emit("mean", (a,), a.values.sum(axis=axis) / n, backward)


# verification


def _evaluate(f, tensors):
    value = f(*tensors)
    value = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise NumericDomainError("function is not finite at a perturbed point")
    return value


def grad_check(f, inputs, eps=1e-5):
    """Largest relative error between analytic and central-difference gradients.

    `f` receives the tensors of `inputs` (one tensor or a sequence) and returns
    a scalar tensor. The relative error of a coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)."""
    if eps <= 0:
        raise ContractError(f"grad_check step must be positive, got {eps}")
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in tensors:
        t.requires_grad = True

    with Tape() as tape:
        out = f(*tensors)
    if not np.isfinite(out.values).all():
        raise NumericDomainError("function is not finite at the checked point")
    if out.node is None:
        analytic = [np.zeros_like(t.values) for t in tensors]
    else:
        backward(tape, out, params=tensors)
        analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _evaluate(f, tensors)
            flat[i] = original - eps
            minus = _evaluate(f, tensors)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = grad.reshape(-1)[i]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, error)
    return worst
