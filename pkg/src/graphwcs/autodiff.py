"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Only the operations needed by the graph filters, the policy heads and the
training losses are provided. Arithmetic on plain arrays stays plain: a
value is only recorded when at least one operand is a :class:`Var` that
lives on a :class:`Tape`.

Example::

    tape = Tape()
    w = tape.leaf(np.ones((2, 1)), "w")
    loss = ad.sum(ad.relu(x @ w))
    tape.finalize(loss)
    grads = backward(tape)      # {"w": array of shape (2, 1)}
"""

from __future__ import annotations

import functools

import numpy as np

from . import reduce


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("value", "tape", "op", "parents", "vjp", "fn", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, tape, op, parents=(), vjp=None, fn=None, name=None):
        self.value = value
        self.tape = tape
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.fn = fn
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Records primitive operations in execution order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.output: Var | None = None

    def leaf(self, value, name):
        v = Var(np.asarray(value, dtype=float), self, "leaf", name=name)
        self.nodes.append(v)
        return v

    @property
    def leaves(self):
        return {n.name: n for n in self.nodes if n.op == "leaf"}

    def finalize(self, output):
        if not isinstance(output, Var) or output.tape is not self:
            raise TapeError("output was not recorded on this tape")
        if np.size(output.value) != 1:
            raise TapeError("tape output must be a scalar")
        self.output = output

    def replay(self, leaf_values=None):
        """Re-run the recorded forward pass; returns the output value.

        ``leaf_values`` may override leaf arrays by name. Node values are
        not modified.
        """
        if self.output is None:
            raise TapeError("tape not finalized")
        leaf_values = leaf_values or {}
        vals = {}
        for node in self.nodes:
            if node.op == "leaf":
                vals[id(node)] = np.asarray(leaf_values.get(node.name, node.value), dtype=float)
            else:
                args = [vals[id(p)] if isinstance(p, Var) else p for p in node.parents]
                vals[id(node)] = node.fn(*args)
        return vals[id(self.output)]


def backward(tape, seed=1.0):
    """Gradients of the finalized tape output with respect to every leaf."""
    if tape.output is None:
        raise TapeError("tape not finalized")
    grads = {id(tape.output): np.broadcast_to(np.asarray(seed, dtype=float), np.shape(tape.output.value)).copy()}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None) if node.op != "leaf" else grads.get(id(node))
        if g is None or node.op == "leaf":
            continue
        vals = [p.value if isinstance(p, Var) else p for p in node.parents]
        parts = node.vjp(g, node.value, *vals)
        for p, gp in zip(node.parents, parts):
            if not isinstance(p, Var) or gp is None:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    out = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=float)
    return out


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _apply(op, fn, vjp, *args):
    vals = [value(a) for a in args]
    out = fn(*vals)
    tape = _tape_of(args)
    if tape is None:
        return out
    node = Var(out, tape, op, args, vjp, fn)
    tape.nodes.append(node)
    return node


def _unbroadcast(g, shape):
    shape = tuple(shape)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


def add(a, b):
    return _apply("add", np.add, lambda g, o, x, y: (_unbroadcast(g, np.shape(x)), _unbroadcast(g, np.shape(y))), a, b)


def sub(a, b):
    return _apply("sub", np.subtract, lambda g, o, x, y: (_unbroadcast(g, np.shape(x)), _unbroadcast(-g, np.shape(y))), a, b)


def mul(a, b):
    return _apply(
        "mul", np.multiply,
        lambda g, o, x, y: (_unbroadcast(g * y, np.shape(x)), _unbroadcast(g * x, np.shape(y))),
        a, b,
    )


def div(a, b):
    return _apply(
        "div", np.divide,
        lambda g, o, x, y: (_unbroadcast(g / y, np.shape(x)), _unbroadcast(-g * o / y, np.shape(y))),
        a, b,
    )


def neg(a):
    return _apply("neg", np.negative, lambda g, o, x: (-g,), a)


def matmul(a, b):
    def vjp(g, o, x, y):
        return _unbroadcast(g @ _swap(y), np.shape(x)), _unbroadcast(_swap(x) @ g, np.shape(y))
    return _apply("matmul", np.matmul, vjp, a, b)


def shift(S, y):
    """Graph shift ``S @ y`` honouring the canonical-reduction mode."""
    fn = functools.partial(_shift_fixed, reduce.is_canonical())

    def vjp(g, o, s, x):
        return _unbroadcast(g @ _swap(x), np.shape(s)), _unbroadcast(_swap(s) @ g, np.shape(x))
    return _apply("shift", fn, vjp, S, y)


def _shift_fixed(canonical, S, y):
    with reduce.canonical_reductions(canonical):
        return reduce.shift(S, y)


def contract(y, W):
    """Feature map ``y @ W`` honouring the canonical-reduction mode."""
    fn = functools.partial(_rowmap_fixed, reduce.is_canonical())

    def vjp(g, o, x, w):
        return _unbroadcast(g @ _swap(w), np.shape(x)), _unbroadcast(_swap(x) @ g, np.shape(w))
    return _apply("contract", fn, vjp, y, W)


def _rowmap_fixed(canonical, y, W):
    with reduce.canonical_reductions(canonical):
        return reduce.rowmap(y, W)


def getitem(a, idx):
    def vjp(g, o, x):
        z = np.zeros_like(x)
        np.add.at(z, idx, g)
        return (z,)
    return _apply("getitem", lambda x: x[idx], vjp, a)


def relu(a):
    return _apply("relu", lambda x: np.maximum(x, 0.0), lambda g, o, x: (g * (x > 0),), a)


def identity(a):
    return a


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    return _apply("sigmoid", _sigmoid, lambda g, o, x: (g * o * (1.0 - o),), a)


def log_sigmoid(a):
    return _apply("log_sigmoid", lambda x: -np.logaddexp(0.0, -x), lambda g, o, x: (g * _sigmoid(-x),), a)


def softplus(a):
    return _apply("softplus", lambda x: np.logaddexp(0.0, x), lambda g, o, x: (g * _sigmoid(x),), a)


def exp(a):
    return _apply("exp", np.exp, lambda g, o, x: (g * o,), a)


def log(a):
    return _apply("log", np.log, lambda g, o, x: (g / x,), a)


def square(a):
    return _apply("square", np.square, lambda g, o, x: (2.0 * g * x,), a)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    fn = functools.partial(_sum_fixed, reduce.is_canonical(), axis, keepdims)

    def vjp(g, o, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, np.shape(x)).copy(),)
    return _apply("sum", fn, vjp, a)


def _sum_fixed(canonical, axis, keepdims, x):
    if not canonical:
        return np.sum(x, axis=axis, keepdims=keepdims)
    with reduce.canonical_reductions():
        if axis is None:
            out = reduce.node_sum(np.ravel(x), 0)
            return np.reshape(out, (1,) * np.ndim(x)) if keepdims else out
        out = reduce.node_sum(x, axis)
        return np.expand_dims(out, axis) if keepdims else out


def mean(a, axis=None):
    n = np.size(value(a)) if axis is None else np.shape(value(a))[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def maximum(a, b):
    def vjp(g, o, x, y):
        pick = x >= y
        return _unbroadcast(g * pick, np.shape(x)), _unbroadcast(g * ~pick, np.shape(y))
    return _apply("maximum", np.maximum, vjp, a, b)


def minimum(a, b):
    def vjp(g, o, x, y):
        pick = x <= y
        return _unbroadcast(g * pick, np.shape(x)), _unbroadcast(g * ~pick, np.shape(y))
    return _apply("minimum", np.minimum, vjp, a, b)


def clip(a, lo, hi):
    return _apply("clip", lambda x: np.clip(x, lo, hi), lambda g, o, x: (g * ((x > lo) & (x < hi)),), a)


def group_log_softmax(a, groups):
    """Log-softmax of the last axis computed separately inside each group.

    ``groups`` holds an integer label per entry of the last axis.
    """
    groups = np.asarray(groups)
    labels, inv = np.unique(groups, return_inverse=True)
    onehot = inv[None, :] == np.arange(len(labels))[:, None]  # (G, m)

    canonical = reduce.is_canonical()

    def fn(x):
        masked = np.where(onehot, x[..., None, :], -np.inf)
        mx = masked.max(axis=-1, keepdims=True)
        with reduce.canonical_reductions(canonical):
            total = reduce.node_sum(np.exp(masked - mx), axis=-1)
        lse = mx[..., 0] + np.log(total)
        return x - lse[..., inv]

    def vjp(g, o, x):
        p = np.exp(o)
        gsum = g @ onehot.T.astype(float)
        return (g - p * gsum[..., inv],)
    return _apply("group_log_softmax", fn, vjp, a)


NONLINEARITIES = {"relu": relu, "identity": identity, "sigmoid": sigmoid}
