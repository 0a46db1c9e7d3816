"""Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records primitive operations eagerly: each call computes its
value immediately and appends a node. :meth:`Tape.gradients` then runs a single
reverse sweep from a scalar node and returns adjoints for every parameter leaf.

The primitive set is deliberately small (everything the encoder/decoder MLPs
and the importance-weighted bounds need). ``add`` and ``mul`` follow NumPy
broadcasting, so a row-vector bias is simply ``add(h, b)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Operand shapes are incompatible at a given tape node."""

    def __init__(self, node_index, op, message):
        super().__init__(f"node {node_index} ({op}): {message}")
        self.node_index = node_index
        self.op = op


class _Node:
    __slots__ = ("op", "inputs", "value", "ctx", "needs_grad", "name")

    def __init__(self, op, inputs, value, ctx, needs_grad, name=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.ctx = ctx
        self.needs_grad = needs_grad
        self.name = name


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def needs_grad(self) -> bool:
        return self.tape.nodes[self.index].needs_grad

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(self.tape, other)))

    def __rsub__(self, other):
        return add(_lift(self.tape, other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"Var(#{self.index} {node.op} shape={node.value.shape})"


class Tape:
    """Ordered record of primitive operations.

    Not thread-safe; use one tape per worker.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, value, ctx=None, name=None):
        needs = any(self.nodes[i].needs_grad for i in inputs)
        self.nodes.append(_Node(op, tuple(inputs), value, ctx, needs, name))
        return Var(self, len(self.nodes) - 1)

    def param(self, value, name: str) -> Var:
        """Register a differentiable leaf."""
        arr = _as_matrix(value)
        self.nodes.append(_Node("param", (), arr, None, True, name))
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        arr = _as_matrix(value)
        self.nodes.append(_Node("const", (), arr, None, False))
        return Var(self, len(self.nodes) - 1)

    def backward(self, seed: Var) -> list:
        """Reverse sweep; returns the adjoint list indexed by node."""
        if seed.tape is not self:
            raise ValueError("seed belongs to a different tape")
        root = self.nodes[seed.index]
        if root.value.size != 1:
            raise ShapeError(seed.index, root.op, f"seed must be scalar, got shape {root.value.shape}")
        adj = [None] * len(self.nodes)
        adj[seed.index] = np.ones_like(root.value)
        for i in range(seed.index, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or not node.needs_grad or not node.inputs:
                continue
            contribs = _BACKWARD[node.op](node, g, self.nodes)
            for j, c in zip(node.inputs, contribs):
                if c is None or not self.nodes[j].needs_grad:
                    continue
                if c.shape != self.nodes[j].value.shape:
                    raise ShapeError(i, node.op, f"adjoint shape {c.shape} != value shape {self.nodes[j].value.shape}")
                adj[j] = c if adj[j] is None else adj[j] + c
        return adj

    def gradients(self, seed: Var) -> dict[str, np.ndarray]:
        """Gradients of ``seed`` for every named parameter leaf (zeros if unused)."""
        adj = self.backward(seed)
        out = {}
        for i, node in enumerate(self.nodes):
            if node.op == "param":
                out[node.name] = adj[i] if adj[i] is not None else np.zeros_like(node.value)
        return out


def forward_backward(tape: Tape, seed: Var) -> dict[str, np.ndarray]:
    return tape.gradients(seed)


def _as_matrix(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise ValueError(f"only matrices are supported, got ndim={arr.ndim}")
    return arr


def _lift(tape, x):
    return x if isinstance(x, Var) else tape.const(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(tape, op, a, b):
    sa, sb = a.shape, b.shape
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(len(tape.nodes), op, f"cannot broadcast {sa} with {sb}")


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_broadcast(tape, "add", a, b)
    return tape._push("add", (a.index, b.index), a.value + b.value)


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_broadcast(tape, "mul", a, b)
    return tape._push("mul", (a.index, b.index), a.value * b.value)


def scale(a: Var, c: float) -> Var:
    return a.tape._push("scale", (a.index,), a.value * c, ctx=float(c))


def shift(a: Var, c: float) -> Var:
    return a.tape._push("shift", (a.index,), a.value + c, ctx=float(c))


def neg(a: Var) -> Var:
    return a.tape._push("neg", (a.index,), -a.value)


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(len(tape.nodes), "matmul", f"{a.shape} @ {b.shape}")
    return tape._push("matmul", (a.index, b.index), a.value @ b.value)


def tanh(a: Var) -> Var:
    return a.tape._push("tanh", (a.index,), np.tanh(a.value))


def relu(a: Var) -> Var:
    return a.tape._push("relu", (a.index,), np.maximum(a.value, 0.0))


def sigmoid(a: Var) -> Var:
    return a.tape._push("sigmoid", (a.index,), kernels.sigmoid(a.value))


def softplus(a: Var) -> Var:
    return a.tape._push("softplus", (a.index,), kernels.softplus(a.value))


def exp(a: Var) -> Var:
    return a.tape._push("exp", (a.index,), np.exp(a.value))


def log(a: Var) -> Var:
    return a.tape._push("log", (a.index,), np.log(a.value))


def square(a: Var) -> Var:
    return a.tape._push("square", (a.index,), a.value * a.value)


def sum_all(a: Var) -> Var:
    return a.tape._push("sum", (a.index,), np.array([[a.value.sum()]]))


def mean_all(a: Var) -> Var:
    return scale(sum_all(a), 1.0 / a.value.size)


def logsumexp_rows(a: Var) -> Var:
    """Row-wise log-sum-exp, n x c -> n x 1."""
    out = kernels.lse_rows_fwd(a.value)
    return a.tape._push("lse_rows", (a.index,), out[:, None])


def slice_cols(a: Var, start: int, stop: int) -> Var:
    if not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(len(a.tape.nodes), "slice_cols", f"[{start}:{stop}] out of range for {a.shape}")
    return a.tape._push("slice_cols", (a.index,), a.value[:, start:stop], ctx=(start, stop))


def take_cols(a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(len(a.tape.nodes), "take_cols", f"column index out of range for {a.shape}")
    return a.tape._push("take_cols", (a.index,), a.value[:, idx], ctx=idx)


def concat_cols(xs) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeError(len(tape.nodes), "concat_cols", f"row counts differ: {[x.shape for x in xs]}")
    widths = [x.shape[1] for x in xs]
    value = np.concatenate([x.value for x in xs], axis=1)
    return tape._push("concat_cols", tuple(x.index for x in xs), value, ctx=widths)


def tile_rows(a: Var, reps: int) -> Var:
    """Stack ``reps`` copies of ``a`` vertically."""
    if reps == 1:
        return a
    return a.tape._push("tile_rows", (a.index,), np.tile(a.value, (reps, 1)), ctx=reps)


def select_rows(a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    return a.tape._push("select_rows", (a.index,), a.value[idx], ctx=idx)


def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise ShapeError(len(a.tape.nodes), "reshape", f"cannot reshape {a.shape} to {shape}")
    return a.tape._push("reshape", (a.index,), a.value.reshape(shape))


def transpose(a: Var) -> Var:
    return a.tape._push("transpose", (a.index,), np.ascontiguousarray(a.value.T))


def gaussian_logpdf_rows(x, mu, sigma, weight=None) -> Var:
    """Sum over columns of diagonal-Gaussian log-densities, n x p -> n x 1.

    ``weight`` is an optional constant n x p array (typically a 0/1 mask)
    multiplying each coordinate's term.
    """
    tape = _tape_of(x, mu, sigma)
    x, mu, sigma = _lift(tape, x), _lift(tape, mu), _lift(tape, sigma)
    if not (x.shape == mu.shape == sigma.shape):
        raise ShapeError(len(tape.nodes), "gauss_rows", f"shapes {x.shape}, {mu.shape}, {sigma.shape}")
    if weight is not None:
        weight = np.ascontiguousarray(weight, dtype=np.float64)
        if weight.shape != x.shape:
            raise ShapeError(len(tape.nodes), "gauss_rows", f"weight shape {weight.shape} != {x.shape}")
    out = kernels.gauss_rows_fwd(x.value, mu.value, sigma.value, weight)
    return tape._push("gauss_rows", (x.index, mu.index, sigma.index), out[:, None], ctx=weight)


def bernoulli_logpmf_rows(logits: Var, r, weight=None) -> Var:
    """Sum over columns of clamped Bernoulli log-pmfs from logits, n x c -> n x 1."""
    tape = logits.tape
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != logits.shape:
        raise ShapeError(len(tape.nodes), "bern_rows", f"r shape {r.shape} != logits {logits.shape}")
    if weight is not None:
        weight = np.ascontiguousarray(weight, dtype=np.float64)
    out = kernels.bern_logits_rows_fwd(logits.value, r, weight)
    return tape._push("bern_rows", (logits.index,), out[:, None], ctx=(r, weight))


# ---------------------------------------------------------------------------
# backward rules: (node, upstream adjoint, all nodes) -> adjoint per input


def _b_add(node, g, nodes):
    a, b = (nodes[i].value for i in node.inputs)
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _b_mul(node, g, nodes):
    a, b = (nodes[i].value for i in node.inputs)
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _b_matmul(node, g, nodes):
    a, b = (nodes[i].value for i in node.inputs)
    ga = g @ b.T if nodes[node.inputs[0]].needs_grad else None
    gb = a.T @ g if nodes[node.inputs[1]].needs_grad else None
    return ga, gb


def _b_softplus(node, g, nodes):
    return (g * kernels.sigmoid(nodes[node.inputs[0]].value),)


def _b_concat(node, g, nodes):
    out, start = [], 0
    for w in node.ctx:
        out.append(g[:, start:start + w])
        start += w
    return out


def _b_slice(node, g, nodes):
    start, stop = node.ctx
    src = nodes[node.inputs[0]].value
    full = np.zeros_like(src)
    full[:, start:stop] = g
    return (full,)


def _b_take(node, g, nodes):
    src = nodes[node.inputs[0]].value
    full = np.zeros_like(src)
    np.add.at(full, (slice(None), node.ctx), g)
    return (full,)


def _b_tile(node, g, nodes):
    n = nodes[node.inputs[0]].value.shape[0]
    return (g.reshape(node.ctx, n, -1).sum(axis=0),)


def _b_select(node, g, nodes):
    src = nodes[node.inputs[0]].value
    full = np.zeros_like(src)
    np.add.at(full, node.ctx, g)
    return (full,)


def _b_gauss(node, g, nodes):
    x, mu, sigma = (nodes[i].value for i in node.inputs)
    return kernels.gauss_rows_bwd(x, mu, sigma, node.ctx, np.ascontiguousarray(g[:, 0]))


def _b_bern(node, g, nodes):
    r, weight = node.ctx
    logits = nodes[node.inputs[0]].value
    return (kernels.bern_logits_rows_bwd(logits, r, weight, np.ascontiguousarray(g[:, 0])),)


def _b_lse(node, g, nodes):
    a = nodes[node.inputs[0]].value
    return (kernels.lse_rows_bwd(a, node.value[:, 0], np.ascontiguousarray(g[:, 0])),)


_BACKWARD = {
    "add": _b_add,
    "mul": _b_mul,
    "scale": lambda node, g, nodes: (g * node.ctx,),
    "shift": lambda node, g, nodes: (g,),
    "neg": lambda node, g, nodes: (-g,),
    "matmul": _b_matmul,
    "tanh": lambda node, g, nodes: (g * (1.0 - node.value * node.value),),
    "relu": lambda node, g, nodes: (g * (node.value > 0),),
    "sigmoid": lambda node, g, nodes: (g * node.value * (1.0 - node.value),),
    "softplus": _b_softplus,
    "exp": lambda node, g, nodes: (g * node.value,),
    "log": lambda node, g, nodes: (g / nodes[node.inputs[0]].value,),
    "square": lambda node, g, nodes: (2.0 * g * nodes[node.inputs[0]].value,),
    "sum": lambda node, g, nodes: (np.full_like(nodes[node.inputs[0]].value, g.item()),),
    "lse_rows": _b_lse,
    "slice_cols": _b_slice,
    "take_cols": _b_take,
    "concat_cols": _b_concat,
    "tile_rows": _b_tile,
    "select_rows": _b_select,
    "reshape": lambda node, g, nodes: (g.reshape(nodes[node.inputs[0]].value.shape),),
    "transpose": lambda node, g, nodes: (np.ascontiguousarray(g.T),),
    "gauss_rows": _b_gauss,
    "bern_rows": _b_bern,
}


# ---------------------------------------------------------------------------
# scalar helpers and the optimizer


def logsumexp_row(v) -> float:
    """Stable log(sum(exp(v))) of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = v.max()
    if m == -np.inf:
        raise ValueError("logsumexp of an all -inf vector")
    return float(m + math.log(np.exp(v - m).sum()))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, maximize: bool = False):
    """One bias-corrected Adam update.

    With ``maximize=True`` the step ascends the objective whose gradient is
    ``grads``. Returns ``(new_params, state)``; if any gradient entry is
    non-finite the step is skipped (``state.skipped`` counts these).
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise KeyError(f"missing gradient for {name!r}")
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {name!r}")
    if not all(np.all(np.isfinite(grads[name])) for name in params):
        bad = [name for name in params if not np.all(np.isfinite(grads[name]))]
        logger.warning("non-finite gradient in %s; Adam step skipped", bad)
        state.skipped += 1
        return params, state

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    sign = 1.0 if maximize else -1.0
    new = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        new[name] = p + sign * state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new, state
