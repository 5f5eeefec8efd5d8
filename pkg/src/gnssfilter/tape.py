"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every operation builds a ``Var`` node holding its value, its parents, and a
vector-Jacobian closure.  ``backward(loss)`` seeds a scalar loss with 1 and
accumulates gradients into every node reachable through parents that
require gradients; subgraphs with no gradient-requiring inputs collapse to
constants at construction time, so freezing the network outputs provably
zeroes all parameter gradients.

The graph is rebuilt for every forward pass (no caching); a forward pass
with plain constant inputs is just a slightly indirect numpy computation,
which keeps training and inference on a single code path.
"""

import numpy as np

from .errors import GraphCycle, NonScalarSeed, NotSPD


class Var:
    """One node: value, parents, and the vector-Jacobian product closure."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "grad")

    # keep numpy from consuming Var operands so reflected operators run
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def leaf(value) -> Var:
    """Trainable leaf: gradients accumulate here."""
    return Var(value, requires_grad=True)


def _node(value, parents, vjp) -> Var:
    # prune: a node none of whose parents needs gradients is a constant
    if not any(p.requires_grad for p in parents):
        return Var(value)
    return Var(value, parents=parents, vjp=vjp)


def backward(loss: Var):
    """Accumulate d(loss)/d(node) into .grad over the recorded graph."""
    if loss.value.size != 1:
        raise NonScalarSeed(f"loss has shape {loss.value.shape}")
    order = _topological(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def _topological(root: Var):
    """Iterative DFS; every reachable gradient node appears exactly once."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {}
    order = []
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        nid = id(node)
        if processed:
            color[nid] = BLACK
            order.append(node)
            continue
        state = color.get(nid, WHITE)
        if state == BLACK:
            continue
        if state == GREY:
            raise GraphCycle("cycle in recorded graph")
        color[nid] = GREY
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad:
                pstate = color.get(id(parent), WHITE)
                if pstate == GREY:
                    raise GraphCycle("cycle in recorded graph")
                if pstate == WHITE:
                    stack.append((parent, False))
    return order


def _unbroadcast(g, shape):
    """Reduce an upstream gradient to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape),
                            _unbroadcast(g, b.value.shape)))


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape),
                            _unbroadcast(-g, b.value.shape)))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.value.shape),
                            _unbroadcast(g * a.value, b.value.shape)))


def reciprocal(a):
    a = as_var(a)
    inv = 1.0 / a.value
    return _node(inv, (a,), lambda g: (-g * inv * inv,))


def div(a, b):
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.value.shape),
                            _unbroadcast(-g * out / b.value, b.value.shape)))


def sqrt(a):
    a = as_var(a)
    root = np.sqrt(a.value)
    return _node(root, (a,), lambda g: (g * 0.5 / root,))


def exp(a):
    a = as_var(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,))


def log(a):
    a = as_var(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def powv(a, b):
    """a ** b for a > 0, differentiable in both arguments."""
    a, b = as_var(a), as_var(b)
    out = a.value ** b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * b.value * a.value ** (b.value - 1.0),
                                         a.value.shape),
                            _unbroadcast(g * out * np.log(a.value),
                                         b.value.shape)))


def relu(a):
    a = as_var(a)
    out = np.maximum(a.value, 0.0)
    return _node(out, (a,), lambda g: (g * (a.value > 0.0),))


def softplus(a):
    """ln(1 + e^x) via the overflow-safe form max(x, 0) + ln(1 + e^-|x|)."""
    a = as_var(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = _sigmoid(x)
    return _node(out, (a,), lambda g: (g * sig,))


def _sigmoid(x):
    t = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


# --- shape manipulation ------------------------------------------------------

def reshape(a, shape):
    a = as_var(a)
    return _node(a.value.reshape(shape), (a,),
                 lambda g: (g.reshape(a.value.shape),))


def transpose(a, axes=None):
    a = as_var(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    inverse = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,),
                 lambda g: (np.transpose(g, inverse),))


def swapaxes(a, ax1, ax2):
    a = as_var(a)
    return _node(np.swapaxes(a.value, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),))


def take(a, idx):
    """Basic (slice/integer) indexing."""
    a = as_var(a)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        return (full,)

    return _node(a.value[idx], (a,), vjp)


def concat(parts, axis=0):
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _node(np.concatenate([p.value for p in parts], axis=axis),
                 tuple(parts), vjp)


def stack(parts, axis=0):
    parts = [as_var(p) for p in parts]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _node(np.stack([p.value for p in parts], axis=axis),
                 tuple(parts), vjp)


def diag_embed(v):
    """1-D vector -> diagonal matrix."""
    v = as_var(v)
    n = v.value.shape[0]
    out = np.zeros((n, n))
    np.fill_diagonal(out, v.value)
    return _node(out, (v,), lambda g: (np.diagonal(g).copy(),))


# --- reductions --------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    a = as_var(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_var(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_stopgrad(a, axis=None, keepdims=False) -> Var:
    """Maximum treated as a constant: no gradient flows through it."""
    a = as_var(a)
    return Var(a.value.max(axis=axis, keepdims=keepdims))


# --- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:          # dot product
            return (g * bv, g * av)
        if av.ndim == 1:                            # (n,) @ (..., n, m)
            ga = _unbroadcast((bv @ g[..., None])[..., 0], av.shape)
            gb = _unbroadcast(av[:, None] * g[..., None, :], bv.shape)
            return (ga, gb)
        if bv.ndim == 1:                            # (..., n, m) @ (m,)
            ga = _unbroadcast(g[..., :, None] * bv[None, :], av.shape)
            gb_full = (np.swapaxes(av, -1, -2) @ g[..., None])[..., 0]
            return (ga, _unbroadcast(gb_full, bv.shape))
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return (ga, gb)

    return _node(av @ bv, (a, b), vjp)


def softmax(a, axis=-1):
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _node(out, (a,), vjp)


def spd_solve(a, b):
    """Solve A x = b for symmetric positive-definite A via Cholesky.

    The adjoint reuses the factorization: db = A^-1 g, dA = -db x^T.
    Raises NotSPD when the factorization fails.
    """
    from scipy.linalg import cho_factor, cho_solve

    a, b = as_var(a), as_var(b)
    try:
        factor = cho_factor(a.value, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPD(str(exc)) from exc
    except ValueError as exc:
        raise NotSPD(str(exc)) from exc
    x = cho_solve(factor, b.value, check_finite=False)

    def vjp(g):
        gb = cho_solve(factor, g, check_finite=False)
        if x.ndim == 1:
            ga = -np.outer(gb, x)
        else:
            ga = -gb @ x.T
        return (ga, gb)

    return _node(x, (a, b), vjp)
