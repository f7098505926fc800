"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Every primitive records a node on a :class:`Tape`; :meth:`Tape.backward`
walks the recorded nodes in exact reverse order and accumulates vector-Jacobian
products into each input. Only what the models and balance losses need is here.

Example:
    >>> tape = Tape()
    >>> w = tape.param(np.ones((2, 1)), "w")
    >>> x = tape.constant(np.array([[1.0, 2.0]]))
    >>> loss = sum_all(x @ w)
    >>> tape.backward(loss)["w"].ravel().tolist()
    [1.0, 2.0]
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class GradientError(RuntimeError):
    """Raised when backward cannot produce finite gradients."""


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "grad", "name", "_parents")
    __array_priority__ = 100.0

    def __init__(self, value, tape, parents=(), name=None):
        self.value = value
        self.tape = tape
        self.grad = None
        self.name = name
        # sequence of (parent Var, vjp callable)
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of primitive applications.

    Parameters are registered with :meth:`param`; their gradients are
    returned by :meth:`backward` keyed by name.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, value, name):
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        v = Var(np.array(value, dtype=np.float64), self, name=name)
        self.params[name] = v
        self.nodes.append(v)
        return v

    def constant(self, value):
        return Var(np.asarray(value, dtype=np.float64), self)

    def _record(self, value, parents):
        v = Var(value, self, tuple(parents))
        self.nodes.append(v)
        return v

    def backward(self, output):
        """Gradients of a recorded scalar ``output`` for every parameter.

        Returns a dict name -> ndarray shaped like the parameter.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise GradientError("output was not recorded on this tape")
        if output.value.size != 1:
            raise GradientError(f"output must be scalar, got shape {output.value.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or not node._parents:
                continue
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(node.value))):
                raise GradientError(f"NaN or infinity encountered at {node!r} during backward")
            for parent, vjp in node._parents:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=np.float64)
                else:
                    parent.grad = parent.grad + contrib
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        return grads


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _lift(x, tape):
    if isinstance(x, Var):
        return x
    return tape.constant(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_bcast(a, b):
    # scalars, row vectors and column vectors against a matrix only
    for s in (a.shape, b.shape):
        if len(s) > 2:
            raise ValueError(f"only 0-2 dimensional operands supported, got {s}")
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}") from exc


# -- elementwise -----------------------------------------------------------

def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_bcast(a.value, b.value)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    ])


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_bcast(a.value, b.value)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: -_unbroadcast(g, sb)),
    ])


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_bcast(a.value, b.value)
    av, bv = a.value, b.value
    return tape._record(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def div(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_bcast(a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv
    return tape._record(out, [
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    ])


def exp(x):
    out = np.exp(x.value)
    return x.tape._record(out, [(x, lambda g: g * out)])


def log(x):
    xv = x.value
    return x.tape._record(np.log(xv), [(x, lambda g: g / xv)])


def square(x):
    xv = x.value
    return x.tape._record(xv * xv, [(x, lambda g: 2.0 * g * xv)])


def elu(x):
    """x if x > 0 else exp(x) - 1, derivative 1 or exp(x)."""
    xv = x.value
    pos = xv > 0
    ex = np.exp(np.minimum(xv, 0.0))
    out = np.where(pos, xv, ex - 1.0)
    return x.tape._record(out, [(x, lambda g: g * np.where(pos, 1.0, ex))])


# -- reductions ------------------------------------------------------------

def sum_all(x):
    shape = x.value.shape
    return x.tape._record(np.sum(x.value), [(x, lambda g: np.broadcast_to(g, shape).copy())])


def mean_all(x):
    n = x.value.size
    if n == 0:
        raise ValueError("mean of empty array")
    return mul(sum_all(x), 1.0 / n)


def logsumexp(x, axis):
    """Stable log-sum-exp along ``axis`` (0 or 1) of a matrix, keepdims."""
    xv = x.value
    m = np.max(xv, axis=axis, keepdims=True)
    e = np.exp(xv - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return x.tape._record(out, [(x, lambda g: g * soft)])


def median(x):
    """Median of all entries; gradient flows to the one or two order statistics used."""
    flat = x.value.ravel()
    n = flat.size
    if n == 0:
        raise ValueError("median of empty array")
    order = np.argsort(flat, kind="stable")
    if n % 2:
        idx = (order[n // 2],)
        val = flat[idx[0]]
    else:
        idx = (order[n // 2 - 1], order[n // 2])
        val = 0.5 * (flat[idx[0]] + flat[idx[1]])
    shape = x.value.shape
    w = 1.0 / len(idx)

    def vjp(g):
        out = np.zeros(n)
        for i in idx:
            out[i] += w * float(g)
        return out.reshape(shape)

    return x.tape._record(np.asarray(val, dtype=np.float64), [(x, vjp)])


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return tape._record(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def spmm(a, b):
    """Sparse constant ``a`` times dense ``b``; differentiable in ``b`` only."""
    if not sp.issparse(a):
        a = sp.csr_matrix(np.asarray(a, dtype=np.float64))
    bv = b.value
    if bv.ndim != 2 or a.shape[1] != bv.shape[0]:
        raise ValueError(f"spmm shape mismatch {a.shape} @ {bv.shape}")
    at = a.T.tocsr()
    out = np.asarray(a @ bv, dtype=np.float64)
    return b.tape._record(out, [(b, lambda g: np.asarray(at @ g))])


def affine(x, w, b):
    """x @ w + b with ``b`` a (1, cols) row vector."""
    bv = b.value if isinstance(b, Var) else np.asarray(b)
    wv = w.value if isinstance(w, Var) else np.asarray(w)
    if bv.shape != (1, wv.shape[1]):
        raise ValueError(f"bias shape {bv.shape} does not match weight {wv.shape}")
    return add(matmul(x, w), b)


def transpose(x):
    return x.tape._record(x.value.T.copy(), [(x, lambda g: g.T)])


def take_rows(x, idx):
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return x.tape._record(x.value[idx], [(x, vjp)])


def pick(x, cols):
    """Column ``cols[i]`` of row ``i``, returned as an (n, 1) column."""
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(x.value.shape[0])
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, cols] = g[:, 0]
        return out

    return x.tape._record(x.value[rows, cols][:, None], [(x, vjp)])


def gather(x, rows, cols):
    """Entries ``x[rows[k], cols[k]]`` as a (k, 1) column."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g[:, 0])
        return out

    return x.tape._record(x.value[rows, cols][:, None], [(x, vjp)])


def vstack(xs):
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    bounds = np.cumsum([0] + [x.value.shape[0] for x in xs])
    parents = []
    for k, x in enumerate(xs):
        lo, hi = bounds[k], bounds[k + 1]
        parents.append((x, lambda g, lo=lo, hi=hi: g[lo:hi]))
    return tape._record(np.vstack([x.value for x in xs]), parents)


def hstack(xs):
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    widths = np.cumsum([0] + [x.value.shape[1] for x in xs])
    parents = []
    for k, x in enumerate(xs):
        lo, hi = widths[k], widths[k + 1]
        parents.append((x, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return tape._record(np.hstack([x.value for x in xs]), parents)


def pairwise_sqdist(a, b):
    """Matrix of squared Euclidean distances between rows of ``a`` and ``b``."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    diff = av[:, None, :] - bv[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)
    return tape._record(out, [
        (a, lambda g: 2.0 * np.einsum("ij,ijk->ik", g, diff)),
        (b, lambda g: -2.0 * np.einsum("ij,ijk->jk", g, diff)),
    ])


def pairwise_dist(a, b):
    """Euclidean distance matrix; zero distances get a zero (sub)gradient."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    diff = av[:, None, :] - bv[None, :, :]
    out = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    safe = np.where(out > 0, out, 1.0)
    unit = np.where((out > 0)[:, :, None], diff / safe[:, :, None], 0.0)
    return tape._record(out, [
        (a, lambda g: np.einsum("ij,ijk->ik", g, unit)),
        (b, lambda g: -np.einsum("ij,ijk->jk", g, unit)),
    ])


def value(x):
    """Plain ndarray for a Var or array-like."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
