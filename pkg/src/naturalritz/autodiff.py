"""Tape-based automatic differentiation for scalar objectives of small networks.

Spatial derivatives of a function of (x1, x2) are carried forward by dual
numbers whose components are themselves recorded on the tape, so one reverse
sweep over the tape yields exact parameter gradients of any scalar built from
values, gradients, or (pure) second derivatives.  Node values are float64
scalars or numpy arrays; the same code path evaluates single points and whole
quadrature batches.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Num",
    "Dual1",
    "Dual2",
    "UnsupportedActivationError",
    "backprop",
    "grad_check",
    "eval_dual1",
    "eval_dual2",
    "seed_duals",
]


class UnsupportedActivationError(ValueError):
    """Second derivatives requested for an activation whose second derivative
    is discontinuous."""


class Tape:
    """Append-only operation record for one reverse sweep.

    Every node stores its parent indices and one vector-Jacobian callable per
    parent.  Parameters are registered with :meth:`watch`; `backprop` returns
    the gradient with respect to all watched leaves, flattened in
    registration order.  Tapes are single-writer and must not be shared
    across threads.
    """

    __slots__ = ("parents", "vjps", "param_ids", "param_shapes")

    def __init__(self):
        self.parents = []
        self.vjps = []
        self.param_ids = []
        self.param_shapes = []

    def __len__(self):
        return len(self.parents)

    def watch(self, value):
        """Register a parameter leaf and return its tape node."""
        value = np.asarray(value, dtype=float)
        node = self._record(value, (), ())
        self.param_ids.append(node.idx)
        self.param_shapes.append(value.shape)
        return node

    def _record(self, value, parents, vjps):
        idx = len(self.parents)
        self.parents.append(parents)
        self.vjps.append(vjps)
        return Num(self, idx, value)


class Num:
    """A tape-recorded value (float64 scalar or ndarray)."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # keep numpy from absorbing us in mixed expressions

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    def __repr__(self):
        return f"Num(idx={self.idx}, value={self.value!r})"

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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return powc(self, p)


def _val(x):
    return x.value if isinstance(x, Num) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Num):
            return x.tape
    return None


def _shape(x):
    return np.shape(_val(x))


def _unbroadcast(g, shape):
    """Reduce an adjoint `g` back to `shape` after numpy broadcasting."""
    if shape == ():
        return np.sum(g)
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _is_zero(x):
    return not isinstance(x, Num) and np.isscalar(x) and x == 0


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    tape = _tape_of(a, b)
    value = _val(a) + _val(b)
    if tape is None:
        return value
    parents, vjps = [], []
    if isinstance(a, Num):
        sa = _shape(a)
        parents.append(a.idx)
        vjps.append(lambda g, sa=sa: _unbroadcast(g, sa))
    if isinstance(b, Num):
        sb = _shape(b)
        parents.append(b.idx)
        vjps.append(lambda g, sb=sb: _unbroadcast(g, sb))
    return tape._record(value, tuple(parents), tuple(vjps))


def sub(a, b):
    return add(a, neg(b))


def neg(a):
    if not isinstance(a, Num):
        return -a
    return a.tape._record(-a.value, (a.idx,), (lambda g: -g,))


def mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    value = av * bv
    if tape is None:
        return value
    parents, vjps = [], []
    if isinstance(a, Num):
        sa = _shape(a)
        parents.append(a.idx)
        vjps.append(lambda g, bv=bv, sa=sa: _unbroadcast(g * bv, sa))
    if isinstance(b, Num):
        sb = _shape(b)
        parents.append(b.idx)
        vjps.append(lambda g, av=av, sb=sb: _unbroadcast(g * av, sb))
    return tape._record(value, tuple(parents), tuple(vjps))


def square(a):
    return mul(a, a)


def powc(a, p):
    """a ** p for a constant real exponent p."""
    if not isinstance(a, Num):
        return _val(a) ** p
    av = a.value
    value = av**p
    d = p * av ** (p - 1)
    return a.tape._record(value, (a.idx,), (lambda g: _unbroadcast(g * d, np.shape(av)),))


def _unary(a, value, deriv):
    if not isinstance(a, Num):
        return value
    return a.tape._record(value, (a.idx,), (lambda g: g * deriv,))


def exp(a):
    v = np.exp(_val(a))
    return _unary(a, v, v)


def sin(a):
    av = _val(a)
    return _unary(a, np.sin(av), np.cos(av))


def cos(a):
    av = _val(a)
    return _unary(a, np.cos(av), -np.sin(av))


def tanh(a):
    t = np.tanh(_val(a))
    return _unary(a, t, 1.0 - t * t)


def relu_pow(a, p):
    """max(a, 0) ** p.  At the kink the right-sided derivative (0 for p >= 2)
    is returned, matching the subgradient convention."""
    av = _val(a)
    m = np.maximum(av, 0.0)
    value = m**p
    if not isinstance(a, Num):
        return value
    d = np.where(av > 0.0, p * m ** (p - 1), 0.0)
    return a.tape._record(value, (a.idx,), (lambda g: g * d,))


def matmul(a, b):
    """Matrix product of a 2-D or channel-stacked 3-D left factor with a 2-D
    right factor."""
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    value = av @ bv
    if tape is None:
        return value
    parents, vjps = [], []
    if isinstance(a, Num):
        parents.append(a.idx)
        vjps.append(lambda g, bv=bv: g @ bv.T)
    if isinstance(b, Num):
        parents.append(b.idx)
        if av.ndim == 3:
            k = av.shape[-1]
            vjps.append(lambda g, av=av, k=k: av.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
        else:
            vjps.append(lambda g, av=av: av.T @ g)
    return tape._record(value, tuple(parents), tuple(vjps))


def asum(a):
    """Sum of all entries, as a scalar node."""
    if not isinstance(a, Num):
        return float(np.sum(a))
    shape = np.shape(a.value)
    value = float(np.sum(a.value))
    return a.tape._record(value, (a.idx,), (lambda g: np.full(shape, g),))


def col(a, j):
    """Column j of a 2-D value, as a 1-D value."""
    if not isinstance(a, Num):
        return np.asarray(a)[:, j]
    shape = np.shape(a.value)

    def vjp(g, shape=shape, j=j):
        z = np.zeros(shape)
        z[:, j] = g
        return z

    return a.tape._record(a.value[:, j], (a.idx,), (vjp,))


def wsum(a, w):
    """Weighted sum  sum_i a_i w_i  with constant weights."""
    return asum(mul(a, w))


# ---------------------------------------------------------------------------
# reverse sweep


def backprop(tape, root):
    """Gradient of a scalar root node w.r.t. every watched parameter.

    Returns a flat float64 vector aligned with the watch order; parameters
    with no path to the root contribute zeros.  Deterministic for identical
    tapes: adjoints accumulate in fixed reverse-index order.
    """
    n_params = sum(int(np.prod(s)) if s else 1 for s in tape.param_shapes)
    if not isinstance(root, Num):
        return np.zeros(n_params)
    if np.ndim(root.value) != 0:
        raise ValueError("backprop root must be scalar")
    adjoint = [None] * (root.idx + 1)
    adjoint[root.idx] = 1.0
    param_set = set(tape.param_ids)
    for i in range(root.idx, -1, -1):
        g = adjoint[i]
        if g is None:
            continue
        for pidx, vjp in zip(tape.parents[i], tape.vjps[i]):
            contrib = vjp(g)
            if adjoint[pidx] is None:
                adjoint[pidx] = contrib
            else:
                adjoint[pidx] = adjoint[pidx] + contrib
        if i not in param_set:
            adjoint[i] = None
    pieces = []
    for pidx, shape in zip(tape.param_ids, tape.param_shapes):
        g = adjoint[pidx] if pidx <= root.idx else None
        if g is None:
            pieces.append(np.zeros(int(np.prod(shape)) if shape else 1))
        else:
            pieces.append(np.ravel(np.broadcast_to(g, shape)) if shape else np.atleast_1d(g))
    if not pieces:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, dtype=float) for p in pieces])


def grad_check(f, params, seed=0, step=1e-5, max_components=None):
    """Worst-component mismatch between reverse-mode and central differences.

    `f` maps a flat parameter vector to ``(value, gradient)``.  Components are
    compared as |ad - fd| / max(||ad||_inf, ||fd||_inf, 1e-12); a shuffled
    subset of size `max_components` is checked when given.
    """
    params = np.asarray(params, dtype=float)
    _, g_ad = f(params)
    g_ad = np.asarray(g_ad, dtype=float)
    idx = np.arange(params.size)
    if max_components is not None and max_components < params.size:
        rng = np.random.default_rng(seed)
        idx = rng.permutation(idx)[:max_components]
    g_fd = np.zeros(idx.size)
    for k, j in enumerate(idx):
        th = params.copy()
        th[j] += step
        fp = f(th)[0]
        th[j] -= 2 * step
        fm = f(th)[0]
        g_fd[k] = (fp - fm) / (2 * step)
    scale = max(np.max(np.abs(g_ad), initial=0.0), np.max(np.abs(g_fd), initial=0.0), 1e-12)
    return float(np.max(np.abs(g_ad[idx] - g_fd) / scale, initial=0.0))


# ---------------------------------------------------------------------------
# forward-mode duals (components may be tape nodes or plain arrays)


class Dual1:
    """Value and first partials w.r.t. the two spatial inputs."""

    __slots__ = ("val", "dx1", "dx2")
    __array_ufunc__ = None

    def __init__(self, val, dx1=0.0, dx2=0.0):
        self.val = val
        self.dx1 = dx1
        self.dx2 = dx2

    def __add__(self, other):
        if isinstance(other, Dual1):
            return type(self)(add(self.val, other.val), add(self.dx1, other.dx1), add(self.dx2, other.dx2))
        return type(self)(add(self.val, other), self.dx1, self.dx2)

    __radd__ = __add__

    def __neg__(self):
        return type(self)(neg(self.val), neg(self.dx1), neg(self.dx2))

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual1) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual1):
            return d_mul(self, other)
        return type(self)(mul(self.val, other), mul(self.dx1, other), mul(self.dx2, other))

    __rmul__ = __mul__

    def __pow__(self, p):
        d2 = mul(p * (p - 1), powc(self.val, p - 2)) if isinstance(self, Dual2) else None
        return d_chain(self, powc(self.val, p), mul(p, powc(self.val, p - 1)), d2)


class Dual2(Dual1):
    """Value, first partials, and pure second partials (no mixed term)."""

    __slots__ = ("dxx1", "dxx2")

    def __init__(self, val, dx1=0.0, dx2=0.0, dxx1=0.0, dxx2=0.0):
        super().__init__(val, dx1, dx2)
        self.dxx1 = dxx1
        self.dxx2 = dxx2

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(
                add(self.val, other.val),
                add(self.dx1, other.dx1),
                add(self.dx2, other.dx2),
                add(self.dxx1, other.dxx1),
                add(self.dxx2, other.dxx2),
            )
        if isinstance(other, Dual1):
            raise TypeError("cannot mix Dual1 into Dual2 arithmetic")
        return Dual2(add(self.val, other), self.dx1, self.dx2, self.dxx1, self.dxx2)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(neg(self.val), neg(self.dx1), neg(self.dx2), neg(self.dxx1), neg(self.dxx2))

    def __mul__(self, other):
        if isinstance(other, Dual1):
            return d_mul(self, other)
        return Dual2(
            mul(self.val, other),
            mul(self.dx1, other),
            mul(self.dx2, other),
            mul(self.dxx1, other),
            mul(self.dxx2, other),
        )

    __rmul__ = __mul__


def d_mul(a, b):
    """Product rule; second order uses (uv)'' = u''v + 2u'v' + uv''."""
    val = mul(a.val, b.val)
    dx1 = add(mul(a.dx1, b.val), mul(a.val, b.dx1))
    dx2 = add(mul(a.dx2, b.val), mul(a.val, b.dx2))
    if isinstance(a, Dual2) or isinstance(b, Dual2):
        dxx1 = add(
            add(mul(a.dxx1, b.val), mul(a.val, b.dxx1)),
            mul(2.0, mul(a.dx1, b.dx1)),
        )
        dxx2 = add(
            add(mul(a.dxx2, b.val), mul(a.val, b.dxx2)),
            mul(2.0, mul(a.dx2, b.dx2)),
        )
        return Dual2(val, dx1, dx2, dxx1, dxx2)
    return Dual1(val, dx1, dx2)


def d_chain(d, fv, df, d2f):
    """Apply a scalar primitive with value fv = f(d.val), derivative df and
    (for second-order duals) second derivative d2f."""
    dx1 = mul(df, d.dx1)
    dx2 = mul(df, d.dx2)
    if isinstance(d, Dual2):
        if d2f is None:
            raise UnsupportedActivationError("primitive lacks a continuous second derivative")
        dxx1 = add(mul(d2f, square(d.dx1)), mul(df, d.dxx1))
        dxx2 = add(mul(d2f, square(d.dx2)), mul(df, d.dxx2))
        return Dual2(fv, dx1, dx2, dxx1, dxx2)
    return Dual1(fv, dx1, dx2)


def d_sin(d):
    c = cos(d.val)
    return d_chain(d, sin(d.val), c, neg(sin(d.val)) if isinstance(d, Dual2) else None)


def d_cos(d):
    return d_chain(d, cos(d.val), neg(sin(d.val)), neg(cos(d.val)) if isinstance(d, Dual2) else None)


def d_exp(d):
    e = exp(d.val)
    return d_chain(d, e, e, e if isinstance(d, Dual2) else None)


def d_tanh(d):
    t = tanh(d.val)
    dp = sub(1.0, mul(t, t))
    d2 = mul(-2.0, mul(t, dp)) if isinstance(d, Dual2) else None
    return d_chain(d, t, dp, d2)


def seed_duals(x, order=1):
    """Dual coordinates for a point (x1, x2) or an (n, 2) batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x1, x2 = float(x[0]), float(x[1])
        one, zero = 1.0, 0.0
    else:
        x1, x2 = x[:, 0], x[:, 1]
        one, zero = np.ones(x.shape[0]), np.zeros(x.shape[0])
    cls = Dual2 if order == 2 else Dual1
    if order == 2:
        return cls(x1, one, zero, zero, zero), cls(x2, zero, one, zero, zero)
    return cls(x1, one, zero), cls(x2, zero, one)


def eval_dual1(f, x):
    """Evaluate a dual-arithmetic program at a point, returning a Dual1 with
    the value and exact first partials w.r.t. x1, x2."""
    d1, d2 = seed_duals(x, order=1)
    return f(d1, d2)


def eval_dual2(f, x):
    """Like eval_dual1 but also carries the pure second partials; the
    Laplacian is dxx1 + dxx2."""
    d1, d2 = seed_duals(x, order=2)
    return f(d1, d2)
