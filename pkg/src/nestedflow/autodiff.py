"""Reverse-mode automatic differentiation over batched numpy arrays.

A small tape machine: model code builds scalar losses out of the primitive
functions in this module (arithmetic, ``exp``/``log``/``tanh``, matrix
products, column gathers, triangular solves, Householder reflections), and
:func:`evaluate_with_gradient` replays the tape backwards to accumulate exact
parameter gradients.

Every primitive accepts either plain numpy arrays or :class:`Var` nodes and
dispatches accordingly, so the same model code serves both fast untracked
evaluation and gradient evaluation.  One gradient evaluation is
single-threaded; independent evaluations on separate parameter copies may run
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Var",
    "NonFiniteLossError",
    "ParameterVector",
    "GradientRecord",
    "evaluate_with_gradient",
    "loss_value",
    "finite_difference_gradient",
]


class NonFiniteLossError(ArithmeticError):
    """A loss or gradient evaluation produced NaN/Inf.

    ``op`` names the first primitive whose output went non-finite.
    """

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op


class Var:
    """A node in the computation graph: a value plus backward hooks."""

    __slots__ = ("value", "parents", "op")

    def __init__(self, value, parents=(), op="leaf"):
        self.value = value
        self.parents = parents  # tuple of (Var, vjp) pairs
        self.op = op

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.shape})"

    # Operator sugar; the named functions below are the actual primitives.
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


_TAPE: list | None = None


class _Recording:
    """Context manager activating a fresh tape."""

    def __enter__(self):
        global _TAPE
        if _TAPE is not None:
            raise RuntimeError("gradient evaluations cannot be nested")
        _TAPE = []
        return _TAPE

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = None
        return False


def _is_var(x) -> bool:
    return isinstance(x, Var)

def _val(x):
    return x.value if isinstance(x, Var) else x


def _make(value, parents, op):
    """Create an output node, recording it when a tape is active."""
    if _TAPE is None:
        return Var(value, (), op)
    node = Var(value, tuple(p for p in parents if p[0] is not None), op)
    _TAPE.append(node)
    return node


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    g = np.asarray(grad)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a, b):
    if not (_is_var(a) or _is_var(b)):
        return np.add(a, b)
    av, bv = _val(a), _val(b)
    out = np.add(av, bv)
    pa = (a, lambda g, s=np.shape(av): _unbroadcast(g, s)) if _is_var(a) else (None, None)
    pb = (b, lambda g, s=np.shape(bv): _unbroadcast(g, s)) if _is_var(b) else (None, None)
    return _make(out, (pa, pb), "add")


def sub(a, b):
    if not (_is_var(a) or _is_var(b)):
        return np.subtract(a, b)
    av, bv = _val(a), _val(b)
    out = np.subtract(av, bv)
    pa = (a, lambda g, s=np.shape(av): _unbroadcast(g, s)) if _is_var(a) else (None, None)
    pb = (b, lambda g, s=np.shape(bv): _unbroadcast(-g, s)) if _is_var(b) else (None, None)
    return _make(out, (pa, pb), "sub")


def mul(a, b):
    if not (_is_var(a) or _is_var(b)):
        return np.multiply(a, b)
    av, bv = _val(a), _val(b)
    out = np.multiply(av, bv)
    pa = (a, lambda g, o=bv, s=np.shape(av): _unbroadcast(g * o, s)) if _is_var(a) else (None, None)
    pb = (b, lambda g, o=av, s=np.shape(bv): _unbroadcast(g * o, s)) if _is_var(b) else (None, None)
    return _make(out, (pa, pb), "mul")


def square(a):
    if not _is_var(a):
        return np.square(a)
    av = a.value
    return _make(np.square(av), ((a, lambda g: g * (2.0 * av)),), "square")


def exp(a):
    if not _is_var(a):
        return np.exp(a)
    out = np.exp(a.value)
    return _make(out, ((a, lambda g: g * out),), "exp")


def log(a):
    if not _is_var(a):
        return np.log(a)
    av = a.value
    return _make(np.log(av), ((a, lambda g: g / av),), "log")


def tanh(a):
    if not _is_var(a):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _make(out, ((a, lambda g: g * (1.0 - out * out)),), "tanh")


def vsum(a, axis=None):
    """Summation (optionally along one axis)."""
    if not _is_var(a):
        return np.sum(a, axis=axis)
    av = a.value
    out = np.sum(av, axis=axis)

    def vjp(g, shape=np.shape(av), axis=axis):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _make(out, ((a, vjp),), "sum")


def dot(a, b):
    """Vector-vector inner product."""
    if not (_is_var(a) or _is_var(b)):
        return np.dot(a, b)
    av, bv = _val(a), _val(b)
    out = np.dot(av, bv)
    pa = (a, lambda g, o=bv: g * o) if _is_var(a) else (None, None)
    pb = (b, lambda g, o=av: g * o) if _is_var(b) else (None, None)
    return _make(out, (pa, pb), "dot")


def matmul(a, b):
    if not (_is_var(a) or _is_var(b)):
        return np.matmul(a, b)
    av, bv = _val(a), _val(b)
    out = np.matmul(av, bv)
    pa = (a, lambda g, o=bv: np.matmul(g, o.T)) if _is_var(a) else (None, None)
    pb = (b, lambda g, o=av: np.matmul(o.T, g)) if _is_var(b) else (None, None)
    return _make(out, (pa, pb), "matmul")


def transpose(a):
    if not _is_var(a):
        return np.transpose(a)
    return _make(a.value.T, ((a, lambda g: np.transpose(g)),), "transpose")


def reshape(a, shape):
    if not _is_var(a):
        return np.reshape(a, shape)
    old = np.shape(a.value)
    return _make(np.reshape(a.value, shape), ((a, lambda g: np.reshape(g, old)),), "reshape")


# -- structural ops ---------------------------------------------------------

def slice_1d(a, start, stop):
    """Contiguous slice of a 1-D array (parameter block extraction)."""
    if not _is_var(a):
        return a[start:stop]
    av = a.value

    def vjp(g, n=av.shape[0], start=start, stop=stop):
        out = np.zeros(n)
        out[start:stop] = g
        return out

    return _make(av[start:stop], ((a, vjp),), "slice_1d")


def concat_1d(parts):
    """Concatenate 1-D pieces into one vector."""
    if not any(_is_var(p) for p in parts):
        return np.concatenate([np.atleast_1d(p) for p in parts])
    vals = [np.atleast_1d(_val(p)) for p in parts]
    out = np.concatenate(vals)
    offsets = np.cumsum([0] + [v.shape[0] for v in vals])
    parents = []
    for i, p in enumerate(parts):
        if _is_var(p):
            parents.append((p, lambda g, a=offsets[i], b=offsets[i + 1]: g[a:b]))
        else:
            parents.append((None, None))
    return _make(out, tuple(parents), "concat_1d")


def gather_cols(x, idx):
    """Select columns ``idx`` of a 2-D array (also permutes, when idx is a
    permutation)."""
    idx = np.asarray(idx)
    if not _is_var(x):
        return x[:, idx]
    xv = x.value

    def vjp(g, shape=xv.shape, idx=idx):
        out = np.zeros(shape)
        np.add.at(out, (slice(None), idx), g)
        return out

    return _make(xv[:, idx], ((x, vjp),), "gather_cols")


def scatter_cols(width, pieces):
    """Assemble a 2-D array of ``width`` columns from ``(idx, block)`` pieces.

    The index lists must partition ``range(width)``.
    """
    if not any(_is_var(b) for _, b in pieces):
        rows = np.shape(_val(pieces[0][1]))[0]
        out = np.empty((rows, width))
        for idx, block in pieces:
            out[:, np.asarray(idx)] = _val(block)
        return out
    rows = np.shape(_val(pieces[0][1]))[0]
    out = np.empty((rows, width))
    parents = []
    for idx, block in pieces:
        idx = np.asarray(idx)
        out[:, idx] = _val(block)
        if _is_var(block):
            parents.append((block, lambda g, idx=idx: g[:, idx]))
        else:
            parents.append((None, None))
    return _make(out, tuple(parents), "scatter_cols")


def matrix_from_entries(base, rows, cols, values):
    """Copy of ``base`` with ``values`` written at ``(rows, cols)``.

    ``base`` is a constant array (zeros, identity); the positions must be
    distinct.  Used to assemble triangular factors from parameter blocks.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if not _is_var(values):
        out = np.array(base)
        out[rows, cols] = values
        return out
    out = np.array(base)
    out[rows, cols] = values.value
    return _make(out, ((values, lambda g: g[rows, cols]),), "matrix_from_entries")


# -- flow primitives --------------------------------------------------------

def householder_rows(v, x):
    """Apply the reflection ``I - 2 v v^T/(v^T v)`` to every row of ``x``."""
    vv_val = _val(v)
    xv = _val(x)
    s = float(vv_val @ vv_val)
    if s == 0.0:
        raise ZeroDivisionError("Householder vector must be nonzero")
    c = 2.0 / s
    u = xv @ vv_val
    out = xv - np.outer(c * u, vv_val)
    if not (_is_var(v) or _is_var(x)):
        return out

    if _is_var(x):
        px = (x, lambda g: g - np.outer(c * (g @ vv_val), vv_val))
    else:
        px = (None, None)
    if _is_var(v):

        def vjp_v(g):
            gv = g @ vv_val
            return (-c) * (xv.T @ gv + g.T @ u) + (2.0 * c / s) * float(u @ gv) * vv_val

        pv = (v, vjp_v)
    else:
        pv = (None, None)
    return _make(out, (pv, px), "householder_rows")


def solve_triangular_rows(b, t, lower):
    """Solve ``Y @ T = B`` row-wise for triangular ``T`` (each row of B is an
    independent right-hand side against ``T`` acting on the right)."""
    tv = _val(t)
    bv = _val(b)
    n = tv.shape[0]
    y = np.empty_like(bv)
    if lower:
        for j in range(n - 1, -1, -1):
            d = tv[j, j]
            if d == 0.0:
                raise ZeroDivisionError(f"zero diagonal entry at index {j}")
            y[:, j] = (bv[:, j] - y[:, j + 1 :] @ tv[j + 1 :, j]) / d
    else:
        for j in range(n):
            d = tv[j, j]
            if d == 0.0:
                raise ZeroDivisionError(f"zero diagonal entry at index {j}")
            y[:, j] = (bv[:, j] - y[:, :j] @ tv[:j, j]) / d
    if not (_is_var(b) or _is_var(t)):
        return y

    def solve_back(g):
        return solve_triangular_rows(g, tv.T, lower=not lower)

    if _is_var(b) and _is_var(t):
        # Share the backward solve between both parents.
        cache = {}

        def bbar(g):
            if "b" not in cache:
                cache["b"] = solve_back(g)
            return cache["b"]

        parents = ((b, bbar), (t, lambda g: -(y.T @ bbar(g))))
    elif _is_var(b):
        parents = ((b, solve_back), (None, None))
    else:
        parents = ((None, None), (t, lambda g: -(y.T @ solve_back(g))))
    return _make(y, parents, "solve_triangular_rows")


# -- parameters and gradient evaluation -------------------------------------

@dataclass(frozen=True)
class ParameterVector:
    """Flat parameter storage with named block ranges.

    ``registry`` maps block names to half-open ``(start, stop)`` index ranges;
    the ranges are disjoint and cover the whole vector.
    """

    values: np.ndarray
    registry: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValueError("parameter vector must be 1-D")
        spans = sorted(self.registry.values())
        covered = 0
        for start, stop in spans:
            if start != covered:
                raise ValueError("registry ranges must be disjoint and cover the vector")
            covered = stop
        if covered != v.size:
            raise ValueError("registry ranges must cover the full vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector contains non-finite entries")

    def __len__(self):
        return self.values.size

    def block(self, name: str) -> np.ndarray:
        start, stop = self.registry[name]
        return self.values[start:stop]

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.registry)


@dataclass(frozen=True)
class GradientRecord:
    """Loss value and its gradient with respect to the flat parameters."""

    value: float
    gradient: np.ndarray


def _first_nonfinite_op(tape) -> str | None:
    for node in tape:
        if not np.all(np.isfinite(node.value)):
            return node.op
    return None


def _backward(tape, out: Var, leaf: Var) -> np.ndarray:
    grads = {id(out): np.float64(1.0)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    g = grads.get(id(leaf))
    if g is None:
        g = np.zeros_like(leaf.value)
    return np.asarray(g, dtype=np.float64)


def evaluate_with_gradient(loss, theta: ParameterVector) -> GradientRecord:
    """Evaluate ``loss`` at ``theta`` and return value plus exact gradient.

    ``loss`` must be a scalar function built from the primitives of this
    module; it receives the parameters as a single 1-D :class:`Var`.
    """
    with _Recording() as tape:
        leaf = Var(np.array(theta.values, dtype=np.float64))
        out = loss(leaf)
        if not isinstance(out, Var):
            raise TypeError("loss must return a Var built from autodiff primitives")
        value = float(out.value)
        if not np.isfinite(value):
            op = _first_nonfinite_op(tape)
            raise NonFiniteLossError(
                f"loss evaluated to {value}" + (f" (first non-finite op: {op})" if op else ""),
                op=op,
            )
        gradient = _backward(tape, out, leaf)
    if gradient.shape != theta.values.shape:
        gradient = np.broadcast_to(gradient, theta.values.shape).copy()
    if not np.all(np.isfinite(gradient)):
        bad = int(np.flatnonzero(~np.isfinite(gradient))[0])
        raise NonFiniteLossError(f"gradient is non-finite at parameter index {bad}")
    return GradientRecord(value=value, gradient=gradient)


def loss_value(loss, theta: ParameterVector) -> float:
    """Evaluate the loss without recording a tape."""
    out = loss(Var(np.asarray(theta.values, dtype=np.float64)))
    return float(_val(out))


def finite_difference_gradient(loss, theta: ParameterVector, step: float = 1e-5,
                               scale_step: bool = True) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time.

    With ``scale_step`` the step is ``step * max(1, |theta_i|)`` per
    coordinate, which keeps relative truncation error uniform across
    parameter magnitudes.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    base = np.array(theta.values, dtype=np.float64)
    grad = np.empty_like(base)
    for i in range(base.size):
        h = step * max(1.0, abs(base[i])) if scale_step else step
        bumped = base.copy()
        bumped[i] = base[i] + h
        up = loss_value(loss, theta.with_values(bumped))
        bumped[i] = base[i] - h
        down = loss_value(loss, theta.with_values(bumped))
        grad[i] = (up - down) / (2.0 * h)
    return grad
