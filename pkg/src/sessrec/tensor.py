"""Dense 2-D float64 tensors with a reverse-mode tape.

Every value is a (rows, cols) float64 matrix. Operations run forward-only
unless a ``Tape`` context is active, in which case each primitive records
a vector-Jacobian callback; ``Tape.backward`` replays the records in
reverse and accumulates gradients into ``Tensor.grad``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    return a


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() requires a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of primitive ops; backward walks it in exact reverse."""

    _stack: list["Tape"] = []

    def __init__(self):
        # each record: (output, inputs tuple, vjp(g_out) -> per-input grads)
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    @staticmethod
    def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        if Tape._stack:
            Tape._stack[-1].records.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"backward requires a scalar (1x1) loss, got {loss.shape}")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, vjp in reversed(self.records):
            g_out = adjoint.pop(id(out), None)
            holders.pop(id(out), None)
            if g_out is None:
                continue  # output never contributed to the loss
            for t, g in zip(inputs, vjp(g_out)):
                if g is None:
                    continue
                key = id(t)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + g
                else:
                    adjoint[key] = g
                    holders[key] = t
        for key, g in adjoint.items():
            t = holders[key]
            t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    Tape._record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def sparse_matmul(s, b: Tensor) -> Tensor:
    """Sparse-dense product S @ B. S is a scipy sparse matrix (not trainable)."""
    if not sp.issparse(s):
        raise ShapeError("sparse_matmul: left operand must be a scipy sparse matrix")
    if s.shape[1] != b.shape[0]:
        raise ShapeError(f"sparse_matmul: inner dimensions of {s.shape} and {b.shape} disagree")
    out = Tensor(np.asarray(s @ b.data))
    st = s.T.tocsr()
    Tape._record(out, (b,), lambda g: (np.asarray(st @ g),))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    Tape._record(out, (a, b), lambda g: (g, g))
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b a 1 x cols row vector broadcast over rows."""
    if b.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {b.shape} does not broadcast over {x.shape}")
    out = Tensor(x.data + b.data)
    Tape._record(out, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)
    Tape._record(out, (x,), lambda g: (g * c,))
    return out


def affine(x: Tensor, a: float, b: float) -> Tensor:
    """Elementwise a*x + b with scalar constants."""
    out = Tensor(a * x.data + b)
    Tape._record(out, (x,), lambda g: (g * a,))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    Tape._record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def mul_cols(x: Tensor, col: Tensor) -> Tensor:
    """Scale every row of x by the matching entry of an m x 1 column."""
    if col.shape != (x.shape[0], 1):
        raise ShapeError(f"mul_cols: column {col.shape} does not match {x.shape}")
    out = Tensor(x.data * col.data)
    xd, cd = x.data, col.data
    Tape._record(out, (x, col), lambda g: (g * cd, (g * xd).sum(axis=1, keepdims=True)))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    Tape._record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = Tensor(y)
    Tape._record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    xd = x.data
    Tape._record(out, (x,), lambda g: (g / xd,))
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(x.data, lo, hi))
    mask = ((x.data > lo) & (x.data < hi)).astype(np.float64)
    Tape._record(out, (x,), lambda g: (g * mask,))
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts of {a.shape} and {b.shape} differ")
    out = Tensor(np.hstack([a.data, b.data]))
    split = a.shape[1]
    Tape._record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))
    return out


def select_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("select_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"select_rows: index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[idx])
    rows, cols = x.shape

    def vjp(g):
        buf = np.zeros((rows, cols))
        np.add.at(buf, idx, g)
        return (buf,)

    Tape._record(out, (x,), vjp)
    return out


def mean_rows(x: Tensor) -> Tensor:
    m = x.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))
    Tape._record(out, (x,), lambda g: (np.repeat(g, m, axis=0) / m,))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([[x.data.sum()]]))
    shape = x.shape
    Tape._record(out, (x,), lambda g: (np.full(shape, g[0, 0]),))
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T.copy())
    Tape._record(out, (x,), lambda g: (g.T,))
    return out


def row_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)
    Tape._record(out, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))
    return out


def row_logsumexp(x: Tensor) -> Tensor:
    mx = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - mx)
    out = Tensor(mx + np.log(e.sum(axis=1, keepdims=True)))
    soft = e / e.sum(axis=1, keepdims=True)
    Tape._record(out, (x,), lambda g: (g * soft,))
    return out


def normalize_rows(x: Tensor) -> Tensor:
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("normalize_rows: degenerate representation (zero row)")
    n = x.data / norms
    out = Tensor(n)

    def vjp(g):
        return ((g - n * (g * n).sum(axis=1, keepdims=True)) / norms,)

    Tape._record(out, (x,), vjp)
    return out


def cosine_similarity_matrix(x: Tensor) -> Tensor:
    """All-pairs cosine similarity of the rows of x (k x k)."""
    n = normalize_rows(x)
    return matmul(n, transpose(n))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of f() against central finite differences.

    f is a zero-argument callable returning a scalar Tensor built from the
    given parameter Tensors. Returns the max relative error over all
    parameter entries, using |a-g| / max(1, |a|, |g|).
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
