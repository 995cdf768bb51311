"""Reverse-mode automatic differentiation over 2-D float64 arrays.

Define-by-run: operations executed while a Tape is active are recorded in
execution order, which is a topological order of the DAG, and replayed in
reverse by ``Tape.backward``.  Sparse structure (adjacency patterns, hop
masks, selection indices) is constant; gradients flow only through dense
values and through the value arrays of learned structures (``csr_mm``).

Subgradient conventions: relu'(0) = 0, max ties route to the lowest row
index, sparsemax off-support entries get zero gradient.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from . import _simplex
from .tensor import ShapeError, SparseMatrix, as_tensor


class ContractError(ValueError):
    """An operation was called outside its contract (non-shape violation)."""


class Variable:
    """A node in the differentiation graph: value, gradient accumulator, rule."""

    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "_backward",
                 "_tape")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), check_finite: bool = True):
        self.value = as_tensor(value, check_finite=check_finite)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.value) if self.requires_grad else None
        self.op = op
        self.parents = parents
        self._backward = None
        self._tape = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Variable({self.value.shape[0]}x{self.value.shape[1]}, op={self.op})"


def parameter(value) -> Variable:
    """A trainable leaf."""
    return Variable(value, requires_grad=True)


def constant(value) -> Variable:
    """A non-trainable leaf."""
    return Variable(value, requires_grad=False)


_STACK = threading.local()


def _tape_stack() -> list:
    if not hasattr(_STACK, "tapes"):
        _STACK.tapes = []
    return _STACK.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; one per forward pass, never shared."""

    def __init__(self):
        self._nodes: list[Variable] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, var: Variable) -> Variable:
        var._tape = self
        self._nodes.append(var)
        return var

    def backward(self, loss: Variable) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
        if loss.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        for node in self._nodes:
            node.grad[...] = 0.0
        loss.grad[0, 0] = 1.0
        for node in reversed(self._nodes):
            node._backward(node.grad)


def backward(tape: Tape, loss: Variable) -> None:
    tape.backward(loss)


def _apply(op: str, value: np.ndarray, parents: tuple,
           make_backward: Callable[[], Callable]) -> Variable:
    """Record an op result on the active tape when any parent needs gradients."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents
                                     if isinstance(p, Variable))
    # ops always produce fresh contiguous 2-D float64 arrays: skip validation
    out = object.__new__(Variable)
    out.value = value
    out.requires_grad = needs
    out.grad = np.zeros_like(value) if needs else None
    out.op = op
    out.parents = parents if needs else ()
    out._backward = None
    out._tape = None
    if needs:
        out._backward = make_backward()
        tape.record(out)
    return out


# -- elementwise and linear ops ----------------------------------------------

def _same_shape(a: Variable, b: Variable, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "add")

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g
        return run

    return _apply("add", a.value + b.value, (a, b), bw)


def sub(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "sub")

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad -= g
        return run

    return _apply("sub", a.value - b.value, (a, b), bw)


def scale(a: Variable, c: float) -> Variable:
    c = float(c)

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += c * g
        return run

    return _apply("scale", c * a.value, (a,), bw)


def mul(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g * bv
            if b.requires_grad:
                b.grad += g * av
        return run

    return _apply("mul", av * bv, (a, b), bw)


def matmul(a: Variable, b: Variable) -> Variable:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g @ bv.T
            if b.requires_grad:
                b.grad += av.T @ g
        return run

    return _apply("matmul", av @ bv, (a, b), bw)


def spmm(s: SparseMatrix, d: Variable) -> Variable:
    """Constant sparse operand times dense variable."""
    if s.cols != d.shape[0]:
        raise ShapeError(f"spmm: inner dims differ, {s.shape} x {d.shape}")

    def bw():
        def run(g):
            if d.requires_grad:
                d.grad += s.t_matmat(g)
        return run

    return _apply("spmm", s.matmat(d.value), (d,), bw)


def csr_mm(pattern: SparseMatrix, vals: Variable, d: Variable) -> Variable:
    """CSR matrix with variable values times dense variable.

    ``pattern`` fixes the sparsity (constant); ``vals`` is an (nnz, 1) column
    aligned with pattern.col_indices.  Gradients flow into both vals and d.
    """
    if vals.shape != (pattern.nnz, 1):
        raise ShapeError(f"csr_mm: vals must be ({pattern.nnz}, 1), got {vals.shape}")
    if pattern.cols != d.shape[0]:
        raise ShapeError(f"csr_mm: inner dims differ, {pattern.shape} x {d.shape}")
    m = pattern.with_values(vals.value[:, 0])
    dv = d.value

    def bw():
        rows = pattern.row_ids()
        cols = pattern.col_indices

        def run(g):
            if vals.requires_grad:
                vals.grad[:, 0] += np.einsum("ij,ij->i", g[rows], dv[cols])
            if d.requires_grad:
                d.grad += m.t_matmat(g)
        return run

    return _apply("csr_mm", m.matmat(dv), (vals, d), bw)


# -- nonlinearities -----------------------------------------------------------

def relu(a: Variable) -> Variable:
    out = np.maximum(a.value, 0.0)

    def bw():
        mask = out > 0.0

        def run(g):
            if a.requires_grad:
                a.grad += g * mask
        return run

    return _apply("relu", out, (a,), bw)


def tanh(a: Variable) -> Variable:
    out = np.tanh(a.value)

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g * (1.0 - out * out)
        return run

    return _apply("tanh", out, (a,), bw)


def log(a: Variable) -> Variable:
    if np.any(a.value <= 0.0):
        raise ContractError("log requires strictly positive entries")
    av = a.value

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g / av
        return run

    return _apply("log", np.log(av), (a,), bw)


# -- shape manipulation -------------------------------------------------------

def concat_cols(a: Variable, b: Variable) -> Variable:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    na = a.shape[1]

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g[:, :na]
            if b.requires_grad:
                b.grad += g[:, na:]
        return run

    return _apply("concat_cols", np.hstack([a.value, b.value]), (a, b), bw)


def slice_cols(a: Variable, start: int, stop: int) -> Variable:
    if not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad[:, start:stop] += g
        return run

    return _apply("slice_cols", np.ascontiguousarray(a.value[:, start:stop]),
                  (a,), bw)


def transpose(a: Variable) -> Variable:
    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g.T
        return run

    return _apply("transpose", np.ascontiguousarray(a.value.T), (a,), bw)


def gather_rows(a: Variable, idx) -> Variable:
    """Row selection out[i, :] = a[idx[i], :]; duplicates are allowed."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index list must be 1-D")
    if len(idx) and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows: index out of range")

    def bw():
        def run(g):
            if a.requires_grad:
                np.add.at(a.grad, idx, g)
        return run

    return _apply("gather_rows", a.value[idx].copy(), (a,), bw)


def scatter_rows(a: Variable, idx, rows: int) -> Variable:
    """Place a's rows at positions idx of an otherwise-zero (rows, cols) result."""
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) != a.shape[0]:
        raise ShapeError("scatter_rows: one target row per input row required")
    if len(idx):
        if idx.min() < 0 or idx.max() >= rows:
            raise IndexError("scatter_rows: index out of range")
        if np.any(np.diff(idx) <= 0):
            raise IndexError("scatter_rows: indices must be strictly increasing")
    out = np.zeros((rows, a.shape[1]))
    out[idx] = a.value

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g[idx]
        return run

    return _apply("scatter_rows", out, (a,), bw)


# -- reductions ---------------------------------------------------------------

def sum_all(a: Variable) -> Variable:
    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g[0, 0]
        return run

    return _apply("sum", np.array([[a.value.sum()]]), (a,), bw)


def row_mean(a: Variable) -> Variable:
    """Mean over rows, a (n, d) -> (1, d)."""
    n = a.shape[0]
    if n == 0:
        raise ContractError("row_mean of an empty matrix")

    def bw():
        def run(g):
            if a.requires_grad:
                a.grad += g / n
        return run

    return _apply("row_mean", a.value.mean(axis=0, keepdims=True), (a,), bw)


def col_max(a: Variable) -> Variable:
    """Per-column maximum, a (n, d) -> (1, d); ties go to the lowest row."""
    if a.shape[0] == 0:
        raise ContractError("col_max of an empty matrix")
    arg = np.argmax(a.value, axis=0)
    out = a.value[arg, np.arange(a.shape[1])].reshape(1, -1)

    def bw():
        cols = np.arange(a.shape[1])

        def run(g):
            if a.requires_grad:
                np.add.at(a.grad, (arg, cols), g[0])
        return run

    return _apply("col_max", out, (a,), bw)


# -- row-wise simplex maps ------------------------------------------------------

def softmax_rows(a: Variable) -> Variable:
    out = np.empty_like(a.value)
    for i in range(a.shape[0]):
        out[i] = _simplex.softmax(a.value[i])

    def bw():
        def run(g):
            if a.requires_grad:
                for i in range(out.shape[0]):
                    a.grad[i] += _simplex.softmax_jvp(out[i], g[i])
        return run

    return _apply("softmax_rows", out, (a,), bw)


def sparsemax_rows(a: Variable) -> Variable:
    out = np.empty_like(a.value)
    for i in range(a.shape[0]):
        out[i] = _simplex.sparsemax(a.value[i])

    def bw():
        def run(g):
            if a.requires_grad:
                for i in range(out.shape[0]):
                    a.grad[i] += _simplex.sparsemax_jvp(out[i], g[i])
        return run

    return _apply("sparsemax_rows", out, (a,), bw)


def _check_segments(vals: Variable, offsets: np.ndarray):
    if vals.shape[1] != 1:
        raise ShapeError("segment ops expect an (m, 1) column of values")
    if offsets[0] != 0 or offsets[-1] != vals.shape[0]:
        raise ShapeError("segment offsets must span the value column")
    if np.any(np.diff(offsets) <= 0):
        raise ContractError("empty segments are not allowed")


def segment_sparsemax(vals: Variable, offsets) -> Variable:
    """Sparsemax applied independently to each offsets[i]:offsets[i+1] slice."""
    offsets = np.asarray(offsets, dtype=np.intp)
    _check_segments(vals, offsets)
    out = _simplex.segment_sparsemax(vals.value[:, 0], offsets)

    def bw():
        def run(g):
            if vals.requires_grad:
                vals.grad[:, 0] += _simplex.segment_sparsemax_jvp(
                    out, g[:, 0], offsets)
        return run

    return _apply("segment_sparsemax", out.reshape(-1, 1), (vals,), bw)


def segment_softmax(vals: Variable, offsets) -> Variable:
    """Softmax applied independently to each offsets[i]:offsets[i+1] slice."""
    offsets = np.asarray(offsets, dtype=np.intp)
    _check_segments(vals, offsets)
    out = _simplex.segment_softmax(vals.value[:, 0], offsets)

    def bw():
        def run(g):
            if vals.requires_grad:
                vals.grad[:, 0] += _simplex.segment_softmax_jvp(
                    out, g[:, 0], offsets)
        return run

    return _apply("segment_softmax", out.reshape(-1, 1), (vals,), bw)


def cross_entropy_logits(logits: Variable, label: int) -> Variable:
    """-log softmax(logits)[label] for a (1, c) logit row, computed stably."""
    if logits.shape[0] != 1:
        raise ShapeError(f"cross_entropy expects a (1, c) row, got {logits.shape}")
    c = logits.shape[1]
    label = int(label)
    if not 0 <= label < c:
        raise IndexError(f"label {label} out of range for {c} classes")
    z = logits.value[0]
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    loss = lse - z[label]

    def bw():
        probs = np.exp(z - lse)

        def run(g):
            if logits.requires_grad:
                d = probs.copy()
                d[label] -= 1.0
                logits.grad[0] += g[0, 0] * d
        return run

    return _apply("cross_entropy", np.array([[loss]]), (logits,), bw)


# -- finite-difference checking ------------------------------------------------

def grad_check(f: Callable[[Sequence[Variable]], Variable],
               params: Sequence[Variable], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must rebuild the scalar loss from scratch on every call.
    Error is max_i |g_analytic_i - g_central_i| / max(1, |g_central_i|).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def value() -> float:
        return float(f(params).value[0, 0])

    worst = 0.0
    for p, g in zip(params, analytic):
        it = np.nditer(p.value, flags=["multi_index"])
        for _ in it:
            ij = it.multi_index
            orig = p.value[ij]
            p.value[ij] = orig + eps
            up = value()
            p.value[ij] = orig - eps
            down = value()
            p.value[ij] = orig
            central = (up - down) / (2.0 * eps)
            err = abs(g[ij] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst
