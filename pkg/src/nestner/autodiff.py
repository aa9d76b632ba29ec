"""Minimal reverse-mode autodiff over numpy arrays, scoped to the taggers' needs.

Values are computed eagerly; every operation records a backward closure on a
:class:`Tape`. Activations are rank-1 vectors and weights rank-2 matrices;
there is no broadcasting. Calling :meth:`Tape.backward` on a scalar loss
returns per-parameter gradients with row-level sparsity for embedding-table
lookups, so the optimizer can skip rows that never appeared in a batch.

Parameters must not be mutated while a tape built on them is still in use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class Parameters:
    """Named, shaped arrays of reals; the full state of a model.

    64-bit by default (all test tolerances assume it); 32-bit may be chosen
    for speed. Names are unique and shapes fixed once added.
    """

    def __init__(self, dtype=np.float64):
        self._arrays: dict[str, np.ndarray] = {}
        self.dtype = np.dtype(dtype)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in parameter {name}")
        self._arrays[name] = arr
        return arr

    def uniform(
        self, name: str, shape: tuple[int, ...], rng: np.random.Generator, fan_in: int | None = None
    ) -> np.ndarray:
        """uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); fan_in defaults to shape[0]."""
        fan = fan_in if fan_in is not None else shape[0]
        bound = (1.0 / max(fan, 1)) ** 0.5
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "Parameters":
        clone = Parameters(self.dtype)
        for name, arr in self._arrays.items():
            clone._arrays[name] = arr.copy()
        return clone

    def load_state(self, other: "Parameters") -> None:
        """Overwrite array contents in place from another store with equal names."""
        if set(self._arrays) != set(other._arrays):
            raise ValueError("parameter stores have different names")
        for name, arr in self._arrays.items():
            np.copyto(arr, other._arrays[name])


class Gradients:
    """Per-parameter gradients of one backward pass.

    ``dense`` holds full-shape arrays for parameters used as whole tensors;
    ``rows`` holds row-index maps for parameters used via lookups. Anything
    absent from both was untouched and its gradient is exactly zero.
    """

    def __init__(self):
        self.dense: dict[str, np.ndarray] = {}
        self.rows: dict[str, dict[int, np.ndarray]] = {}

    def touched(self, name: str) -> bool:
        return name in self.dense or name in self.rows

    def touched_row_ids(self, name: str) -> list[int]:
        return sorted(self.rows.get(name, ()))

    def materialize(self, name: str, shape: tuple[int, ...], dtype=np.float64) -> np.ndarray:
        """Full-shape gradient array (zeros where untouched)."""
        out = np.zeros(shape, dtype=dtype)
        if name in self.dense:
            out += self.dense[name]
        for row, g in self.rows.get(name, {}).items():
            out[row] += g
        return out

    def nonfinite_names(self) -> list[str]:
        bad = [name for name, g in self.dense.items() if not np.all(np.isfinite(g))]
        for name, rows in self.rows.items():
            if any(not np.all(np.isfinite(g)) for g in rows.values()):
                bad.append(name)
        return sorted(set(bad))


class Var:
    """A node on the tape: an eagerly computed array plus a backward closure."""

    __slots__ = ("value", "idx", "_back")

    def __init__(self, value: np.ndarray, idx: int, back: Callable | None):
        self.value = value
        self.idx = idx
        self._back = back

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def _acc(grads: list, var: Var, g: np.ndarray) -> None:
    cur = grads[var.idx]
    grads[var.idx] = g if cur is None else cur + g


class Tape:
    """Records a computation over `params` for one backward pass."""

    def __init__(self, params: Parameters):
        self.params = params
        self.dtype = params.dtype
        self.nodes: list[Var] = []
        self._param_vars: dict[str, Var] = {}
        self._lookup_vars: dict[tuple[str, int], Var] = {}

    def _new(self, value: np.ndarray, back: Callable | None) -> Var:
        var = Var(value, len(self.nodes), back)
        self.nodes.append(var)
        return var

    # ------------------------------------------------------------------ leaves

    def const(self, value) -> Var:
        """A constant input; no gradient flows into it."""
        return self._new(np.asarray(value, dtype=self.dtype), None)

    def param(self, name: str) -> Var:
        """The whole named parameter array (dense gradient)."""
        var = self._param_vars.get(name)
        if var is None:
            var = self._new(self.params[name], None)
            self._param_vars[name] = var
        return var

    def lookup(self, name: str, row: int) -> Var:
        """One row of a named table (row-sparse gradient)."""
        var = self._lookup_vars.get((name, row))
        if var is None:
            var = self._new(self.params[name][row], None)
            self._lookup_vars[(name, row)] = var
        return var

    # -------------------------------------------------------------- arithmetic

    def add(self, a: Var, b: Var) -> Var:
        assert a.shape == b.shape, (a.shape, b.shape)

        def back(g, grads):
            _acc(grads, a, g)
            _acc(grads, b, g)

        return self._new(a.value + b.value, back)

    def add_n(self, items: Sequence[Var]) -> Var:
        assert items, "add_n needs at least one input"
        first = items[0].shape
        assert all(v.shape == first for v in items)

        def back(g, grads):
            for v in items:
                _acc(grads, v, g)

        return self._new(sum(v.value for v in items[1:]) + items[0].value, back)

    def sub(self, a: Var, b: Var) -> Var:
        assert a.shape == b.shape

        def back(g, grads):
            _acc(grads, a, g)
            _acc(grads, b, -g)

        return self._new(a.value - b.value, back)

    def mul(self, a: Var, b: Var) -> Var:
        assert a.shape == b.shape

        def back(g, grads):
            _acc(grads, a, g * b.value)
            _acc(grads, b, g * a.value)

        return self._new(a.value * b.value, back)

    def scale(self, a: Var, k: float) -> Var:
        def back(g, grads):
            _acc(grads, a, g * k)

        return self._new(a.value * k, back)

    def add_const(self, a: Var, c: float) -> Var:
        def back(g, grads):
            _acc(grads, a, g)

        return self._new(a.value + c, back)

    def matvec(self, x: Var, w: Var) -> Var:
        """(d,) @ (d, k) -> (k,)"""
        assert x.value.ndim == 1 and w.value.ndim == 2 and x.shape[0] == w.shape[0]

        def back(g, grads):
            _acc(grads, x, w.value @ g)
            _acc(grads, w, np.outer(x.value, g))

        return self._new(x.value @ w.value, back)

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w + b with x (d,), w (d, k), b (k,)."""
        assert x.value.ndim == 1 and w.value.ndim == 2
        assert x.shape[0] == w.shape[0] and b.shape == (w.shape[1],)

        def back(g, grads):
            _acc(grads, x, w.value @ g)
            _acc(grads, w, np.outer(x.value, g))
            _acc(grads, b, g)

        return self._new(x.value @ w.value + b.value, back)

    # ------------------------------------------------------------- activations

    def tanh(self, a: Var) -> Var:
        y = np.tanh(a.value)

        def back(g, grads):
            _acc(grads, a, g * (1.0 - y * y))

        return self._new(y, back)

    def sigmoid(self, a: Var) -> Var:
        # tanh form is overflow-safe for large negative inputs
        y = 0.5 * (np.tanh(0.5 * a.value) + 1.0)

        def back(g, grads):
            _acc(grads, a, g * y * (1.0 - y))

        return self._new(y, back)

    # ------------------------------------------------------- shape and slicing

    def concat(self, items: Sequence[Var]) -> Var:
        assert all(v.value.ndim == 1 for v in items)
        offsets = np.cumsum([0] + [v.shape[0] for v in items])

        def back(g, grads):
            for v, start, stop in zip(items, offsets, offsets[1:]):
                _acc(grads, v, g[start:stop])

        return self._new(np.concatenate([v.value for v in items]), back)

    def narrow(self, a: Var, start: int, stop: int) -> Var:
        assert a.value.ndim == 1 and 0 <= start < stop <= a.shape[0]

        def back(g, grads):
            full = np.zeros(a.shape, dtype=self.dtype)
            full[start:stop] = g
            _acc(grads, a, full)

        return self._new(a.value[start:stop], back)

    def row(self, m: Var, i: int) -> Var:
        assert m.value.ndim == 2

        def back(g, grads):
            full = np.zeros(m.shape, dtype=self.dtype)
            full[i] = g
            _acc(grads, m, full)

        return self._new(m.value[i], back)

    def col(self, m: Var, j: int) -> Var:
        assert m.value.ndim == 2

        def back(g, grads):
            full = np.zeros(m.shape, dtype=self.dtype)
            full[:, j] = g
            _acc(grads, m, full)

        return self._new(m.value[:, j].copy(), back)

    def block(self, m: Var, r0: int, r1: int, c0: int, c1: int) -> Var:
        assert m.value.ndim == 2

        def back(g, grads):
            full = np.zeros(m.shape, dtype=self.dtype)
            full[r0:r1, c0:c1] = g
            _acc(grads, m, full)

        return self._new(m.value[r0:r1, c0:c1], back)

    def pick(self, a: Var, i: int) -> Var:
        assert a.value.ndim == 1

        def back(g, grads):
            full = np.zeros(a.shape, dtype=self.dtype)
            full[i] = g
            _acc(grads, a, full)

        return self._new(a.value[i], back)

    def pick2(self, m: Var, i: int, j: int) -> Var:
        assert m.value.ndim == 2

        def back(g, grads):
            full = np.zeros(m.shape, dtype=self.dtype)
            full[i, j] = g
            _acc(grads, m, full)

        return self._new(m.value[i, j], back)

    # -------------------------------------------------------------- reductions

    def sum(self, a: Var) -> Var:
        def back(g, grads):
            _acc(grads, a, np.full(a.shape, g, dtype=self.dtype))

        return self._new(np.asarray(a.value.sum(), dtype=self.dtype), back)

    def logsumexp(self, a: Var) -> Var:
        """Max-shifted log-sum-exp of a vector; overflow-safe."""
        assert a.value.ndim == 1
        m = np.max(a.value)
        y = m + np.log(np.sum(np.exp(a.value - m)))

        def back(g, grads):
            _acc(grads, a, g * np.exp(a.value - y))

        return self._new(np.asarray(y, dtype=self.dtype), back)

    def softmax_cross_entropy(self, logits: Var, target: int) -> Var:
        """-log softmax(logits)[target], fused for stability."""
        assert logits.value.ndim == 1
        m = np.max(logits.value)
        lse = m + np.log(np.sum(np.exp(logits.value - m)))
        loss = lse - logits.value[target]

        def back(g, grads):
            p = np.exp(logits.value - lse)
            p[target] -= 1.0
            _acc(grads, logits, g * p)

        return self._new(np.asarray(loss, dtype=self.dtype), back)

    def dropout(self, a: Var, mask: np.ndarray) -> Var:
        """Apply a precomputed (already scaled) dropout mask."""
        assert mask.shape == a.shape

        def back(g, grads):
            _acc(grads, a, g * mask)

        return self._new(a.value * mask, back)

    def crf_step(self, alpha: Var, trans: Var) -> Var:
        """One forward-algorithm step: out[j] = logsumexp_i(alpha[i] + trans[i, j])."""
        k = alpha.shape[0]
        assert trans.shape == (k, k)
        scores = alpha.value[:, None] + trans.value
        m = scores.max(axis=0)
        out = m + np.log(np.exp(scores - m[None, :]).sum(axis=0))

        def back(g, grads):
            w = np.exp(scores - out[None, :]) * g[None, :]
            _acc(grads, alpha, w.sum(axis=1))
            _acc(grads, trans, w)

        return self._new(out, back)

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Var) -> Gradients:
        """Reverse-mode gradients of a scalar loss over this tape."""
        assert loss.value.shape == (), "loss must be a scalar"
        partials: list = [None] * len(self.nodes)
        partials[loss.idx] = np.asarray(1.0, dtype=self.dtype)
        for var in reversed(self.nodes):
            g = partials[var.idx]
            if g is None or var._back is None:
                continue
            var._back(g, partials)
        grads = Gradients()
        for name, var in self._param_vars.items():
            g = partials[var.idx]
            if g is not None:
                grads.dense[name] = g
        for (name, r), var in self._lookup_vars.items():
            g = partials[var.idx]
            if g is not None:
                grads.rows.setdefault(name, {})[r] = g
        return grads


def dropout_mask(rng: np.random.Generator, n: int, rate: float, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: kept entries scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(n, dtype=dtype)
    keep = rng.random(n) >= rate
    return keep.astype(dtype) / (1.0 - rate)


# ------------------------------------------------------------ recurrent cells


def lstm_cell(tape: Tape, x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var, hidden: int):
    """One LSTM step. Gate layout along the 4*hidden axis is [input|forget|cell|output]."""
    pre = tape.add(tape.affine(x, wx, b), tape.matvec(h, wh))
    i = tape.sigmoid(tape.narrow(pre, 0, hidden))
    f = tape.sigmoid(tape.narrow(pre, hidden, 2 * hidden))
    g = tape.tanh(tape.narrow(pre, 2 * hidden, 3 * hidden))
    o = tape.sigmoid(tape.narrow(pre, 3 * hidden, 4 * hidden))
    c_next = tape.add(tape.mul(f, c), tape.mul(i, g))
    h_next = tape.mul(o, tape.tanh(c_next))
    return h_next, c_next


def gru_cell(tape: Tape, x: Var, h: Var, wx: Var, wh: Var, b: Var, hidden: int) -> Var:
    """One GRU step with gate layout [update|reset|candidate].

    h' = z*h + (1-z)*n, so a saturated update gate keeps the old state.
    """
    px = tape.affine(x, wx, b)
    ph = tape.matvec(h, wh)
    z = tape.sigmoid(tape.add(tape.narrow(px, 0, hidden), tape.narrow(ph, 0, hidden)))
    r = tape.sigmoid(
        tape.add(tape.narrow(px, hidden, 2 * hidden), tape.narrow(ph, hidden, 2 * hidden))
    )
    n = tape.tanh(
        tape.add(
            tape.narrow(px, 2 * hidden, 3 * hidden),
            tape.mul(r, tape.narrow(ph, 2 * hidden, 3 * hidden)),
        )
    )
    keep = tape.mul(z, h)
    update = tape.mul(tape.add_const(tape.scale(z, -1.0), 1.0), n)
    return tape.add(keep, update)


# ------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    """Per-parameter max relative error of reverse-mode vs finite differences."""

    max_rel_err: dict[str, float]
    tolerance: float
    epsilon: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_err.values())

    @property
    def failures(self) -> list[str]:
        return sorted(n for n, err in self.max_rel_err.items() if err >= self.tolerance)

    def __str__(self) -> str:
        lines = []
        for name in sorted(self.max_rel_err):
            err = self.max_rel_err[name]
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name:<40} {err:12.3e}  {status}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[Tape], Var],
    params: Parameters,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` must be deterministic (no dropout) and build a scalar loss on
    the tape it is given. The error per parameter is the norm ratio
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`` with the euclidean norm
    over the parameter's elements, which stays below float64
    finite-difference noise for a correct gradient and reaches order one for
    a broken one.
    """
    tape = Tape(params)
    grads = tape.backward(loss_fn(tape))
    report: dict[str, float] = {}
    for name, arr in params.items():
        ad = grads.materialize(name, arr.shape, params.dtype)
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = float(loss_fn(Tape(params)).value)
            flat[k] = orig - epsilon
            down = float(loss_fn(Tape(params)).value)
            flat[k] = orig
            fd_flat[k] = (up - down) / (2.0 * epsilon)
        denom = max(float(np.linalg.norm(ad)), float(np.linalg.norm(fd)), 1e-8)
        report[name] = float(np.linalg.norm(ad - fd)) / denom
    return GradCheckReport(report, tolerance, epsilon)
