"""Reverse-mode automatic differentiation on a dynamically built operation tape.

Values are float64 numpy arrays. The last axis is the vector axis; any leading
axes are treated as independent batch axes (a batch of Monte Carlo chains can
share one tape). A scalar is an array of shape ``()`` or, batched, ``(B,)``.

Gradients are first-order only: every quantity whose derivative is needed must
be expressed in primal tape operations (in particular, scores of log-densities
are built analytically rather than by nesting backward passes).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = ["Tape", "Var", "DomainError", "OPCODES"]

OPCODES = (
    "add", "sub", "mul", "div", "neg", "exp", "log", "tanh", "softplus",
    "sigmoid", "square", "sqrt", "dot", "scale", "sum", "affine",
)


class DomainError(ValueError):
    """An operation was applied outside its mathematical domain."""

    def __init__(self, opcode: str, detail: str):
        self.opcode = opcode
        super().__init__(f"{opcode}: {detail}")


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index", "value", "parents", "vjp", "trainable", "name")

    def __init__(self, tape, index, value, parents=(), vjp=None,
                 trainable=False, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    # Operator sugar; constants are lifted on the fly.
    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(other, self)

    def __neg__(self):
        return self.tape.neg(self)


class Tape:
    """Append-only record of operations, supporting one backward sweep.

    The tape is rebuilt for every loss evaluation (dynamic graph). It is
    single-threaded; independent tapes may be evaluated concurrently.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: list[Var] = []
        self._consumed = False

    # ------------------------------------------------------------------ leaves

    def lift(self, value, trainable: bool = False, name: str | None = None) -> Var:
        """Bring a constant or trainable value onto the tape."""
        arr = _as_array(value)
        if not np.all(np.isfinite(arr)):
            raise DomainError("lift", f"non-finite input {arr!r}")
        var = self._push(arr, (), None, trainable=trainable, name=name)
        if trainable:
            self.params.append(var)
        return var

    def constant(self, value) -> Var:
        return self.lift(value, trainable=False)

    def _push(self, value, parents, vjp, trainable=False, name=None) -> Var:
        var = Var(self, len(self.nodes), value, parents, vjp, trainable, name)
        self.nodes.append(var)
        return var

    def _coerce(self, x) -> Var:
        return x if isinstance(x, Var) else self.constant(x)

    # ------------------------------------------------------------- dispatcher

    def apply(self, op: str, *args) -> Var:
        """Apply a named operation; the preferred entry point is the methods."""
        if op not in OPCODES:
            raise DomainError(op, f"unknown opcode (valid: {', '.join(OPCODES)})")
        return getattr(self, op)(*args)

    # ------------------------------------------------------------ arithmetic

    def add(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        value = a.value + b.value

        def vjp(adj):
            return _unbroadcast(adj, a.shape), _unbroadcast(adj, b.shape)

        return self._push(value, (a, b), vjp)

    def sub(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        value = a.value - b.value

        def vjp(adj):
            return _unbroadcast(adj, a.shape), _unbroadcast(-adj, b.shape)

        return self._push(value, (a, b), vjp)

    def mul(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        value = a.value * b.value

        def vjp(adj):
            return (_unbroadcast(adj * b.value, a.shape),
                    _unbroadcast(adj * a.value, b.shape))

        return self._push(value, (a, b), vjp)

    def div(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        if np.any(b.value == 0.0):
            raise DomainError("div", "division by zero")
        value = a.value / b.value

        def vjp(adj):
            return (_unbroadcast(adj / b.value, a.shape),
                    _unbroadcast(-adj * value / b.value, b.shape))

        return self._push(value, (a, b), vjp)

    def neg(self, a) -> Var:
        a = self._coerce(a)
        return self._push(-a.value, (a,), lambda adj: (-adj,))

    # ------------------------------------------------------------- elementwise

    def exp(self, a) -> Var:
        a = self._coerce(a)
        value = np.exp(a.value)
        return self._push(value, (a,), lambda adj: (adj * value,))

    def log(self, a) -> Var:
        a = self._coerce(a)
        if np.any(a.value <= 0.0):
            raise DomainError("log", f"non-positive input (min {a.value.min()})")
        return self._push(np.log(a.value), (a,), lambda adj: (adj / a.value,))

    def tanh(self, a) -> Var:
        a = self._coerce(a)
        value = np.tanh(a.value)
        return self._push(value, (a,), lambda adj: (adj * (1.0 - value * value),))

    def softplus(self, a) -> Var:
        # log(1+exp(x)), with the x + log(1+exp(-x)) branch for large x.
        a = self._coerce(a)
        x = a.value
        value = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        sig = _sigmoid(x)
        return self._push(value, (a,), lambda adj: (adj * sig,))

    def sigmoid(self, a) -> Var:
        a = self._coerce(a)
        value = _sigmoid(a.value)
        return self._push(value, (a,), lambda adj: (adj * value * (1.0 - value),))

    def square(self, a) -> Var:
        a = self._coerce(a)
        return self._push(a.value * a.value, (a,),
                          lambda adj: (2.0 * adj * a.value,))

    def sqrt(self, a) -> Var:
        a = self._coerce(a)
        if np.any(a.value <= 0.0):
            raise DomainError("sqrt", f"non-positive input (min {a.value.min()})")
        value = np.sqrt(a.value)
        return self._push(value, (a,), lambda adj: (adj / (2.0 * value),))

    # ------------------------------------------------------------- reductions

    def sum(self, a) -> Var:
        """Sum over the vector (last) axis."""
        a = self._coerce(a)
        if a.value.ndim == 0:
            raise DomainError("sum", "scalar has no vector axis")
        value = a.value.sum(axis=-1)

        def vjp(adj):
            return (np.broadcast_to(adj[..., None], a.shape).copy(),)

        return self._push(value, (a,), vjp)

    def mean_all(self, a) -> Var:
        """Mean over every axis, producing a true scalar (used for batch losses)."""
        a = self._coerce(a)
        n = a.value.size
        value = np.asarray(a.value.mean())

        def vjp(adj):
            return (np.broadcast_to(adj / n, a.shape).copy(),)

        return self._push(value, (a,), vjp)

    def dot(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        value = (a.value * b.value).sum(axis=-1)

        def vjp(adj):
            g = adj[..., None]
            return (_unbroadcast(g * b.value, a.shape),
                    _unbroadcast(g * a.value, b.shape))

        return self._push(value, (a, b), vjp)

    def scale(self, s, v) -> Var:
        """Scalar (or batch of scalars) times vector."""
        s, v = self._coerce(s), self._coerce(v)
        sval = s.value[..., None] if s.value.ndim == v.value.ndim - 1 else s.value
        value = sval * v.value

        def vjp(adj):
            if s.value.ndim == v.value.ndim - 1:
                gs = _unbroadcast((adj * v.value).sum(axis=-1), s.shape)
            else:
                gs = _unbroadcast(adj * v.value, s.shape)
            return gs, _unbroadcast(adj * sval, v.shape)

        return self._push(value, (s, v), vjp)

    # ----------------------------------------------------------- linear maps

    def affine(self, x, matrix, bias=None) -> Var:
        """Constant linear map: x @ matrix.T (+ bias). `matrix`, `bias` are fixed."""
        x = self._coerce(x)
        matrix = _as_array(matrix)
        value = x.value @ matrix.T
        if bias is not None:
            value = value + _as_array(bias)

        def vjp(adj):
            return (adj @ matrix,)

        return self._push(value, (x,), vjp)

    def linear(self, x, weight: Var, bias: Var | None = None) -> Var:
        """Trainable linear layer: x @ W.T + b, with W and b on the tape."""
        x = self._coerce(x)
        value = x.value @ weight.value.T
        if bias is not None:
            value = value + bias.value
        parents = (x, weight) if bias is None else (x, weight, bias)

        def vjp(adj):
            a2 = adj.reshape(-1, adj.shape[-1])
            x2 = x.value.reshape(-1, x.value.shape[-1])
            gw = a2.T @ x2
            gx = adj @ weight.value
            if bias is None:
                return gx, gw
            return gx, gw, _unbroadcast(adj, bias.shape)

        return self._push(value, parents, vjp)

    # ------------------------------------------------------- shape utilities

    def concat(self, parts: Sequence) -> Var:
        """Concatenate along the vector (last) axis."""
        parts = [self._coerce(p) for p in parts]
        value = np.concatenate([p.value for p in parts], axis=-1)
        sizes = [p.value.shape[-1] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def vjp(adj):
            return tuple(adj[..., offsets[i]:offsets[i + 1]]
                         for i in range(len(parts)))

        return self._push(value, tuple(parts), vjp)

    def narrow(self, a, start: int, stop: int) -> Var:
        """Slice [start:stop] of the vector (last) axis."""
        a = self._coerce(a)
        value = a.value[..., start:stop]

        def vjp(adj):
            g = np.zeros(a.shape)
            g[..., start:stop] = adj
            return (g,)

        return self._push(value, (a,), vjp)

    def index(self, a, i: int) -> Var:
        """Select element i of the vector axis, dropping the axis."""
        a = self._coerce(a)
        value = a.value[..., i]

        def vjp(adj):
            g = np.zeros(a.shape)
            g[..., i] = adj
            return (g,)

        return self._push(value, (a,), vjp)

    # --------------------------------------------------------------- composite

    def gaussian_logpdf(self, x, mean, var) -> Var:
        """Diagonal-Gaussian log-density, summed over the vector axis.

        `var` is a shared positive variance: a python float or a scalar Var.
        Returns sum_d [-0.5 log(2 pi var) - (x_d - mean_d)^2 / (2 var)].
        """
        x, mean = self._coerce(x), self._coerce(mean)
        var = self._coerce(var)
        if np.any(var.value <= 0.0):
            raise DomainError("gaussian_logpdf",
                              f"non-positive variance {var.value!r}")
        d = x.value.shape[-1]
        diff = self.sub(x, mean)
        quad = self.sum(self.square(diff))
        inv = self.div(quad, self.mul(2.0, var))
        norm = self.mul(0.5 * d, self.log(self.mul(2.0 * np.pi, var)))
        return self.neg(self.add(norm, inv))

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar loss; returns adjoints per parameter slot.

        Parameter slots are keyed by their lift name (or ``param{i}`` when
        unnamed). The tape must be reset before a second backward pass.
        """
        if loss.tape is not self:
            raise ValueError("loss lives on a different tape")
        if loss.value.ndim != 0:
            raise DomainError("backward",
                              f"loss must be scalar, got shape {loss.value.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed; call reset() first")
        self._consumed = True

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones(())
        for node in reversed(self.nodes[: loss.index + 1]):
            adj = grads[node.index]
            if adj is None or node.vjp is None:
                continue
            for parent, g in zip(node.parents, node.vjp(adj)):
                if grads[parent.index] is None:
                    grads[parent.index] = np.asarray(g, dtype=np.float64).copy()
                else:
                    grads[parent.index] = grads[parent.index] + g

        out: dict[str, np.ndarray] = {}
        for i, p in enumerate(self.params):
            key = p.name if p.name is not None else f"param{i}"
            g = grads[p.index]
            out[key] = np.zeros(p.shape) if g is None else np.asarray(g)
        return out

    def reset(self) -> None:
        """Discard all recorded nodes; the tape may then be reused."""
        self.nodes = []
        self.params = []
        self._consumed = False


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
