"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations record their backward rules on an explicit :class:`Tape` in
execution order; ``Tape.backward`` replays the records once, in reverse.
Only the operation set the model actually needs is implemented; there is
no broadcasting beyond what those operations use.

Training and gradient checking run in float64. float32 exists only as a
storage dtype for feature files and inference snapshots (see data module);
all arithmetic here promotes to float64.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

# Debug-mode NaN/Inf detection. Off by default: every op pays an extra pass
# over its output when enabled.
CHECK_FINITE = False

_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Ordered record of backward rules for one forward pass.

    A tape must never be shared between threads, and ``backward`` may be
    called at most once. Use as a context manager::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self._records: list = []
        self._spent = False
        self._outer: Optional[Tape] = None

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> bool:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        if self._spent:
            raise ContractError("tape already back-propagated; build a fresh tape")
        if not self._records:
            raise ContractError("tape is empty; nothing was recorded")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for record in reversed(self._records):
            record()


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


class Tensor:
    """A row-major float64 array plus optional gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # sugar; the module-level functions are the real implementations
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _record(out: Tensor, op: str, *pairs) -> Tensor:
    """Attach backward rules `pairs` of (input, grad_fn) to the active tape."""
    _check_finite(out.data, op)
    tape = _ACTIVE_TAPE
    if tape is None:
        return out
    live = [(t, fn) for t, fn in pairs if t.requires_grad]
    if not live:
        return out
    out.requires_grad = True

    def backward():
        g = out.grad
        if g is None:
            return
        for t, fn in live:
            piece = fn(g)
            t.grad = piece if t.grad is None else t.grad + piece

    tape._records.append(backward)
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(
        out,
        "add",
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(
        out,
        "sub",
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        "mul",
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    return _record(
        out,
        "div",
        (a, lambda g: _unbroadcast(g / b.data, a.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, "relu", (x, lambda g: g * (x.data > 0.0)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # stable in both tails
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s)
    return _record(out, "sigmoid", (x, lambda g: g * s * (1.0 - s)))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed without overflow; backward is sigmoid(x)."""
    x = as_tensor(x)
    d = x.data
    out = Tensor(np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))))
    sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _record(out, "softplus", (x, lambda g: g * sig))


def log(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    return _record(out, "log", (x, lambda g: g / x.data))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    return _record(out, "exp", (x, lambda g: g * out.data))


def absolute(x) -> Tensor:
    """|x|; subgradient 0 at the origin."""
    x = as_tensor(x)
    out = Tensor(np.abs(x.data))
    return _record(out, "abs", (x, lambda g: g * np.sign(x.data)))


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to `a` (documented subgradient)."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    out = Tensor(np.where(pick_a, a.data, b.data))
    return _record(
        out,
        "maximum",
        (a, lambda g: _unbroadcast(g * pick_a, a.shape)),
        (b, lambda g: _unbroadcast(g * ~pick_a, b.shape)),
    )


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to `a`."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    out = Tensor(np.where(pick_a, a.data, b.data))
    return _record(
        out,
        "minimum",
        (a, lambda g: _unbroadcast(g * pick_a, a.shape)),
        (b, lambda g: _unbroadcast(g * ~pick_a, b.shape)),
    )


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy() if np.ndim(g) == 0 else np.full(x.shape, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, x.shape).copy()

    return _record(out, "sum", (x, back))


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# structural operations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; supports stacked operands with identical leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    return _record(
        out,
        "matmul",
        (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)),
        (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)),
    )


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, "reshape", (x, lambda g: g.reshape(x.shape)))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record(out, "transpose", (x, lambda g: g.transpose(inverse)))


def take(x, key) -> Tensor:
    """Numpy-style indexing; backward scatters with duplicate accumulation."""
    x = as_tensor(x)
    out = Tensor(x.data[key])

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return gx

    return _record(out, "take", (x, back))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_back(i):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return back

    return _record(out, "concat", *[(t, make_back(i)) for i, t in enumerate(tensors)])


# ---------------------------------------------------------------------------
# neural-net primitives
# ---------------------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; rows sum to 1."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _record(out, "softmax", (x, back))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def back(g):
        return g - np.exp(y) * g.sum(axis=axis, keepdims=True)

    return _record(out, "log_softmax", (x, back))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(gamma.data * xhat + beta.data)

    def back_x(g):
        gy = g * gamma.data
        return inv * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        )

    def back_gamma(g):
        return _unbroadcast(g * xhat, gamma.shape)

    def back_beta(g):
        return _unbroadcast(g, beta.shape)

    return _record(out, "layer_norm", (x, back_x), (gamma, back_gamma), (beta, back_beta))


def avg_pool_1d(x, window: int, stride: int = 1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Count-normalized sliding mean over axis 0 of an (L, d) tensor.

    Token i receives the mean of the real tokens in its centered window; the
    divisor is the number of in-range (and unmasked) neighbors, so edges are
    not biased by zero padding. Output length equals input length.

    `mask` marks real tokens (True); masked positions are excluded from every
    window and pass through unchanged themselves.
    """
    if window % 2 == 0:
        raise ConfigError(f"pooling window must be odd, got {window}")
    if stride != 1:
        raise ConfigError(f"only stride 1 is supported, got {stride}")
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"avg_pool_1d expects (L, d), got {x.shape}")
    length = x.shape[0]
    half = window // 2
    if mask is None:
        valid = np.ones(length, dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != (length,):
            raise ShapeError(f"mask shape {valid.shape} does not match length {length}")

    # (L, L) averaging matrix; tiny L makes the dense form the simple choice
    averager = np.zeros((length, length))
    for i in range(length):
        if not valid[i]:
            averager[i, i] = 1.0
            continue
        lo, hi = max(0, i - half), min(length, i + half + 1)
        cols = [j for j in range(lo, hi) if valid[j]]
        averager[i, cols] = 1.0 / len(cols)

    out = Tensor(averager @ x.data)
    return _record(out, "avg_pool_1d", (x, lambda g: averager.T @ g))


def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); exact identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep)
    return _record(out, "dropout", (x, lambda g: g * keep))


def drop_path(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Stochastic depth: zero the whole branch with probability p (training only)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"drop-path rate must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    scale = 0.0 if rng.random() < p else 1.0 / (1.0 - p)
    out = Tensor(x.data * scale)
    return _record(out, "drop_path", (x, lambda g: g * scale))


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    """Explicit finiteness assertion, independent of the CHECK_FINITE flag."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite values in {what}")
    return x
