"""Layer building blocks on top of the tensor kernel.

Weights are plain Tensors with ``requires_grad=True``; modules track them by
attribute name so checkpoints and the optimizer can address every parameter
by a stable dotted path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class Ctx:
    """Per-forward-pass state: train/eval mode and the stochastic RNG."""

    training: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


EVAL = Ctx(training=False)


class Module:
    """Minimal container with recursive, insertion-ordered parameter discovery."""

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self.__dict__.get("_params", {}).items():
            out[prefix + name] = p
        for name, mod in self.__dict__.get("_modules", {}).items():
            out.update(mod.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, modules):
        self._items = list(modules)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    """y = x W + b with W drawn from N(0, 1/fan_in) and zero bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"Linear expects width {self.in_dim}, got {x.shape[-1]}")
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    """Linear -> ReLU -> Dropout -> Linear."""

    def __init__(self, dim: int, hidden: int, p_drop: float, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.p_drop = p_drop

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        h = T.relu(self.fc1(x))
        h = T.dropout(h, self.p_drop, ctx.rng, ctx.training)
        return self.fc2(h)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head scale 1/sqrt(d_head).

    Positional terms, when given, are added to the query/key inputs before
    projection but never to values. `key_mask` (True = real token) zeroes
    attention onto padded keys exactly: masked logits are shifted so far
    down that their softmax weight underflows to 0.0.
    """

    def __init__(self, dim: int, heads: int, p_drop: float, rng: np.random.Generator):
        if dim % heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.p_drop = p_drop
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def __call__(
        self,
        q: Tensor,
        k: Tensor,
        v: Tensor,
        ctx: Ctx,
        key_mask: Optional[np.ndarray] = None,
        q_pos: Optional[Tensor] = None,
        k_pos: Optional[Tensor] = None,
    ) -> Tensor:
        lq, lk = q.shape[0], k.shape[0]
        h, dh = self.heads, self.head_dim
        q_in = q + q_pos if q_pos is not None else q
        k_in = k + k_pos if k_pos is not None else k

        def split(x: Tensor, length: int) -> Tensor:
            return T.transpose(T.reshape(x, (length, h, dh)), (1, 0, 2))

        qh = split(self.q_proj(q_in), lq)
        kh = split(self.k_proj(k_in), lk)
        vh = split(self.v_proj(v), lk)

        scores = T.matmul(qh, T.transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(dh))
        if key_mask is not None:
            bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e30)
            scores = scores + Tensor(bias)
        attn = T.softmax(scores, axis=-1)
        attn = T.dropout(attn, self.p_drop, ctx.rng, ctx.training)

        mixed = T.matmul(attn, vh)  # (h, Lq, dh)
        merged = T.reshape(T.transpose(mixed, (1, 0, 2)), (lq, self.dim))
        return self.out_proj(merged)
