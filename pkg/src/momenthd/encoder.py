"""Per-modality projection and pooling-mixer encoder.

Each modality is first projected into the shared hidden space by a two-layer
FFN with layer normalization (plus a modality-specific input dropout), then
refined by encoder blocks whose token mixer is a parameter-free local average
pool:

    mixed      = Norm(x + Pool(x))
    contextual = Norm(mixed + FFN(mixed))

Both residuals are post-norm. Pooling respects the padding mask, so padded
tokens never leak into their neighbors' means.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Ctx, FeedForward, LayerNorm, Linear, Module, ModuleList
from .tensor import Tensor


class ModalityProjection(Module):
    """Input dropout -> Linear -> ReLU -> Linear -> LayerNorm, raw width -> d."""

    def __init__(self, in_dim: int, d_model: int, input_dropout: float, rng: np.random.Generator):
        self.input_dropout = input_dropout
        self.fc1 = Linear(in_dim, d_model, rng)
        self.fc2 = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)

    def __call__(self, raw: Tensor, ctx: Ctx) -> Tensor:
        h = T.dropout(raw, self.input_dropout, ctx.rng, ctx.training)
        h = self.fc2(T.relu(self.fc1(h)))
        return self.norm(h)


class PoolingEncoderBlock(Module):
    def __init__(
        self,
        d_model: int,
        ffn_hidden: int,
        pool_window: int,
        dropout: float,
        drop_path: float,
        rng: np.random.Generator,
        subtract_input: bool = False,
    ):
        self.pool_window = pool_window
        self.subtract_input = subtract_input
        self.drop_path = drop_path
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_hidden, dropout, rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x: Tensor, ctx: Ctx, mask: Optional[np.ndarray] = None) -> Tensor:
        pooled = T.avg_pool_1d(x, self.pool_window, mask=mask)
        if self.subtract_input:
            pooled = pooled - x
        mixed = self.norm1(x + pooled)
        branch = T.drop_path(self.ffn(mixed, ctx), self.drop_path, ctx.rng, ctx.training)
        return self.norm2(mixed + branch)


class UniModalEncoder(Module):
    """Projection plus a stack of pooling encoder blocks for one modality."""

    def __init__(
        self,
        in_dim: int,
        d_model: int,
        layers: int,
        ffn_hidden: int,
        pool_window: int,
        dropout: float,
        drop_path: float,
        input_dropout: float,
        rng: np.random.Generator,
        subtract_input: bool = False,
    ):
        self.project = ModalityProjection(in_dim, d_model, input_dropout, rng)
        self.blocks = ModuleList(
            PoolingEncoderBlock(d_model, ffn_hidden, pool_window, dropout, drop_path, rng, subtract_input)
            for _ in range(layers)
        )

    def __call__(
        self,
        raw: Tensor,
        ctx: Ctx,
        mask: Optional[np.ndarray] = None,
        skip_blocks: bool = False,
    ) -> Tensor:
        h = self.project(raw, ctx)
        if skip_blocks:
            return h
        for block in self.blocks:
            h = block(h, ctx, mask=mask)
        return h
