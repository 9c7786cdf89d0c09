"""Transformer decoder over learnable moment queries, plus prediction heads."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Ctx, FeedForward, LayerNorm, Linear, Module, ModuleList, MultiHeadAttention
from .tensor import Tensor


class DecoderLayer(Module):
    """Self-attention over queries, cross-attention into the joint features,
    FFN; all residuals post-norm.

    Query embeddings act purely as positional terms (added to attention
    queries/keys, never to values), so the decoded content stream starts at
    zero and permuting the embeddings permutes the outputs identically.
    """

    def __init__(self, d_model: int, heads: int, ffn_hidden: int, dropout: float, drop_path: float, rng):
        self.drop_path = drop_path
        self.self_attn = MultiHeadAttention(d_model, heads, dropout, rng)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads, dropout, rng)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_hidden, dropout, rng)
        self.norm3 = LayerNorm(d_model)

    def _drop(self, x: Tensor, ctx: Ctx) -> Tensor:
        return T.drop_path(x, self.drop_path, ctx.rng, ctx.training)

    def __call__(
        self,
        tgt: Tensor,
        memory: Tensor,
        query_pos: Tensor,
        ctx: Ctx,
        memory_mask: Optional[np.ndarray] = None,
        memory_pos: Optional[Tensor] = None,
    ) -> Tensor:
        sa = self.self_attn(tgt, tgt, tgt, ctx, q_pos=query_pos, k_pos=query_pos)
        tgt = self.norm1(tgt + self._drop(sa, ctx))
        ca = self.cross_attn(tgt, memory, memory, ctx, key_mask=memory_mask, q_pos=query_pos, k_pos=memory_pos)
        tgt = self.norm2(tgt + self._drop(ca, ctx))
        return self.norm3(tgt + self._drop(self.ffn(tgt, ctx), ctx))


class MomentDecoder(Module):
    def __init__(self, d_model: int, heads: int, ffn_hidden: int, layers: int, dropout: float, drop_path: float, rng):
        self.layers = ModuleList(
            DecoderLayer(d_model, heads, ffn_hidden, dropout, drop_path, rng) for _ in range(layers)
        )

    def __call__(
        self,
        query_embed: Tensor,
        memory: Tensor,
        ctx: Ctx,
        memory_mask: Optional[np.ndarray] = None,
        memory_pos: Optional[Tensor] = None,
        return_intermediate: bool = False,
    ):
        tgt = Tensor(np.zeros(query_embed.shape))
        intermediate = []
        for layer in self.layers:
            tgt = layer(tgt, memory, query_embed, ctx, memory_mask=memory_mask, memory_pos=memory_pos)
            if return_intermediate:
                intermediate.append(tgt)
        return (tgt, intermediate) if return_intermediate else (tgt, None)


class PredictionHeads(Module):
    """Independent linear heads.

    - saliency: one unbounded logit per clip from the joint features
      (sigmoid lives inside the BCE loss, not here);
    - spans: sigmoid(linear) -> (start, end) in [0, 1]^2 per query;
    - classification: two logits per query, softmaxed to
      (foreground, background) probabilities.
    """

    def __init__(self, d_model: int, rng):
        self.saliency = Linear(d_model, 1, rng)
        self.span = Linear(d_model, 2, rng)
        self.classify = Linear(d_model, 2, rng)

    def saliency_logits(self, joint: Tensor) -> Tensor:
        return T.reshape(self.saliency(joint), (joint.shape[0],))

    def span_coords(self, moment_feats: Tensor) -> Tensor:
        return T.sigmoid(self.span(moment_feats))

    def class_logits(self, moment_feats: Tensor) -> Tensor:
        return self.classify(moment_feats)
