"""Cross-modal interaction block.

Produces joint features aligned to the video timeline:

  (a) cross-attention with video as query and text as key/value, then an
      FFN, both with residual + post-norm -> local joint features;
  (b) self-attention over the local features (residual + post-norm)
      -> global joint features;
  (c) the concatenation of local and global halves along the feature axis is
      average-pooled pairwise back to width d, i.e. (local + global) / 2 per
      channel -- the one reading of "concat then average pool" that restores
      the feature width deterministically;
  (d) a final cross-attention with the pooled features as query and the
      encoded video as key/value, residual on the query path by default
      (`residual_from_video` switches it to the value path).

Learnable position tables are added to the query/key inputs of every
attention layer; text padding is masked in step (a), video padding in (b)
and (d).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Ctx, FeedForward, LayerNorm, Module, MultiHeadAttention
from .tensor import Tensor


class CrossModalBlock(Module):
    def __init__(
        self,
        d_model: int,
        heads: int,
        ffn_hidden: int,
        dropout: float,
        drop_path: float,
        rng: np.random.Generator,
        residual_from_video: bool = False,
    ):
        self.drop_path = drop_path
        self.residual_from_video = residual_from_video
        self.text_attn = MultiHeadAttention(d_model, heads, dropout, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_hidden, dropout, rng)
        self.norm2 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads, dropout, rng)
        self.norm3 = LayerNorm(d_model)
        self.video_attn = MultiHeadAttention(d_model, heads, dropout, rng)
        self.norm4 = LayerNorm(d_model)

    def _drop(self, x: Tensor, ctx: Ctx) -> Tensor:
        return T.drop_path(x, self.drop_path, ctx.rng, ctx.training)

    def _global(self, local: Tensor, ctx: Ctx, video_mask, video_pos) -> Tensor:
        """Self-attention sublayer of step (b); isolated so tests can stub it."""
        sa = self.self_attn(local, local, local, ctx, key_mask=video_mask, q_pos=video_pos, k_pos=video_pos)
        return self.norm3(local + self._drop(sa, ctx))

    def __call__(
        self,
        video: Tensor,
        text: Tensor,
        ctx: Ctx,
        video_mask: Optional[np.ndarray] = None,
        text_mask: Optional[np.ndarray] = None,
        video_pos: Optional[Tensor] = None,
        text_pos: Optional[Tensor] = None,
    ) -> Tensor:
        # (a) text -> video cross-attention + FFN
        ca = self.text_attn(video, text, text, ctx, key_mask=text_mask, q_pos=video_pos, k_pos=text_pos)
        local = self.norm1(video + self._drop(ca, ctx))
        local = self.norm2(local + self._drop(self.ffn(local, ctx), ctx))

        # (b) global context over the video timeline
        global_ = self._global(local, ctx, video_mask, video_pos)

        # (c) pairwise average of the concatenated halves
        pooled = (local + global_) * 0.5

        # (d) re-attend into the encoded video
        ca2 = self.video_attn(pooled, video, video, ctx, key_mask=video_mask, q_pos=video_pos, k_pos=video_pos)
        residual = video if self.residual_from_video else pooled
        return self.norm4(residual + self._drop(ca2, ctx))
