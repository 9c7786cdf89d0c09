"""Full model: per-modality encoders, cross-modal fusion, moment decoder, heads.

The forward pass works on a single sample (one video/query pair); batching is
a loop with one tape per pass. Padded inputs are accepted together with
right-aligned padding masks, and masked attention/pooling make the outputs
for the real tokens bit-identical to an unpadded run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .decoder import MomentDecoder, PredictionHeads
from .encoder import UniModalEncoder
from .errors import ConfigError, DataError
from .fusion import CrossModalBlock
from .nn import Ctx, Module, ModuleList
from .tensor import Tensor


@dataclass
class ModelOutput:
    """Per-sample predictions, kept as graph tensors for the loss stack.

    `spans` rows may be ill-ordered (start > end) during training; validity is
    enforced only at metric/export time. `saliency` covers real clips only.
    """

    spans: Tensor  # (L_q, 2) in [0,1]^2
    class_logits: Tensor  # (L_q, 2), column 0 = foreground
    saliency: Tensor  # (L_v,)
    aux: Optional[list] = None  # optional per-decoder-layer (spans, class_logits)

    @property
    def num_queries(self) -> int:
        return self.spans.shape[0]

    def fg_prob(self) -> np.ndarray:
        logits = self.class_logits.data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return (e / e.sum(axis=-1, keepdims=True))[:, 0]

    def spans_array(self) -> np.ndarray:
        return self.spans.data.copy()

    def saliency_array(self) -> np.ndarray:
        return self.saliency.data.copy()


def _prefix_mask(mask: Optional[np.ndarray], length: int, what: str) -> np.ndarray:
    if mask is None:
        return np.ones(length, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        raise DataError(f"{what} mask shape {mask.shape} does not match length {length}")
    n = int(mask.sum())
    if n == 0:
        raise DataError(f"{what} mask has no real tokens")
    if not mask[:n].all():
        raise DataError(f"{what} mask must be a right-padded prefix mask")
    return mask


class MomentHighlightModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        d = config.d_model
        hidden = config.ffn_ratio * d

        self.video_encoder = UniModalEncoder(
            config.d_video, d, config.encoder_layers, hidden, config.pool_window,
            config.dropout, config.drop_path, config.video_input_dropout, rng,
            subtract_input=config.pool_subtract_input,
        )
        self.text_encoder = UniModalEncoder(
            config.d_text, d, config.encoder_layers, hidden, config.pool_window,
            config.dropout, config.drop_path, config.text_input_dropout, rng,
            subtract_input=config.pool_subtract_input,
        )
        self.fusion = ModuleList(
            CrossModalBlock(d, config.heads, hidden, config.dropout, config.drop_path, rng,
                            residual_from_video=config.fusion_residual_from_video)
            for _ in range(config.fusion_layers)
        )
        self.decoder = MomentDecoder(
            d, config.heads, hidden, config.decoder_layers, config.dropout, config.drop_path, rng
        )
        self.heads = PredictionHeads(d, rng)
        self.query_embed = Tensor(rng.normal(0.0, 1.0, (config.num_queries, d)), requires_grad=True)
        self.video_pos = Tensor(rng.normal(0.0, 0.02, (config.max_positions, d)), requires_grad=True)
        self.text_pos = Tensor(rng.normal(0.0, 0.02, (config.max_positions, d)), requires_grad=True)

    def _positions(self, table: Tensor, length: int) -> Tensor:
        if length > self.config.max_positions:
            raise ConfigError(
                f"sequence length {length} exceeds max_positions {self.config.max_positions}"
            )
        return table[np.arange(length)]

    def forward(
        self,
        video: np.ndarray,
        text: np.ndarray,
        ctx: Ctx,
        video_mask: Optional[np.ndarray] = None,
        text_mask: Optional[np.ndarray] = None,
    ) -> ModelOutput:
        video = np.asarray(video, dtype=np.float64)
        text = np.asarray(text, dtype=np.float64)
        if video.ndim != 2 or text.ndim != 2:
            raise DataError(f"expected (L, dim) features, got {video.shape} and {text.shape}")
        if video.shape[1] != self.config.d_video:
            raise ConfigError(f"video width {video.shape[1]} != configured {self.config.d_video}")
        if text.shape[1] != self.config.d_text:
            raise ConfigError(f"text width {text.shape[1]} != configured {self.config.d_text}")

        lv, lt = video.shape[0], text.shape[0]
        v_mask = _prefix_mask(video_mask, lv, "video")
        t_mask = _prefix_mask(text_mask, lt, "text")
        n_real_v = int(v_mask.sum())
        cfg = self.config

        enc_kwargs_v = dict(mask=v_mask, skip_blocks=not cfg.use_encoder)
        enc_kwargs_t = dict(mask=t_mask, skip_blocks=not cfg.use_encoder)
        enc_v = self.video_encoder(Tensor(video), ctx, **enc_kwargs_v)
        enc_t = self.text_encoder(Tensor(text), ctx, **enc_kwargs_t)

        v_pos = self._positions(self.video_pos, lv)
        t_pos = self._positions(self.text_pos, lt)
        if cfg.encoder_positions:
            enc_v = enc_v + v_pos
            enc_t = enc_t + t_pos

        if cfg.use_fusion:
            joint = enc_v
            for block in self.fusion:
                joint = block(joint, enc_t, ctx, video_mask=v_mask, text_mask=t_mask,
                              video_pos=v_pos, text_pos=t_pos)
            memory, memory_mask, memory_pos = joint, v_mask, v_pos
            head_input = joint
        else:
            # fusion ablated: the decoder attends over video and text stacked
            # along time, and saliency reads the video positions
            memory = T.concat([enc_v, enc_t], axis=0)
            memory_mask = np.concatenate([v_mask, t_mask])
            memory_pos = T.concat([v_pos, t_pos], axis=0)
            head_input = enc_v

        if cfg.use_decoder:
            moment_feats, inter = self.decoder(
                self.query_embed, memory, ctx,
                memory_mask=memory_mask, memory_pos=memory_pos,
                return_intermediate=cfg.aux_loss,
            )
        else:
            # decoder ablated: every real clip position becomes a candidate query
            moment_feats = head_input[np.arange(n_real_v)]
            inter = None

        saliency = self.heads.saliency_logits(head_input)[np.arange(n_real_v)]
        spans = self.heads.span_coords(moment_feats)
        class_logits = self.heads.class_logits(moment_feats)

        aux = None
        if inter:
            aux = [(self.heads.span_coords(t), self.heads.class_logits(t)) for t in inter]
        return ModelOutput(spans=spans, class_logits=class_logits, saliency=saliency, aux=aux)
