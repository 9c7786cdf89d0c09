"""Model configuration with desk-scale-friendly defaults.

The defaults mirror the reference training setup: hidden size 256, one
encoder layer per modality, one cross-modal interaction block, four decoder
layers, ten moment queries, dropout/drop-path 0.1, and extra input dropout
of 0.5 (video) / 0.3 (text) on the projections.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass
class ModelConfig:
    # widths
    d_model: int = 256
    d_video: int = 2816
    d_text: int = 512
    heads: int = 8
    ffn_ratio: int = 4
    # depths
    encoder_layers: int = 1
    fusion_layers: int = 1
    decoder_layers: int = 4
    num_queries: int = 10
    # regularization
    dropout: float = 0.1
    drop_path: float = 0.1
    video_input_dropout: float = 0.5
    text_input_dropout: float = 0.3
    # pooling token mixer
    pool_window: int = 3
    pool_subtract_input: bool = False  # optional input-subtracting mixer variant
    # positions
    max_positions: int = 512
    encoder_positions: bool = False  # positions are attached to attention only by default
    # ablation switches (module-level)
    use_encoder: bool = True
    use_fusion: bool = True
    use_decoder: bool = True
    # alternative residual route in the final fusion cross-attention
    fusion_residual_from_video: bool = False
    # auxiliary decoder-layer losses are off by default
    aux_loss: bool = False
    # weight init seed
    init_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.pool_window % 2 == 0:
            raise ConfigError(f"pool_window must be odd, got {self.pool_window}")
        for name in ("dropout", "drop_path", "video_input_dropout", "text_input_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def tiny_config(**overrides) -> ModelConfig:
    """Small deterministic config used by tests and gradient checks."""
    base = dict(
        d_model=16,
        d_video=12,
        d_text=10,
        heads=2,
        ffn_ratio=2,
        encoder_layers=1,
        fusion_layers=1,
        decoder_layers=1,
        num_queries=3,
        dropout=0.0,
        drop_path=0.0,
        video_input_dropout=0.0,
        text_input_dropout=0.0,
        max_positions=64,
    )
    base.update(overrides)
    return ModelConfig(**base)
