"""Optimization loop, gradient-check harness, and checkpointing.

Training is deterministic: the batch schedule and every stochastic draw
(dropout, drop-path, rank-loss clip sampling) at step t come from a
generator seeded with (seed, t), so a run is a pure function of
(seed, config, data) and resuming from a checkpoint reproduces the
uninterrupted trajectory exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import AnnotatedSample, tensor_from_bytes, tensor_to_bytes
from .errors import ConfigError, DataError, NumericError
from .losses import LossBreakdown, LossToggles, LossWeights, compute_loss, in_moment_mask, sample_rank_pair
from .metrics import MetricsReport, SampleGroundTruth, SamplePrediction, evaluate
from .model import MomentHighlightModel, ModelOutput
from .nn import Ctx
from .tensor import Tape, Tensor


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    num_steps: int = 200
    seed: int = 0
    clip_grad_norm: Optional[float] = None
    max_text_len: Optional[int] = None
    warmup_steps: int = 0  # linear warmup when > 0; constant lr otherwise
    toggles: LossToggles = field(default_factory=LossToggles)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("toggles"), dict):
            d["toggles"] = LossToggles(**d["toggles"])
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class AdamW:
    """Adaptive moments with decoupled weight decay.

    The decay term multiplies the weight directly and never touches the
    gradient, so loss gradients are identical for any weight_decay value.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        lr = self.lr * lr_scale
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data


def _clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale


class Trainer:
    def __init__(self, model: MomentHighlightModel, samples: list[AnnotatedSample], cfg: TrainConfig):
        if not samples:
            raise DataError("empty training set")
        self.model = model
        self.samples = samples
        self.cfg = cfg
        self.optimizer = AdamW(model.named_parameters(), cfg.lr, cfg.weight_decay)
        self.step_count = 0
        self.history: list[LossBreakdown] = []

    def _batch_indices(self, step: int) -> np.ndarray:
        rng = np.random.default_rng([self.cfg.seed, step, 0])
        n = len(self.samples)
        if n >= self.cfg.batch_size:
            return rng.choice(n, size=self.cfg.batch_size, replace=False)
        return rng.choice(n, size=self.cfg.batch_size, replace=True)

    def step(self) -> LossBreakdown:
        cfg = self.cfg
        t = self.step_count
        rng = np.random.default_rng([cfg.seed, t, 1])
        ctx = Ctx(training=True, rng=rng)
        batch = [self.samples[i] for i in self._batch_indices(t)]

        parts = []
        with Tape() as tape:
            total = None
            for s in batch:
                out = self.model.forward(
                    s.video_features, _truncate(s.text_features, cfg.max_text_len), ctx
                )
                mask = in_moment_mask(s.gt.moments, out.saliency.shape[0])
                pair = sample_rank_pair(mask, rng)
                loss, bd, _ = compute_loss(
                    out, s.gt.moments, s.gt.saliency_labels, cfg.weights, cfg.toggles, rank_pair=pair
                )
                parts.append(bd)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))

            mean_bd = _mean_breakdown(parts)
            if not np.isfinite(mean_bd.total):
                raise NumericError(f"non-finite loss at step {t}: {mean_bd.to_dict()}")
            tape.backward(total)

        if cfg.clip_grad_norm is not None:
            _clip_gradients(self.optimizer.params, cfg.clip_grad_norm)
        lr_scale = 1.0
        if cfg.warmup_steps > 0 and t < cfg.warmup_steps:
            lr_scale = (t + 1) / cfg.warmup_steps
        self.optimizer.step(lr_scale=lr_scale)
        self.model.zero_grad()

        self.step_count += 1
        self.history.append(mean_bd)
        return mean_bd

    def train(self, num_steps: Optional[int] = None,
              on_step: Optional[Callable[[int, LossBreakdown], None]] = None) -> list[LossBreakdown]:
        steps = self.cfg.num_steps if num_steps is None else num_steps
        for _ in range(steps):
            bd = self.step()
            if on_step is not None:
                on_step(self.step_count, bd)
        return self.history


def _truncate(text: np.ndarray, max_len: Optional[int]) -> np.ndarray:
    return text if max_len is None else text[:max_len]


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    return LossBreakdown(
        **{k: float(np.mean([getattr(p, k) for p in parts]))
           for k in ("l_bce", "l_rank", "l_span_l1", "l_span_iou", "l_cls", "total")}
    )


# ---------------------------------------------------------------------------
# prediction / evaluation helpers
# ---------------------------------------------------------------------------


def predict_sample(model: MomentHighlightModel, sample: AnnotatedSample,
                   max_text_len: Optional[int] = None) -> SamplePrediction:
    out: ModelOutput = model.forward(
        sample.video_features, _truncate(sample.text_features, max_text_len), Ctx(training=False)
    )
    return SamplePrediction(
        qid=sample.qid,
        spans=out.spans_array(),
        scores=out.fg_prob(),
        saliency=out.saliency_array(),
    )


def evaluate_model(model: MomentHighlightModel, samples: list[AnnotatedSample],
                   max_text_len: Optional[int] = None, warn=None) -> MetricsReport:
    preds = [predict_sample(model, s, max_text_len) for s in samples]
    gts = [SampleGroundTruth(qid=s.qid, moments=s.gt.moments, saliency_labels=s.gt.saliency_labels)
           for s in samples]
    return evaluate(preds, gts, warn=warn)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: Optional[GradCheckEntry]
    entries: list[GradCheckEntry]

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


def grad_check(
    model: MomentHighlightModel,
    samples: list[AnnotatedSample],
    weights: LossWeights,
    toggles: LossToggles,
    n_params: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    param_filter: Optional[Callable[[str], bool]] = None,
) -> GradCheckReport:
    """Analytic gradients of the total loss vs central finite differences.

    Dropout/drop-path are disabled (eval-mode forward), the bipartite
    matching and rank-loss clip pair are computed once and held fixed, so
    the loss is a smooth deterministic function of the weights almost
    everywhere. Relative error uses max(|analytic|, |numeric|) as the
    denominator; entries where both are below 1e-6 compare absolutely.
    """
    ctx = Ctx(training=False)
    rng = np.random.default_rng(seed)

    # freeze matching and rank pairs at the current weights
    frozen = []
    for s in samples:
        out = model.forward(s.video_features, s.text_features, ctx)
        mask = in_moment_mask(s.gt.moments, out.saliency.shape[0])
        pair = sample_rank_pair(mask, rng)
        _, _, match = compute_loss(out, s.gt.moments, s.gt.saliency_labels, weights, toggles, rank_pair=pair)
        frozen.append((pair, match))

    def total_loss() -> Tensor:
        total = None
        for s, (pair, match) in zip(samples, frozen):
            out = model.forward(s.video_features, s.text_features, ctx)
            loss, _, _ = compute_loss(
                out, s.gt.moments, s.gt.saliency_labels, weights, toggles, rank_pair=pair, match=match
            )
            total = loss if total is None else total + loss
        return total * (1.0 / len(samples))

    params = {k: v for k, v in model.named_parameters().items()
              if param_filter is None or param_filter(k)}
    if not params:
        raise ConfigError("param_filter excluded every parameter")

    model.zero_grad()
    with Tape() as tape:
        loss = total_loss()
        tape.backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    model.zero_grad()

    flat = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if len(flat) > n_params:
        picks = [flat[i] for i in rng.choice(len(flat), size=n_params, replace=False)]
    else:
        picks = flat

    entries = []
    for name, idx in picks:
        p = params[name]
        original = p.data.flat[idx]
        p.data.flat[idx] = original + h
        up = total_loss().item()
        p.data.flat[idx] = original - h
        down = total_loss().item()
        p.data.flat[idx] = original
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[name].flat[idx])
        denom = max(abs(a), abs(numeric))
        err = abs(a - numeric) if denom < 1e-6 else abs(a - numeric) / denom
        entries.append(GradCheckEntry(param=name, index=idx, analytic=a, numeric=numeric, rel_err=err))

    worst = max(entries, key=lambda e: e.rel_err)
    return GradCheckReport(max_rel_err=worst.rel_err, worst=worst, entries=entries)


# ---------------------------------------------------------------------------
# checkpoints: FPK1 blobs behind a JSON manifest in one container file
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FPKC"
_CKPT_VERSION = 1


def save_checkpoint(path, model: MomentHighlightModel, optimizer: Optional[AdamW] = None,
                    step: int = 0, train_config: Optional[TrainConfig] = None) -> None:
    tensors: list[tuple[str, str, np.ndarray]] = []
    for name, p in model.named_parameters().items():
        tensors.append((name, "param", p.data))
    if optimizer is not None:
        for name in optimizer.params:
            tensors.append((name, "adam_m", optimizer.m[name]))
            tensors.append((name, "adam_v", optimizer.v[name]))

    blobs = [tensor_to_bytes(arr) for _, _, arr in tensors]
    offsets = np.cumsum([0] + [len(b) for b in blobs])
    manifest = {
        "version": _CKPT_VERSION,
        "step": step,
        "model_config": model.config.to_dict(),
        "config_hash": model.config.content_hash(),
        "optimizer": None if optimizer is None else {
            "t": optimizer.t, "lr": optimizer.lr, "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps,
        },
        "train_config": None if train_config is None else train_config.to_dict(),
        "tensors": [
            {"name": name, "role": role, "offset": int(offsets[i]), "length": len(blobs[i])}
            for i, (name, role, _) in enumerate(tensors)
        ],
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_manifest(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:4] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint container (magic {blob[:4]!r})")
    version, manifest_len = struct.unpack_from("<II", blob, 4)
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(blob[12: 12 + manifest_len])


def load_checkpoint(path, model: MomentHighlightModel,
                    optimizer: Optional[AdamW] = None) -> dict:
    """Restore weights (and optimizer moments) in place; returns the manifest.

    The stored config hash must match the live model's config exactly.
    """
    blob = Path(path).read_bytes()
    manifest = read_checkpoint_manifest(path)
    if manifest["config_hash"] != model.config.content_hash():
        raise ConfigError(
            "checkpoint was written for a different model configuration "
            f"(hash {manifest['config_hash'][:12]} != {model.config.content_hash()[:12]})"
        )
    _, manifest_len = struct.unpack_from("<II", blob, 4)
    base = 12 + manifest_len

    params = model.named_parameters()
    for entry in manifest["tensors"]:
        raw = blob[base + entry["offset"]: base + entry["offset"] + entry["length"]]
        arr = tensor_from_bytes(raw, what=f"{path}:{entry['name']}")
        if entry["role"] == "param":
            if entry["name"] not in params:
                raise ConfigError(f"checkpoint parameter {entry['name']} not in model")
            target = params[entry["name"]]
            if target.data.shape != arr.shape:
                raise ConfigError(
                    f"shape mismatch for {entry['name']}: {arr.shape} vs {target.data.shape}"
                )
            target.data[...] = arr
        elif optimizer is not None and entry["role"] in ("adam_m", "adam_v"):
            store = optimizer.m if entry["role"] == "adam_m" else optimizer.v
            store[entry["name"]][...] = arr
    if optimizer is not None and manifest.get("optimizer"):
        optimizer.t = int(manifest["optimizer"]["t"])
    return manifest
