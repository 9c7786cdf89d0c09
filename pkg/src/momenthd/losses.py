"""Hungarian-matched loss stack.

Components (sums over clips/queries/pairs, as the equations are written;
batch reduction is the mean over samples and lives in the trainer):

- saliency BCE: per-clip binary cross-entropy on sigmoid(logit), positives
  weighted by ``w_saliency``, computed in log-sigmoid form for stability;
- saliency rank: two hinge terms with margin ``margin`` -- (highest, lowest)
  predicted scores among in-moment clips, and one sampled in-moment vs one
  sampled out-of-moment clip (the second term is skipped when every clip is
  inside a moment);
- span: per matched pair, ``w_l1 * L1 + w_iou * (1 - gIoU)``, weights inside
  the sum;
- classification: weighted BCE over all queries, foreground iff matched,
  positives weighted by ``w_fg``.

Total = bce_weight * L_bce + rank_weight * L_rank + L_span + cls_weight * L_cls.
The assignment itself is treated as a constant per step: no gradient flows
through the matching.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import tensor as T
from .matching import MatchResult, hungarian_match
from .model import ModelOutput
from .tensor import Tensor

_EPS = 1e-12  # guards degenerate unions/hulls in the differentiable gIoU path


@dataclass
class LossWeights:
    bce_weight: float = 1.0
    rank_weight: float = 0.1
    l1_weight: float = 10.0
    iou_weight: float = 1.0
    cls_weight: float = 4.0
    w_saliency: float = 5.0  # positive-clip weight in the saliency BCE
    w_fg: float = 10.0  # foreground weight in the classification BCE
    margin: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossToggles:
    """Per-term switches mirroring the loss-ablation study rows."""

    cls: bool = True
    l1: bool = True
    iou: bool = True
    bce: bool = True
    rank: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    """Scalar components for logging. ``l_span_l1`` and ``l_span_iou`` carry
    their weights already (they sit inside the span sum); ``l_bce``,
    ``l_rank`` and ``l_cls`` are raw and weighted only in ``total``."""

    l_bce: float
    l_rank: float
    l_span_l1: float
    l_span_iou: float
    l_cls: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def in_moment_mask(moments: np.ndarray, num_clips: int) -> np.ndarray:
    """True for clips whose midpoint falls inside any ground-truth moment."""
    moments = np.asarray(moments, dtype=np.float64)
    mids = (np.arange(num_clips) + 0.5) / num_clips
    inside = (mids[:, None] >= moments[None, :, 0]) & (mids[:, None] <= moments[None, :, 1])
    return inside.any(axis=1)


def sample_rank_pair(in_mask: np.ndarray, rng: np.random.Generator) -> Optional[tuple[int, int]]:
    """One uniformly sampled (in-moment, out-of-moment) clip index pair, or
    None when no out-of-moment clip exists."""
    in_idx = np.flatnonzero(in_mask)
    out_idx = np.flatnonzero(~in_mask)
    if in_idx.size == 0 or out_idx.size == 0:
        return None
    return int(rng.choice(in_idx)), int(rng.choice(out_idx))


def giou_graph(pred_spans: Tensor, gt_moments: np.ndarray) -> Tensor:
    """Differentiable gIoU between prediction rows and aligned ground-truth
    rows. Inverted predictions count as zero-length intervals (zero
    subgradient through their length), hull spans min to max endpoint."""
    gt = np.asarray(gt_moments, dtype=np.float64)
    s_p = pred_spans[:, 0]
    e_p = pred_spans[:, 1]
    s_g, e_g = Tensor(gt[:, 0]), Tensor(gt[:, 1])

    len_p = T.relu(e_p - s_p)
    len_g = Tensor(np.maximum(gt[:, 1] - gt[:, 0], 0.0))
    inter = T.relu(T.minimum(e_p, e_g) - T.maximum(s_p, s_g))
    union = len_p + len_g - inter
    iou = inter / (union + _EPS)
    lo = T.minimum(T.minimum(s_p, e_p), s_g)
    hi = T.maximum(T.maximum(s_p, e_p), e_g)
    hull = hi - lo
    return iou - (hull - union) / (hull + _EPS)


def saliency_bce(saliency_logits: Tensor, labels: np.ndarray, w_saliency: float) -> Tensor:
    y = np.asarray(labels, dtype=np.float64)
    pos = T.softplus(-saliency_logits) * Tensor(w_saliency * y)
    neg = T.softplus(saliency_logits) * Tensor(1.0 - y)
    return T.tsum(pos + neg)


def saliency_rank(
    saliency_logits: Tensor,
    in_mask: np.ndarray,
    margin: float,
    rank_pair: Optional[tuple[int, int]],
) -> Tensor:
    in_idx = np.flatnonzero(in_mask)
    scores = saliency_logits.data
    hi = int(in_idx[np.argmax(scores[in_idx])])
    lo = int(in_idx[np.argmin(scores[in_idx])])
    loss = T.relu(saliency_logits[lo] - saliency_logits[hi] + margin)
    if rank_pair is not None:
        i_in, i_out = rank_pair
        loss = loss + T.relu(saliency_logits[i_out] - saliency_logits[i_in] + margin)
    return loss


def moment_terms(
    spans: Tensor,
    class_logits: Tensor,
    gt_moments: np.ndarray,
    match: MatchResult,
    weights: LossWeights,
    toggles: LossToggles,
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (weighted L1 sum, weighted 1-gIoU sum, raw classification BCE)."""
    pred_idx = match.prediction_indices
    gt_idx = match.gt_indices
    gt = np.asarray(gt_moments, dtype=np.float64)[gt_idx]
    matched = spans[pred_idx]

    zero = Tensor(0.0)
    l1 = T.tsum(T.absolute(matched - Tensor(gt))) * weights.l1_weight if toggles.l1 else zero
    if toggles.iou:
        iou_term = T.tsum(1.0 - giou_graph(matched, gt)) * weights.iou_weight
    else:
        iou_term = zero

    if toggles.cls:
        z = np.zeros(spans.shape[0])
        z[pred_idx] = 1.0
        ls = T.log_softmax(class_logits, axis=-1)
        fg = ls[:, 0] * Tensor(weights.w_fg * z)
        bg = ls[:, 1] * Tensor(1.0 - z)
        cls = -T.tsum(fg + bg)
    else:
        cls = zero
    return l1, iou_term, cls


def compute_loss(
    output: ModelOutput,
    gt_moments: np.ndarray,
    saliency_labels: np.ndarray,
    weights: LossWeights,
    toggles: LossToggles,
    rank_pair: Optional[tuple[int, int]] = None,
    match: Optional[MatchResult] = None,
) -> tuple[Tensor, LossBreakdown, MatchResult]:
    """Full per-sample loss. `rank_pair` must be drawn by the caller (seeded
    per step) so the loss is a deterministic function of its inputs; `match`
    may be passed in to freeze the assignment, e.g. for gradient checks."""
    zero = Tensor(0.0)
    if match is None:
        match = hungarian_match(
            output.spans_array(), output.fg_prob(), gt_moments,
            w_cls=weights.cls_weight, w_l1=weights.l1_weight, w_iou=weights.iou_weight,
        )

    in_mask = in_moment_mask(gt_moments, output.saliency.shape[0])
    l_bce = saliency_bce(output.saliency, saliency_labels, weights.w_saliency) if toggles.bce else zero
    if toggles.rank and in_mask.any():
        l_rank = saliency_rank(output.saliency, in_mask, weights.margin, rank_pair)
    else:
        l_rank = zero
    l1, iou_term, cls = moment_terms(output.spans, output.class_logits, gt_moments, match, weights, toggles)

    total = (
        l_bce * weights.bce_weight
        + l_rank * weights.rank_weight
        + l1
        + iou_term
        + cls * weights.cls_weight
    )

    breakdown = LossBreakdown(
        l_bce=l_bce.item(),
        l_rank=l_rank.item(),
        l_span_l1=l1.item(),
        l_span_iou=iou_term.item(),
        l_cls=cls.item(),
        total=total.item(),
    )

    if output.aux:
        # auxiliary decoder-layer supervision: moment terms only, each layer
        # matched independently; added to the optimization target but not to
        # the logged breakdown (whose total stays the weighted component sum)
        for aux_spans, aux_logits in output.aux:
            aux_fg = _softmax_col0(aux_logits.data)
            aux_match = hungarian_match(
                aux_spans.data, aux_fg, gt_moments,
                w_cls=weights.cls_weight, w_l1=weights.l1_weight, w_iou=weights.iou_weight,
            )
            a_l1, a_iou, a_cls = moment_terms(aux_spans, aux_logits, gt_moments, aux_match, weights, toggles)
            total = total + a_l1 + a_iou + a_cls * weights.cls_weight

    return total, breakdown, match


def _softmax_col0(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True))[:, 0]
