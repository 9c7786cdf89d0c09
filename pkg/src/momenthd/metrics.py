"""Moment-retrieval and highlight-detection evaluation metrics.

MR: Recall@1 at IoU 0.5/0.7, mAP at 0.5/0.75 and averaged over the ten-point
sweep 0.5:0.05:0.95. AP uses all-points interpolation (exact area under the
precision envelope), with per-sample APs averaged over the dataset. TP
assignment is greedy in confidence order: a prediction is a TP iff it reaches
the threshold against a not-yet-matched ground-truth moment, taking the
highest-IoU one; a flag switches to optimal (Hungarian) TP assignment.

HD: per-video AP of ranking clips against binary labels, plus HIT@1 (is the
top-scored clip positive). Score ties break by index everywhere.

Predicted spans are clamped to valid intervals (inverted -> zero length)
before any IoU is computed here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import solve_assignment
from .spans import clamp_valid, span_iou_array

SWEEP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


@dataclass
class SamplePrediction:
    """Detached per-sample model output in metric-ready form."""

    qid: str
    spans: np.ndarray  # (L_q, 2) normalized, possibly inverted
    scores: np.ndarray  # (L_q,) foreground probabilities
    saliency: np.ndarray  # (L_v,)


@dataclass
class SampleGroundTruth:
    qid: str
    moments: np.ndarray  # (L_n, 2) normalized, valid
    saliency_labels: np.ndarray  # (L_v,) binary


@dataclass
class MetricsReport:
    r1_at: dict[float, float]
    map_at: dict[float, float]
    map_avg: float
    hd_map: float
    hit_at_1: float
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "r1_at": {str(k): v for k, v in self.r1_at.items()},
            "map_at": {str(k): v for k, v in self.map_at.items()},
            "map_avg": self.map_avg,
            "hd_map": self.hd_map,
            "hit_at_1": self.hit_at_1,
            "per_sample": self.per_sample,
        }


def _ranked_order(scores: np.ndarray) -> np.ndarray:
    """Descending score, ties broken by ascending index."""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores)))


def recall1_sample(spans: np.ndarray, scores: np.ndarray, gt_moments: np.ndarray, thr: float) -> float:
    """1.0 iff the top-ranked span reaches IoU `thr` against some moment."""
    top = clamp_valid(spans)[_ranked_order(scores)[0]]
    return float(span_iou_array(top[None, :], np.asarray(gt_moments)).max() >= thr)


def _tp_flags(spans: np.ndarray, scores: np.ndarray, gt_moments: np.ndarray, thr: float,
              optimal: bool = False) -> np.ndarray:
    """TP/FP flag per prediction, in rank order."""
    order = _ranked_order(scores)
    ranked = clamp_valid(spans)[order]
    gt = np.asarray(gt_moments, dtype=np.float64)
    iou = span_iou_array(ranked[:, None, :], gt[None, :, :])  # (n_pred, n_gt)

    if optimal:
        # maximize the number of above-threshold matches, preferring earlier
        # ranks: solve an assignment on eligibility with small rank penalties
        n_pred, n_gt = iou.shape
        eligible = iou >= thr
        flags = np.zeros(n_pred)
        if eligible.any():
            big = float(n_pred + n_gt + 1)
            cost = np.where(eligible, np.arange(n_pred)[:, None] / big, big * big)
            rows = min(n_pred, n_gt)
            matrix = cost if n_pred <= n_gt else cost.T
            result = solve_assignment(matrix)
            for r, c in result.pairs:
                i, j = (r, c) if n_pred <= n_gt else (c, r)
                if eligible[i, j]:
                    flags[i] = 1.0
        return flags

    flags = np.zeros(len(ranked))
    taken = np.zeros(iou.shape[1], dtype=bool)
    for i in range(len(ranked)):
        candidates = np.where(~taken, iou[i], -1.0)
        j = int(np.argmax(candidates))
        if candidates[j] >= thr:
            flags[i] = 1.0
            taken[j] = True
    return flags


def _interp_ap(tp_flags: np.ndarray, n_positive: int) -> float:
    """All-points interpolated AP from rank-ordered TP flags."""
    if n_positive == 0:
        return 0.0
    if len(tp_flags) == 0:
        return 0.0
    tps = np.cumsum(tp_flags)
    precision = tps / np.arange(1, len(tp_flags) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp_flags > 0].sum() / n_positive)


def average_precision_sample(spans, scores, gt_moments, thr: float, optimal: bool = False) -> float:
    flags = _tp_flags(spans, scores, gt_moments, thr, optimal=optimal)
    return _interp_ap(flags, len(np.asarray(gt_moments)))


def highlight_ap(saliency: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels).astype(int)
    order = _ranked_order(np.asarray(saliency, dtype=np.float64))
    return _interp_ap(labels[order].astype(float), int(labels.sum()))


def hit_at_1(saliency: np.ndarray, labels: np.ndarray) -> float:
    top = _ranked_order(np.asarray(saliency, dtype=np.float64))[0]
    return float(np.asarray(labels).astype(int)[top] == 1)


def evaluate(
    predictions: list[SamplePrediction],
    ground_truth: list[SampleGroundTruth],
    optimal_matching: bool = False,
    warn=None,
) -> MetricsReport:
    """Dataset-level report; samples pair by position. Samples with no
    ground-truth moments (MR) or no positive clip (HD) are skipped for the
    affected metrics, with an optional warning callback."""
    assert len(predictions) == len(ground_truth)
    warn = warn or (lambda msg: None)

    r1 = {0.5: [], 0.7: []}
    ap = {thr: [] for thr in SWEEP_THRESHOLDS}
    hd_aps, hits = [], []
    per_sample = []

    for pred, gt in zip(predictions, ground_truth):
        entry: dict = {"qid": pred.qid}
        if len(gt.moments) == 0:
            warn(f"sample {pred.qid}: no ground-truth moments, skipped for MR")
        else:
            for thr in r1:
                r1[thr].append(recall1_sample(pred.spans, pred.scores, gt.moments, thr))
            for thr in SWEEP_THRESHOLDS:
                ap[thr].append(
                    average_precision_sample(pred.spans, pred.scores, gt.moments, thr, optimal=optimal_matching)
                )
            entry["r1@0.5"], entry["r1@0.7"] = r1[0.5][-1], r1[0.7][-1]
            entry["ap@0.5"] = ap[0.5][-1]

        if int(np.asarray(gt.saliency_labels).sum()) == 0:
            warn(f"sample {pred.qid}: no positive clip, skipped for HD")
        else:
            hd_aps.append(highlight_ap(pred.saliency, gt.saliency_labels))
            hits.append(hit_at_1(pred.saliency, gt.saliency_labels))
            entry["hd_ap"], entry["hit@1"] = hd_aps[-1], hits[-1]
        per_sample.append(entry)

    def avg(xs):
        return float(np.mean(xs)) if xs else 0.0

    map_at = {thr: avg(ap[thr]) for thr in SWEEP_THRESHOLDS}
    return MetricsReport(
        r1_at={thr: avg(v) for thr, v in r1.items()},
        map_at={0.5: map_at[0.5], 0.75: map_at[0.75]},
        map_avg=float(np.mean([map_at[t] for t in SWEEP_THRESHOLDS])),
        hd_map=avg(hd_aps),
        hit_at_1=avg(hits),
        per_sample=per_sample,
    )
