"""Exact minimum-cost bipartite assignment between predictions and ground truth.

The matching cost follows the DETR-family convention, reusing the loss
hyperparameters:

    cost(i, j) = -w_cls * fg_prob_i
                 + w_l1 * ||span_i - moment_j||_1
                 + w_iou * (1 - gIoU(span_i, moment_j))

Gradients never flow through the assignment; it is recomputed from detached
numpy values each step and then held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .spans import span_giou_array


@dataclass
class MatchResult:
    """Optimal injective assignment: one (prediction, ground-truth) pair per
    ground-truth moment, plus its total cost."""

    pairs: list[tuple[int, int]]
    total_cost: float

    @property
    def prediction_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=int)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=int)


def solve_assignment(cost: np.ndarray) -> MatchResult:
    """Kuhn-Munkres with potentials, O(n^2 m); assigns every row of `cost`.

    Requires rows <= cols. Returns exact optimum (ties broken
    deterministically by scan order).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DataError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n > m:
        raise DataError(f"cost matrix needs rows <= cols, got {n}x{m}")

    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    assigned = [0] * (m + 1)  # assigned[j] = 1-based row matched to column j
    way = [0] * (m + 1)

    for i in range(1, n + 1):
        assigned[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = assigned[j0]
            delta = INF
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[assigned[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if assigned[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            assigned[j0] = assigned[j1]
            j0 = j1

    pairs = sorted((assigned[j] - 1, j - 1) for j in range(1, m + 1) if assigned[j] != 0)
    total = float(sum(cost[r, c] for r, c in pairs))
    return MatchResult(pairs=pairs, total_cost=total)


def match_cost_matrix(
    pred_spans: np.ndarray,
    fg_prob: np.ndarray,
    gt_moments: np.ndarray,
    w_cls: float,
    w_l1: float,
    w_iou: float,
) -> np.ndarray:
    """(L_q, L_n) cost matrix; detached numpy inputs only."""
    pred = np.asarray(pred_spans, dtype=np.float64)
    gt = np.asarray(gt_moments, dtype=np.float64)
    l1 = np.abs(pred[:, None, :] - gt[None, :, :]).sum(axis=-1)
    giou = span_giou_array(pred[:, None, :], gt[None, :, :])
    return -w_cls * np.asarray(fg_prob)[:, None] + w_l1 * l1 + w_iou * (1.0 - giou)


def hungarian_match(
    pred_spans: np.ndarray,
    fg_prob: np.ndarray,
    gt_moments: np.ndarray,
    w_cls: float = 4.0,
    w_l1: float = 10.0,
    w_iou: float = 1.0,
) -> MatchResult:
    """Optimal (prediction, ground truth) matching minimizing the DETR cost."""
    gt_moments = np.asarray(gt_moments, dtype=np.float64)
    n_gt = gt_moments.shape[0]
    n_pred = np.asarray(pred_spans).shape[0]
    if n_gt > n_pred:
        raise DataError(f"{n_gt} ground-truth moments exceed {n_pred} prediction slots")
    cost = match_cost_matrix(pred_spans, fg_prob, gt_moments, w_cls, w_l1, w_iou)
    # assign every ground-truth moment: solve over the transposed matrix
    result = solve_assignment(cost.T)
    pairs = sorted((pred_i, gt_j) for gt_j, pred_i in result.pairs)
    return MatchResult(pairs=pairs, total_cost=result.total_cost)
