"""Interval IoU / generalized IoU on normalized (start, end) spans.

Conventions (documented, shared by matching and metrics):
- an inverted or empty interval (start >= end) has length 0;
- the enclosing hull always runs from the minimum to the maximum endpoint,
  including endpoints of inverted intervals;
- IoU of two zero-length spans is 0; gIoU of a degenerate (zero-length)
  hull is 0.
"""

from __future__ import annotations

import numpy as np


def span_iou(a, b) -> float:
    """Intersection over union of two spans; 0 when disjoint or degenerate."""
    return float(span_iou_array(np.asarray(a, float), np.asarray(b, float)))


def span_giou(a, b) -> float:
    """IoU minus the hull fraction not covered by the union; range (-1, 1]."""
    return float(span_giou_array(np.asarray(a, float), np.asarray(b, float)))


def span_iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized IoU over trailing (start, end) pairs (broadcastable)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    len_a = np.maximum(a[..., 1] - a[..., 0], 0.0)
    len_b = np.maximum(b[..., 1] - b[..., 0], 0.0)
    inter = np.maximum(np.minimum(a[..., 1], b[..., 1]) - np.maximum(a[..., 0], b[..., 0]), 0.0)
    union = len_a + len_b - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def span_giou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iou = span_iou_array(a, b)
    len_a = np.maximum(a[..., 1] - a[..., 0], 0.0)
    len_b = np.maximum(b[..., 1] - b[..., 0], 0.0)
    inter = np.maximum(np.minimum(a[..., 1], b[..., 1]) - np.maximum(a[..., 0], b[..., 0]), 0.0)
    union = len_a + len_b - inter
    lo = np.minimum(np.minimum(a[..., 0], a[..., 1]), np.minimum(b[..., 0], b[..., 1]))
    hi = np.maximum(np.maximum(a[..., 0], a[..., 1]), np.maximum(b[..., 0], b[..., 1]))
    hull = hi - lo
    return np.where(hull > 0.0, iou - (hull - union) / np.where(hull > 0.0, hull, 1.0), 0.0)


def clamp_valid(spans: np.ndarray) -> np.ndarray:
    """Metric/export-time clamp: inverted spans collapse to zero length at
    their lower endpoint; everything clipped to [0, 1]."""
    spans = np.clip(np.asarray(spans, dtype=np.float64), 0.0, 1.0)
    out = spans.copy()
    inverted = out[..., 1] < out[..., 0]
    lower = np.minimum(out[..., 0], out[..., 1])
    out[..., 0] = np.where(inverted, lower, out[..., 0])
    out[..., 1] = np.where(inverted, lower, out[..., 1])
    return out
