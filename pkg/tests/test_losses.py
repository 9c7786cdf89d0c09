import math

import numpy as np
import pytest

from momenthd import tensor as T
from momenthd.losses import (
    LossToggles,
    LossWeights,
    compute_loss,
    giou_graph,
    in_moment_mask,
    moment_terms,
    saliency_bce,
    saliency_rank,
    sample_rank_pair,
)
from momenthd.matching import MatchResult, hungarian_match
from momenthd.model import ModelOutput
from momenthd.spans import clamp_valid, span_giou, span_iou
from momenthd.tensor import Tape, Tensor

from conftest import analytic_grad, central_difference, max_rel_err


class TestSpanGeometry:
    def test_iou_identical(self):
        assert span_iou([0.2, 0.6], [0.2, 0.6]) == 1.0

    def test_iou_half_overlap(self):
        assert span_iou([0.0, 0.4], [0.2, 0.6]) == pytest.approx(1 / 3)

    def test_iou_disjoint(self):
        assert span_iou([0.0, 0.2], [0.5, 0.7]) == 0.0

    def test_giou_equals_iou_when_touching(self):
        # adjoining spans: hull == union, so penalty vanishes
        assert span_giou([0.0, 0.4], [0.4, 0.8]) == pytest.approx(0.0, abs=1e-12)

    def test_giou_disjoint_hand_value(self):
        # union 0.4, hull 1.0 -> 0 - 0.6/1.0
        assert span_giou([0.0, 0.2], [0.8, 1.0]) == pytest.approx(-0.6, abs=1e-10)

    def test_giou_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b = np.sort(rng.uniform(0, 1, 2)), np.sort(rng.uniform(0, 1, 2))
            g = span_giou(a, b)
            assert -1.0 <= g <= 1.0
            assert g <= span_iou(a, b) + 1e-12

    def test_inverted_span_counts_as_empty(self):
        assert span_iou([0.6, 0.2], [0.1, 0.9]) == 0.0

    def test_clamp_valid(self):
        spans = np.array([[0.3, 0.1], [-0.2, 0.5], [0.4, 1.3]])
        out = clamp_valid(spans)
        # inverted rows collapse to their lower endpoint
        np.testing.assert_allclose(out, [[0.1, 0.1], [0.0, 0.5], [0.4, 1.0]])
        assert (out[:, 1] >= out[:, 0]).all()

    def test_giou_graph_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(0, 1, (20, 2))
        gt = np.sort(rng.uniform(0, 1, (20, 2)), axis=1)
        with Tape():
            got = giou_graph(Tensor(pred), gt).data
        want = [span_giou(p, g) for p, g in zip(pred, gt)]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_giou_graph_gradient(self):
        rng = np.random.default_rng(9)
        gt = np.sort(rng.uniform(0, 1, (4, 2)), axis=1)
        x = Tensor(rng.uniform(0.05, 0.95, (4, 2)), requires_grad=True)
        got = analytic_grad(lambda: T.tsum(giou_graph(x, gt)), x)
        want = central_difference(
            lambda: float(sum(span_giou(p, g) for p, g in zip(x.data, gt))), x.data
        )
        assert max_rel_err(got, want, floor=1e-5) <= 1e-5


class TestSaliencyLosses:
    def test_bce_hand_value_single_positive(self):
        # one clip, label 1, logit 0: 5 * ln 2
        loss = saliency_bce(Tensor(np.zeros(1)), np.array([1.0]), 5.0)
        assert loss.item() == pytest.approx(5 * math.log(2), abs=1e-12)

    def test_bce_mixed_labels(self):
        # logits 0 everywhere: positives cost 5 ln2, negatives ln2
        loss = saliency_bce(Tensor(np.zeros(4)), np.array([1.0, 0, 0, 1]), 5.0)
        assert loss.item() == pytest.approx(12 * math.log(2), abs=1e-12)

    def test_bce_extreme_logits_stay_finite(self):
        loss = saliency_bce(Tensor(np.array([1e4, -1e4])), np.array([1.0, 0.0]), 5.0)
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_rank_satisfied_pair_is_zero(self):
        logits = Tensor(np.array([2.0, 1.5, -1.0, -1.2]))
        mask = np.array([True, True, False, False])
        loss = saliency_rank(logits, mask, 0.2, rank_pair=(0, 2))
        # extremal in-moment term: relu(1.5 - 2.0 + 0.2) = 0; sampled: relu(-1 - 2 + .2) = 0
        assert loss.item() == 0.0

    def test_rank_violated_pair_hand_value(self):
        logits = Tensor(np.array([0.0, 0.0, 0.5]))
        mask = np.array([True, True, False])
        loss = saliency_rank(logits, mask, 0.2, rank_pair=(0, 2))
        # extremal term: relu(0 - 0 + 0.2) = 0.2; sampled term: relu(0.5 - 0 + 0.2) = 0.7
        assert loss.item() == pytest.approx(0.9, abs=1e-12)

    def test_in_moment_mask_midpoints(self):
        mask = in_moment_mask(np.array([[0.25, 0.5]]), 4)
        # clip midpoints 0.125, 0.375, 0.625, 0.875
        np.testing.assert_array_equal(mask, [False, True, False, False])

    def test_sample_rank_pair_respects_mask(self):
        rng = np.random.default_rng(0)
        mask = np.array([True, False, True, False])
        for _ in range(20):
            i, o = sample_rank_pair(mask, rng)
            assert mask[i] and not mask[o]

    def test_sample_rank_pair_degenerate(self):
        rng = np.random.default_rng(0)
        assert sample_rank_pair(np.ones(3, dtype=bool), rng) is None
        assert sample_rank_pair(np.zeros(3, dtype=bool), rng) is None


def _make_output(spans, class_logits, saliency):
    return ModelOutput(
        spans=Tensor(np.asarray(spans, dtype=np.float64)),
        class_logits=Tensor(np.asarray(class_logits, dtype=np.float64)),
        saliency=Tensor(np.asarray(saliency, dtype=np.float64)),
    )


class TestMomentTerms:
    def test_l1_hand_value(self):
        # matched pair off by 0.25 at each endpoint: 10 * 0.5 = 5
        spans = Tensor(np.array([[0.2, 0.4]]))
        logits = Tensor(np.zeros((1, 2)))
        match = MatchResult(pairs=[(0, 0)], total_cost=0.0)
        l1, _, _ = moment_terms(
            spans, logits, np.array([[0.45, 0.65]]), match, LossWeights(), LossToggles()
        )
        assert l1.item() == pytest.approx(5.0, abs=1e-12)

    def test_cls_hand_value_uniform_logits(self):
        # 10 queries, 2 matched, equal logits: (10*2 + 8) * ln 2 = 28 ln 2
        spans = Tensor(np.tile([0.4, 0.6], (10, 1)))
        logits = Tensor(np.zeros((10, 2)))
        match = MatchResult(pairs=[(0, 0), (1, 1)], total_cost=0.0)
        gt = np.array([[0.4, 0.6], [0.4, 0.6]])
        _, _, cls = moment_terms(spans, logits, gt, match, LossWeights(), LossToggles())
        assert cls.item() == pytest.approx(28 * math.log(2), abs=1e-12)

    def test_perfect_match_iou_term_is_zero(self):
        gt = np.array([[0.3, 0.7]])
        spans = Tensor(gt.copy())
        match = MatchResult(pairs=[(0, 0)], total_cost=0.0)
        _, iou_term, _ = moment_terms(
            spans, Tensor(np.zeros((1, 2))), gt, match, LossWeights(), LossToggles()
        )
        assert iou_term.item() == pytest.approx(0.0, abs=1e-10)

    def test_toggles_zero_out_terms(self):
        spans = Tensor(np.array([[0.1, 0.2]]))
        logits = Tensor(np.array([[1.0, -1.0]]))
        match = MatchResult(pairs=[(0, 0)], total_cost=0.0)
        gt = np.array([[0.5, 0.9]])
        off = LossToggles(cls=False, l1=False, iou=False)
        l1, iou, cls = moment_terms(spans, logits, gt, match, LossWeights(), off)
        assert l1.item() == iou.item() == cls.item() == 0.0


class TestComputeLoss:
    def _setup(self):
        rng = np.random.default_rng(17)
        out = _make_output(
            np.clip(rng.uniform(0, 1, (5, 2)), 0, 1),
            rng.normal(size=(5, 2)),
            rng.normal(size=8),
        )
        gt = np.array([[0.25, 0.5], [0.625, 0.875]])
        labels = in_moment_mask(gt, 8).astype(float)
        return out, gt, labels

    def test_breakdown_total_is_weighted_sum(self):
        out, gt, labels = self._setup()
        w = LossWeights()
        total, bd, _ = compute_loss(out, gt, labels, w, LossToggles(), rank_pair=(2, 0))
        want = (
            w.bce_weight * bd.l_bce
            + w.rank_weight * bd.l_rank
            + bd.l_span_l1
            + bd.l_span_iou
            + w.cls_weight * bd.l_cls
        )
        assert total.item() == pytest.approx(want, abs=1e-10)
        assert bd.total == pytest.approx(want, abs=1e-10)

    def test_all_toggles_off_gives_zero(self):
        out, gt, labels = self._setup()
        off = LossToggles(cls=False, l1=False, iou=False, bce=False, rank=False)
        total, bd, _ = compute_loss(out, gt, labels, LossWeights(), off)
        assert total.item() == 0.0
        assert bd.total == 0.0

    def test_match_count_equals_gt_count(self):
        out, gt, labels = self._setup()
        _, _, match = compute_loss(out, gt, labels, LossWeights(), LossToggles())
        assert len(match.pairs) == len(gt)
        assert len(set(match.prediction_indices)) == len(gt)

    def test_frozen_match_is_respected(self):
        out, gt, labels = self._setup()
        frozen = MatchResult(pairs=[(4, 0), (3, 1)], total_cost=0.0)
        _, _, match = compute_loss(out, gt, labels, LossWeights(), LossToggles(), match=frozen)
        assert match is frozen

    def test_loss_is_differentiable_end_to_end(self):
        gt = np.array([[0.25, 0.75]])
        labels = in_moment_mask(gt, 6).astype(float)
        rng = np.random.default_rng(23)
        base_spans = rng.uniform(0.1, 0.9, (3, 2))
        base_logits = rng.normal(size=(3, 2))
        base_sal = rng.normal(size=6)
        frozen = hungarian_match(base_spans, np.full(3, 0.5), gt)

        spans = Tensor(base_spans, requires_grad=True)
        logits = Tensor(base_logits, requires_grad=True)
        sal = Tensor(base_sal, requires_grad=True)

        def build():
            out = ModelOutput(spans=spans, class_logits=logits, saliency=sal)
            total, _, _ = compute_loss(
                out, gt, labels, LossWeights(), LossToggles(),
                rank_pair=(2, 0), match=frozen,
            )
            return total

        def value():
            return build().item()

        for t in (spans, logits, sal):
            got = analytic_grad(build, t)
            want = central_difference(value, t.data)
            assert max_rel_err(got, want, floor=1e-5) <= 1e-4
