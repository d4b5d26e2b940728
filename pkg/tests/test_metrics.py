from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naive_eval import naive_ap_101, naive_ap_all_points, naive_evaluate, naive_iou
from vocada.domain import (
    AdaptedVocabulary,
    Box,
    ClassEntry,
    Detection,
    GroundTruthBox,
    Vocabulary,
)
from vocada.errors import DataError
from vocada.metrics import (
    IOU_THRESHOLDS,
    average_precision,
    evaluate,
    iou,
    match_detections,
    mean_vocab_quality,
    pooled_pr_points,
    vocab_quality,
)

VOCAB = Vocabulary(
    classes=tuple(ClassEntry(id=i, name=f"class-{i}") for i in range(1, 6))
)


def det(image_id, box, class_id, score):
    return Detection(image_id=image_id, box=Box(*box), class_id=class_id, score=score)


def gt(image_id, box, class_id):
    return GroundTruthBox(image_id=image_id, box=Box(*box), class_id=class_id)


class TestIoU:
    def test_identical(self):
        b = Box(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_quarter_overlap(self):
        # 25 intersection over 175 union.
        assert iou(Box(0, 0, 10, 10), Box(5, 5, 15, 15)) == pytest.approx(1 / 7, abs=1e-12)

    @given(
        st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40)),
        st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40)),
        st.floats(-20, 20),
        st.floats(-20, 20),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_translation_invariant(self, raw_a, raw_b, dx, dy):
        def mk(raw):
            x1, y1, w, h = raw
            return Box(x1, y1, x1 + w, y1 + h)

        a, b = mk(raw_a), mk(raw_b)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        shifted = iou(
            Box(a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy),
            Box(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy),
        )
        assert shifted == pytest.approx(iou(a, b), abs=1e-9)

    def test_agrees_with_naive(self):
        rng = random.Random(7)
        for _ in range(200):
            a = sorted(rng.uniform(0, 30) for _ in range(2))
            b = sorted(rng.uniform(0, 30) for _ in range(2))
            box_a = Box(a[0], b[0], a[1] + 1, b[1] + 1)
            c = sorted(rng.uniform(0, 30) for _ in range(2))
            d = sorted(rng.uniform(0, 30) for _ in range(2))
            box_b = Box(c[0], d[0], c[1] + 1, d[1] + 1)
            assert iou(box_a, box_b) == pytest.approx(
                naive_iou(box_a.as_tuple(), box_b.as_tuple()), abs=1e-12
            )


class TestMatchDetections:
    def test_exact_hit(self):
        dets = [det("i", (0, 0, 10, 10), 1, 0.9)]
        gts = [gt("i", (0, 0, 10, 10), 1)]
        m = match_detections(dets, gts, 0.5)
        assert m.tp == (True,)
        assert m.gt_matched == (True,)

    def test_greedy_consumption(self):
        dets = [
            det("i", (0, 0, 10, 10), 1, 0.9),
            det("i", (1, 1, 10, 10), 1, 0.8),
        ]
        gts = [gt("i", (0, 0, 10, 10), 1)]
        m = match_detections(dets, gts, 0.5)
        assert m.tp == (True, False)

    def test_threshold_rejects_weak_overlap(self):
        dets = [det("i", (0, 0, 10, 4), 1, 0.9)]  # IoU = 0.4 against the gt
        gts = [gt("i", (0, 0, 10, 10), 1)]
        assert iou(dets[0].box, gts[0].box) == pytest.approx(0.4)
        m = match_detections(dets, gts, 0.5)
        assert m.tp == (False,)
        assert m.gt_matched == (False,)

    def test_class_and_image_must_match(self):
        dets = [det("i", (0, 0, 10, 10), 1, 0.9), det("j", (0, 0, 10, 10), 2, 0.8)]
        gts = [gt("i", (0, 0, 10, 10), 2), gt("j", (0, 0, 10, 10), 1)]
        m = match_detections(dets, gts, 0.5)
        assert m.tp == (False, False)

    def test_confidence_order_with_stable_ties(self):
        dets = [
            det("i", (0, 0, 10, 10), 1, 0.5),
            det("i", (20, 20, 30, 30), 1, 0.5),
            det("i", (40, 40, 50, 50), 1, 0.9),
        ]
        gts = [gt("i", (40, 40, 50, 50), 1)]
        m = match_detections(dets, gts, 0.5)
        assert m.order == (2, 0, 1)


class TestAveragePrecision:
    def test_perfect_detector(self):
        assert average_precision([True], [0.9], 1) == 1.0

    def test_tp_fp_tp_example(self):
        # PR points (r=.5, p=1), (r=.5, p=.5), (r=1, p=2/3) over the 101 grid.
        ap = average_precision([True, False, True], [0.9, 0.8, 0.7], 2)
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        assert ap == pytest.approx(expected, abs=1e-6)
        assert naive_ap_101([(0.9, True), (0.8, False), (0.7, True)], 2) == pytest.approx(
            expected, abs=1e-12
        )

    def test_single_false_positive(self):
        assert average_precision([False], [0.9], 1) == 0.0

    def test_no_ground_truth_excluded(self):
        assert average_precision([], [], 0) is None

    def test_all_points_variant(self):
        flags = [True, False, True]
        scores = [0.9, 0.8, 0.7]
        ap = average_precision(flags, scores, 2, interpolation="allpoints")
        # Exact area: 0.5 * 1 + 0.5 * (2/3).
        assert ap == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-12)
        assert naive_ap_all_points(list(zip(scores, flags)), 2) == pytest.approx(ap, abs=1e-12)

    @given(
        st.lists(st.booleans(), min_size=0, max_size=12),
        st.integers(min_value=1, max_value=6),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_naive_on_random_flag_sequences(self, flags, n_gt):
        scores = [1.0 - 0.01 * i for i in range(len(flags))]
        for mode, naive in (("101point", naive_ap_101), ("allpoints", naive_ap_all_points)):
            ours = average_precision(flags, scores, n_gt, interpolation=mode)
            ref = naive(list(zip(scores, flags)), n_gt)
            assert ours == pytest.approx(ref, abs=1e-9)

    @given(st.lists(st.booleans(), min_size=1, max_size=10), st.integers(1, 5))
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_appended_flags(self, flags, n_gt):
        scores = [1.0 - 0.05 * i for i in range(len(flags))]
        base = average_precision(flags, scores, n_gt)
        with_tp = average_precision(flags + [True], scores + [scores[-1] - 0.05], n_gt)
        with_fp = average_precision(flags + [False], scores + [scores[-1] - 0.05], n_gt)
        assert with_tp >= base - 1e-12
        assert with_fp <= base + 1e-12


def random_scene(rng: random.Random, image_id: str, n_classes: int = 5):
    """A small image worth of boxes: up to 10 gts and dets over n_classes."""
    gts = []
    dets = []
    for _ in range(rng.randint(0, 10)):
        x1 = rng.uniform(0, 80)
        y1 = rng.uniform(0, 80)
        w = rng.uniform(2, 40)
        h = rng.uniform(2, 40)
        cls = rng.randint(1, n_classes)
        gts.append(gt(image_id, (x1, y1, x1 + w, y1 + h), cls))
        if rng.random() < 0.8:
            # A detection near this gt, sometimes poorly located or mislabeled.
            jitter = rng.uniform(0, 12)
            dets.append(
                det(
                    image_id,
                    (x1 + jitter, y1, x1 + w + jitter, y1 + h),
                    cls if rng.random() < 0.75 else rng.randint(1, n_classes),
                    rng.random(),
                )
            )
    for _ in range(rng.randint(0, 3)):
        x1 = rng.uniform(0, 80)
        y1 = rng.uniform(0, 80)
        dets.append(
            det(
                image_id,
                (x1, y1, x1 + rng.uniform(2, 30), y1 + rng.uniform(2, 30)),
                rng.randint(1, n_classes),
                rng.random(),
            )
        )
    return dets, gts


class TestEvaluate:
    def test_perfect_detections(self):
        gts = [gt("a", (0, 0, 10, 10), 1), gt("a", (20, 20, 40, 40), 2), gt("b", (5, 5, 9, 9), 1)]
        dets = [det(g.image_id, g.box.as_tuple(), g.class_id, 0.9 - 0.1 * i) for i, g in enumerate(gts)]
        report = evaluate(dets, gts, VOCAB)
        assert report.ap50_all == 1.0
        assert report.map_all == 1.0

    def test_no_detections(self):
        gts = [gt("a", (0, 0, 10, 10), 1)]
        report = evaluate([], gts, VOCAB)
        assert report.ap50_all == 0.0
        assert report.map_all == 0.0

    def test_unknown_detection_class_rejected(self):
        dets = [det("a", (0, 0, 10, 10), 99, 0.5)]
        with pytest.raises(DataError, match="not in vocabulary"):
            evaluate(dets, [gt("a", (0, 0, 10, 10), 1)], VOCAB)

    def test_group_map_must_cover_vocabulary(self):
        with pytest.raises(DataError, match="group map missing"):
            evaluate([], [gt("a", (0, 0, 10, 10), 1)], VOCAB, groups={1: "base"})

    def test_group_means(self):
        groups = {1: "base", 2: "base", 3: "novel", 4: "novel", 5: "novel"}
        gts = [gt("a", (0, 0, 10, 10), 1), gt("a", (20, 20, 30, 30), 3)]
        dets = [
            det("a", (0, 0, 10, 10), 1, 0.9),
            det("a", (50, 50, 60, 60), 3, 0.8),
        ]
        report = evaluate(dets, gts, VOCAB, groups=groups)
        assert report.ap50_base == 1.0
        assert report.ap50_novel == 0.0
        assert report.ap50_all == 0.5

    def test_matches_naive_evaluator_on_random_scenes(self):
        rng = random.Random(42)
        for trial in range(25):
            dets, gts = [], []
            for i in range(rng.randint(1, 4)):
                d, g = random_scene(rng, f"img{i}")
                dets.extend(d)
                gts.extend(g)
            if not gts:
                continue
            report = evaluate(dets, gts, VOCAB)
            ref = naive_evaluate(
                [
                    {"image_id": d.image_id, "box": d.box.as_tuple(), "class_id": d.class_id, "score": d.score}
                    for d in dets
                ],
                [
                    {"image_id": g.image_id, "box": g.box.as_tuple(), "class_id": g.class_id}
                    for g in gts
                ],
                list(IOU_THRESHOLDS),
            )
            for key, value in ref["ap"].items():
                assert report.ap_per_class_per_threshold[key] == pytest.approx(value, abs=1e-9)
            assert report.ap50_all == pytest.approx(ref["ap50_all"], abs=1e-9)
            assert report.map_all == pytest.approx(ref["map_all"], abs=1e-9)

    def test_invariant_under_detection_permutation(self):
        rng = random.Random(3)
        dets, gts = random_scene(rng, "img0")
        scores = sorted({d.score for d in dets})
        assert len(scores) == len(dets)  # distinct confidences
        report_a = evaluate(dets, gts, VOCAB)
        shuffled = dets[:]
        rng.shuffle(shuffled)
        report_b = evaluate(shuffled, gts, VOCAB)
        assert report_a.ap_per_class_per_threshold == report_b.ap_per_class_per_threshold


class TestVocabQuality:
    def test_full_vocabulary_has_perfect_recall(self):
        adapted = AdaptedVocabulary(image_id="i", class_ids=VOCAB.ids(), selector="baseline")
        q = vocab_quality(adapted, {1, 2}, VOCAB)
        assert q.recall == 1.0
        assert q.precision == pytest.approx(2 / 5)

    def test_oracle_is_perfect(self):
        adapted = AdaptedVocabulary(image_id="i", class_ids=frozenset({1, 2}), selector="oracle")
        q = vocab_quality(adapted, {1, 2}, VOCAB)
        assert q.precision == 1.0
        assert q.recall == 1.0

    def test_half_and_half(self):
        adapted = AdaptedVocabulary(image_id="i", class_ids=frozenset({1, 3}), selector="llm")
        q = vocab_quality(adapted, {1, 2}, VOCAB)
        assert q.precision == 0.5
        assert q.recall == 0.5

    def test_empty_adapted_empty_gt_precision_convention(self):
        adapted = AdaptedVocabulary(image_id="i", class_ids=frozenset(), selector="oracle")
        q = vocab_quality(adapted, set(), VOCAB)
        assert q.precision == 1.0
        assert q.recall == 1.0
        assert q.precision_degenerate

    def test_mean_is_per_image_macro(self):
        adapted = [
            AdaptedVocabulary(image_id="a", class_ids=frozenset({1}), selector="llm"),
            AdaptedVocabulary(image_id="b", class_ids=frozenset({1, 2}), selector="llm"),
        ]
        gt_map = {"a": {1}, "b": {3}}
        means = mean_vocab_quality(adapted, gt_map, VOCAB)
        assert means == pytest.approx((0.5, 0.5))


class TestPooledPR:
    def test_monotone_recall(self):
        rng = random.Random(11)
        dets, gts = random_scene(rng, "img0")
        points = pooled_pr_points(dets, gts, 0.5)
        recalls = [p.recall for p in points]
        assert recalls == sorted(recalls)
        confidences = [p.confidence for p in points]
        assert confidences == sorted(confidences, reverse=True)
