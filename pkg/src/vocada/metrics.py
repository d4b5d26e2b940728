"""Detection-quality and vocabulary-adaptation-quality metrics.

Detection evaluation follows the COCO convention: greedy
highest-overlap matching per class with ground-truth consumption,
average precision from the 101-point interpolated precision-recall
curve, and class means taken only over classes that actually appear in
the ground truth. An all-points integrator is kept as a cross-check
mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .domain import (
    AdaptedVocabulary,
    Box,
    Detection,
    GroundTruthBox,
    Vocabulary,
)
from .errors import DataError

IOU_THRESHOLDS = tuple(t / 100.0 for t in range(50, 100, 5))
RECALL_GRID = tuple(r / 100.0 for r in range(0, 101))

INTERPOLATION_MODES = ("101point", "allpoints")


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area; 0.0 for disjoint or degenerate input."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float
    confidence: float


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one (class, IoU threshold) evaluation.

    ``order`` holds indices into the input detection list sorted by
    non-increasing confidence (ties stable); ``tp``/``scores`` align with
    that order. ``gt_matched`` aligns with the input ground-truth list.
    """

    order: tuple[int, ...]
    tp: tuple[bool, ...]
    scores: tuple[float, ...]
    gt_matched: tuple[bool, ...]


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float,
) -> MatchResult:
    """Flag each detection TP/FP against same-image, same-class ground truth.

    Detections are visited in confidence order; each consumes the
    unmatched ground-truth box of its class with the highest overlap,
    provided that overlap reaches the threshold.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    matched = [False] * len(gts)
    gt_by_slot: dict[tuple[str, int], list[int]] = {}
    for j, gt in enumerate(gts):
        gt_by_slot.setdefault((gt.image_id, gt.class_id), []).append(j)

    tp: list[bool] = []
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = 0.0
        for j in gt_by_slot.get((det.image_id, det.class_id), ()):
            if matched[j]:
                continue
            overlap = iou(det.box, gts[j].box)
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp.append(True)
        else:
            tp.append(False)
    return MatchResult(
        order=tuple(order),
        tp=tuple(tp),
        scores=tuple(dets[i].score for i in order),
        gt_matched=tuple(matched),
    )


def pr_points(
    tp: Sequence[bool], scores: Sequence[float], n_gt: int
) -> list[PRPoint]:
    """Cumulative precision/recall along the confidence-sorted sequence."""
    points: list[PRPoint] = []
    cum_tp = 0
    for k, (flag, score) in enumerate(zip(tp, scores), start=1):
        cum_tp += int(flag)
        points.append(
            PRPoint(
                precision=cum_tp / k,
                recall=cum_tp / n_gt if n_gt else 0.0,
                confidence=score,
            )
        )
    return points


def average_precision(
    tp: Sequence[bool],
    scores: Sequence[float],
    n_gt: int,
    interpolation: str = "101point",
) -> float | None:
    """Area under the interpolated precision-recall curve for one class.

    Returns ``None`` when the class has no ground truth; such classes are
    excluded from class means rather than scored zero.
    """
    if interpolation not in INTERPOLATION_MODES:
        raise DataError(f"unknown interpolation mode {interpolation!r}")
    if n_gt < 0:
        raise DataError("n_gt must be non-negative")
    if n_gt == 0:
        return None
    order = sorted(range(len(tp)), key=lambda i: -scores[i])
    flags = [tp[i] for i in order]

    precisions: list[float] = []
    recalls: list[float] = []
    cum_tp = 0
    for k, flag in enumerate(flags, start=1):
        cum_tp += int(flag)
        precisions.append(cum_tp / k)
        recalls.append(cum_tp / n_gt)

    # Monotone precision envelope from the right: env[i] = max precision
    # at recall >= recalls[i].
    env = precisions[:]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])

    if interpolation == "101point":
        total = 0.0
        for r in RECALL_GRID:
            best = 0.0
            for rec, p in zip(recalls, env):
                if rec >= r:
                    best = p
                    break
            total += best
        return total / len(RECALL_GRID)

    # All-points: integrate the envelope over recall increments.
    area = 0.0
    prev_recall = 0.0
    for rec, p in zip(recalls, env):
        if rec > prev_recall:
            area += (rec - prev_recall) * p
            prev_recall = rec
    return area


@dataclass(frozen=True)
class EvalCounts:
    images: int = 0
    detections: int = 0
    ground_truths: int = 0
    fallbacks: int = 0


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary: per-class AP table plus group means and counts."""

    ap_per_class_per_threshold: Mapping[tuple[int, float], float]
    ap50_all: float | None
    ap50_base: float | None
    ap50_novel: float | None
    map_all: float | None
    map_base: float | None
    map_novel: float | None
    counts: EvalCounts
    vocab_precision: float | None = None
    vocab_recall: float | None = None
    thresholds: tuple[float, ...] = IOU_THRESHOLDS
    classes_evaluated: tuple[int, ...] = ()
    group_of: Mapping[int, str] = field(default_factory=dict)


def _mean(values: Iterable[float]) -> float | None:
    vals = list(values)
    if not vals:
        return None
    return sum(vals) / len(vals)


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    vocab: Vocabulary,
    groups: Mapping[int, str] | None = None,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    interpolation: str = "101point",
) -> EvalReport:
    """Per-class, per-threshold AP with unweighted class means per group.

    ``ap50`` aggregates the 0.5-threshold slice; ``map`` additionally
    averages over the threshold sweep. Classes without ground truth do
    not participate in any mean.
    """
    ids = vocab.ids()
    for det in dets:
        if det.class_id not in ids:
            raise DataError(f"detection class id {det.class_id} not in vocabulary")
    for gt in gts:
        if gt.class_id not in ids:
            raise DataError(f"ground-truth class id {gt.class_id} not in vocabulary")
    if groups is not None:
        missing = sorted(ids - set(groups))
        if missing:
            raise DataError(f"group map missing class ids: {missing}")
        bad = {g for g in groups.values() if g not in ("base", "novel")}
        if bad:
            raise DataError(f"unknown group labels: {sorted(bad)}")

    classes = sorted({gt.class_id for gt in gts})
    n_gt = {c: sum(1 for gt in gts if gt.class_id == c) for c in classes}
    dets_by_class: dict[int, list[Detection]] = {c: [] for c in classes}
    for det in dets:
        if det.class_id in dets_by_class:
            dets_by_class[det.class_id].append(det)
    gts_by_class: dict[int, list[GroundTruthBox]] = {c: [] for c in classes}
    for gt in gts:
        gts_by_class[gt.class_id].append(gt)

    ap_table: dict[tuple[int, float], float] = {}
    for c in classes:
        for thr in thresholds:
            m = match_detections(dets_by_class[c], gts_by_class[c], thr)
            ap = average_precision(m.tp, m.scores, n_gt[c], interpolation)
            assert ap is not None
            ap_table[(c, thr)] = ap

    def class_subset(group: str | None) -> list[int]:
        if group is None:
            return classes
        assert groups is not None
        return [c for c in classes if groups[c] == group]

    def ap50(group: str | None) -> float | None:
        return _mean(ap_table[(c, 0.5)] for c in class_subset(group))

    def mean_ap(group: str | None) -> float | None:
        subset = class_subset(group)
        if not subset:
            return None
        return _mean(
            ap_table[(c, thr)] for c in subset for thr in thresholds
        )

    image_ids = {gt.image_id for gt in gts} | {det.image_id for det in dets}
    return EvalReport(
        ap_per_class_per_threshold=ap_table,
        ap50_all=ap50(None) if 0.5 in tuple(thresholds) else None,
        ap50_base=ap50("base") if groups is not None and 0.5 in tuple(thresholds) else None,
        ap50_novel=ap50("novel") if groups is not None and 0.5 in tuple(thresholds) else None,
        map_all=mean_ap(None),
        map_base=mean_ap("base") if groups is not None else None,
        map_novel=mean_ap("novel") if groups is not None else None,
        counts=EvalCounts(
            images=len(image_ids),
            detections=len(dets),
            ground_truths=len(gts),
        ),
        thresholds=tuple(thresholds),
        classes_evaluated=tuple(classes),
        group_of=dict(groups) if groups is not None else {},
    )


@dataclass(frozen=True)
class VocabQuality:
    """Set precision/recall of an adapted vocabulary against gt classes."""

    precision: float
    recall: float
    precision_degenerate: bool = False


def vocab_quality(
    adapted: AdaptedVocabulary,
    gt_classes: frozenset[int] | set[int],
    vocab: Vocabulary,
) -> VocabQuality:
    """Per-image adaptation quality. Empty-vs-empty precision is 1.0, flagged."""
    ids = vocab.ids()
    if not set(gt_classes) <= ids:
        raise DataError("ground-truth classes outside the vocabulary")
    if not adapted.class_ids <= ids:
        raise DataError("adapted classes outside the vocabulary")
    selected = set(adapted.class_ids)
    gt = set(gt_classes)
    tp = len(selected & gt)
    fp = len(selected - gt)
    fn = len(gt - selected)
    degenerate = (tp + fp) == 0
    precision = 1.0 if degenerate else tp / (tp + fp)
    recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    return VocabQuality(precision=precision, recall=recall, precision_degenerate=degenerate)


def mean_vocab_quality(
    adapted_list: Sequence[AdaptedVocabulary],
    gt_classes_by_image: Mapping[str, set[int] | frozenset[int]],
    vocab: Vocabulary,
) -> tuple[float, float] | None:
    """Unweighted per-image mean of precision and recall."""
    if not adapted_list:
        return None
    precisions: list[float] = []
    recalls: list[float] = []
    for adapted in adapted_list:
        q = vocab_quality(
            adapted, frozenset(gt_classes_by_image.get(adapted.image_id, frozenset())), vocab
        )
        precisions.append(q.precision)
        recalls.append(q.recall)
    return (sum(precisions) / len(precisions), sum(recalls) / len(recalls))


def attach_vocab_quality(
    report: EvalReport,
    adapted_list: Sequence[AdaptedVocabulary],
    gts: Sequence[GroundTruthBox],
    vocab: Vocabulary,
) -> EvalReport:
    """Return a report extended with vocabulary precision/recall and fallback count."""
    gt_classes: dict[str, set[int]] = {}
    for gt in gts:
        gt_classes.setdefault(gt.image_id, set()).add(gt.class_id)
    means = mean_vocab_quality(adapted_list, gt_classes, vocab)
    fallbacks = sum(1 for a in adapted_list if a.fallback_used)
    if means is None:
        return replace(report, counts=replace(report.counts, fallbacks=fallbacks))
    return replace(
        report,
        vocab_precision=means[0],
        vocab_recall=means[1],
        counts=replace(report.counts, fallbacks=fallbacks),
    )


def pooled_pr_points(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
) -> list[PRPoint]:
    """Micro-pooled PR curve across classes at one threshold (figure support).

    TP/FP flags come from per-class matching; the cumulative curve uses a
    single global confidence ranking.
    """
    classes = sorted({gt.class_id for gt in gts} | {d.class_id for d in dets})
    flagged: list[tuple[float, bool]] = []
    total_gt = len(gts)
    for c in classes:
        dets_c = [d for d in dets if d.class_id == c]
        gts_c = [g for g in gts if g.class_id == c]
        m = match_detections(dets_c, gts_c, iou_threshold)
        flagged.extend(zip(m.scores, m.tp))
    flagged.sort(key=lambda pair: -pair[0])
    return pr_points(
        [flag for _, flag in flagged],
        [score for score, _ in flagged],
        total_gt,
    )


def ap_is_close(a: float | None, b: float | None, tol: float = 1e-9) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
