"""Scoring protocol: boundary F1 at 0.5 s, per-class AP pooled over videos,
mAP averaged over tIoU thresholds 0.50:0.05:0.95, and their product.

Also holds the exhaustive reference implementations used to cross-check the
fast paths.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .kernels import backend

BOUNDARY_TOLERANCE = 0.5


def tiou_thresholds(start=0.5, stop=0.95, step=0.05) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


DEFAULT_THRESHOLDS = tuple(tiou_thresholds())


@dataclass(frozen=True)
class ScenePrediction:
    segment: tuple[float, float]
    scores: np.ndarray
    labels: tuple[int, ...] = ()


@dataclass(frozen=True)
class MatchResult:
    pairs: list[tuple[int, int]]
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        return f1_from_counts(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self):
        return f1_from_counts(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self):
        return f1_from_counts(self.tp, self.fp, self.fn)[2]


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    thresholds: list[float]
    map_per_threshold: list[float]
    avg_map: float
    final: float
    per_class_ap: dict[int, list[float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_ap"] = {str(k): v for k, v in sorted(self.per_class_ap.items())}
        return d


def temporal_iou(a, b) -> float:
    (a0, a1), (b0, b1) = a, b
    if not a0 < a1 or not b0 < b1:
        raise ValidationError(f"degenerate interval in tIoU: {a}, {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / (max(a1, b1) - min(a0, b0))


def f1_from_counts(tp, fp, fn) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def match_boundaries(pred_times, gt_times, tolerance=BOUNDARY_TOLERANCE) -> MatchResult:
    """Maximum one-to-one matching with ``|pred - gt| < tolerance``.

    Pairs index the caller's original (unsorted) lists.
    """
    if not tolerance > 0:
        raise ValidationError(f"tolerance must be positive, got {tolerance}")
    pred = np.asarray(pred_times, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_times, dtype=np.float64).reshape(-1)
    po = np.argsort(pred, kind="stable")
    go = np.argsort(gt, kind="stable")
    sorted_pairs = backend.greedy_match(np.ascontiguousarray(pred[po]),
                                        np.ascontiguousarray(gt[go]), float(tolerance))
    pairs = [(int(po[p]), int(go[g])) for p, g in sorted_pairs]
    tp = len(pairs)
    return MatchResult(pairs=pairs, tp=tp, fp=len(pred) - tp, fn=len(gt) - tp)


def average_precision(ranked, n_positives: int | None = None) -> float:
    """AP of ``(score, is_positive)`` items ranked by descending score.

    Ties keep input order.  ``n_positives`` overrides the denominator (the
    number of ground-truth instances for detection AP); zero positives give 0.
    """
    items = sorted(ranked, key=lambda it: -it[0])
    hits = np.fromiter((bool(h) for _, h in items), dtype=bool, count=len(items))
    n = int(hits.sum()) if n_positives is None else int(n_positives)
    if n == 0:
        return 0.0
    return float(backend.precision_sum(hits)) / n


def _class_detections(predictions, gts, c, tau):
    """(score, is_positive) for every predicted segment on class ``c``.

    Detections are visited by descending score across all videos and each
    takes the unmatched ground-truth scene of class ``c`` with highest tIoU.
    """
    dets = []
    for vid in sorted(predictions):
        for j, p in enumerate(predictions[vid]):
            dets.append((float(p.scores[c]), vid, j, p.segment))
    order = sorted(range(len(dets)), key=lambda i: -dets[i][0])
    matched = set()
    out = []
    for i in order:
        score, vid, _, seg = dets[i]
        best, best_iou = None, -1.0
        for k, g in enumerate(gts.get(vid, ())):
            if c not in g.labels or (vid, k) in matched:
                continue
            iou = temporal_iou(seg, (g.start, g.end))
            if iou > best_iou:
                best, best_iou = k, iou
        hit = best is not None and best_iou >= tau
        if hit:
            matched.add((vid, best))
        out.append((score, hit))
    return out


def average_map(predictions: Mapping[str, Sequence[ScenePrediction]],
                gts: Mapping[str, Sequence], n_classes: int | None = None,
                thresholds=DEFAULT_THRESHOLDS):
    """Return ``(map_per_threshold, average, per_class_ap)``.

    ``gts`` maps video id to its scene annotations.  Classes without any
    ground-truth instance are left out of the mean.
    """
    if n_classes is None:
        n_classes = 0
        for preds in predictions.values():
            for p in preds:
                n_classes = max(n_classes, len(p.scores))
        for scenes in gts.values():
            for g in scenes:
                if g.labels:
                    n_classes = max(n_classes, max(g.labels) + 1)
    gt_counts = np.zeros(n_classes, dtype=int)
    for scenes in gts.values():
        for g in scenes:
            for c in g.labels:
                gt_counts[c] += 1
    classes = [c for c in range(n_classes) if gt_counts[c] > 0]
    per_class = {c: [] for c in classes}
    maps = []
    for tau in thresholds:
        aps = []
        for c in classes:
            ap = average_precision(_class_detections(predictions, gts, c, tau), int(gt_counts[c]))
            per_class[c].append(ap)
            aps.append(ap)
        maps.append(float(np.mean(aps)) if aps else 0.0)
    avg = float(np.mean(maps)) if maps else 0.0
    return maps, avg, per_class


def final_score(f1, avg_map) -> float:
    return f1 * avg_map


def segment_transitions(segments) -> list[float]:
    """Interior boundaries of a tiling: every segment start but the first."""
    starts = sorted(s[0] for s in segments)
    return starts[1:]


def evaluate(predictions: Mapping[str, Sequence[ScenePrediction]], gt_records,
             tolerance=BOUNDARY_TOLERANCE, thresholds=DEFAULT_THRESHOLDS,
             n_classes: int | None = None) -> MetricReport:
    """Full protocol over ``gt_records`` (annotated :class:`VideoRecord` list).

    Videos absent from ``predictions`` count as predicting nothing.
    """
    gt_by_id = {r.id: r for r in gt_records}
    unknown = sorted(set(predictions) - set(gt_by_id))
    if unknown:
        raise ValidationError(f"predictions for unknown video ids: {', '.join(unknown)}")
    tp = fp = fn = 0
    for vid, rec in gt_by_id.items():
        preds = predictions.get(vid, ())
        m = match_boundaries(segment_transitions([p.segment for p in preds]),
                             rec.transition_times(), tolerance)
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    gts = {vid: rec.scenes for vid, rec in gt_by_id.items()}
    maps, avg, per_class = average_map(predictions, gts, n_classes, thresholds)
    return MetricReport(precision=precision, recall=recall, f1=f1,
                        thresholds=list(thresholds), map_per_threshold=maps,
                        avg_map=avg, final=final_score(f1, avg), per_class_ap=per_class,
                        counts={"tp": tp, "fp": fp, "fn": fn})


# -- exhaustive references --------------------------------------------------

def max_matching_bruteforce(pred_times, gt_times, tolerance=BOUNDARY_TOLERANCE) -> int:
    """Maximum matching size by exhaustive search over ground-truth subsets."""
    pred = list(pred_times)
    gt = list(gt_times)
    adj = [[abs(p - g) < tolerance for g in gt] for p in pred]

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(pred):
            return 0
        out = best(i + 1, used)
        for j in range(len(gt)):
            if adj[i][j] and not used & (1 << j):
                out = max(out, 1 + best(i + 1, used | (1 << j)))
        return out

    return best(0, 0)


def average_precision_from_definition(ranked) -> float:
    """Quadratic re-derivation: mean over positives of precision at their rank."""
    items = list(ranked)
    n = len(items)
    # rank of item i: items strictly higher, plus earlier ties, plus itself
    ranks = []
    for i, (s, _) in enumerate(items):
        ranks.append(1 + sum(1 for j, (t, _) in enumerate(items) if t > s or (t == s and j < i)))
    pos = [i for i in range(n) if items[i][1]]
    if not pos:
        return 0.0
    total = 0.0
    for i in sorted(pos, key=lambda i: ranks[i]):  # accumulate in rank order
        above = sum(1 for j in pos if ranks[j] <= ranks[i])
        total += above / ranks[i]
    return total / len(pos)
