"""Two-stage prediction (segment, then tag each segment), prediction files,
and threshold sweeps.

Prediction file: one JSON object per line, sorted by video id::

    {"id": "v0", "duration": 16.5,
     "segments": [{"start": 0.0, "end": 3.5,
                   "scores": [0.91, 0.02, ...],   # C probabilities
                   "labels": [0]}, ...]}          # thresholded label set
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ParseError, ValidationError
from .evaluation import MetricReport, ScenePrediction, evaluate
from .segmentation import (
    SegmenterModel,
    boundaries_to_segments,
    decode_boundaries,
    ensemble_boundary_probs,
    segmenter_forward,
    transform_ground_truth,
)
from .tagging import TaggerModel, apply_score_threshold, tag_segments


@dataclass
class PipelineConfig:
    segmenter: dict = field(default_factory=dict)
    tagger: dict = field(default_factory=dict)
    seg_checkpoints: list[str] = field(default_factory=list)
    tag_checkpoints: list[str] = field(default_factory=list)
    boundary_threshold: float = 0.5
    score_threshold: float = 0.35
    min_gap: float = 0.0
    edge_snap: float = 0.5
    seed: int = 0
    workers: int = 1

    @classmethod
    def load(cls, path=None, **overrides) -> PipelineConfig:
        """Read a JSON config file, then apply non-None ``overrides``."""
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON config ({exc.msg})", exc.lineno) from exc
            unknown = set(data) - set(cls.__dataclass_fields__)
            if unknown:
                raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def check_compatible(records, seg_models, tag_models) -> None:
    """Raise ConfigurationError naming the first dimension mismatch."""
    if not seg_models or not tag_models:
        raise ConfigurationError("need at least one segmenter and one tagger checkpoint")
    dims = {r.features.shape[1] for r in records}
    for i, m in enumerate(seg_models):
        if dims and dims != {m.config.input_dim}:
            raise ConfigurationError(
                f"segmenter #{i} expects feature width {m.config.input_dim}, data has {sorted(dims)}")
    for i, m in enumerate(tag_models):
        if dims and dims != {m.config.input_dim}:
            raise ConfigurationError(
                f"tagger #{i} expects feature width {m.config.input_dim}, data has {sorted(dims)}")
    classes = {m.n_classes for m in tag_models}
    if len(classes) > 1:
        raise ConfigurationError(f"tagger checkpoints disagree on class count: {sorted(classes)}")
    vocabs = {(m.config.vocab_size, m.config.hash_seed) for m in tag_models}
    if len(vocabs) > 1:
        raise ConfigurationError(f"tagger checkpoints disagree on vocabulary config: {sorted(vocabs)}")


def boundary_probs(seg_models, rec) -> np.ndarray:
    return ensemble_boundary_probs([segmenter_forward(m, rec.features) for m in seg_models])


def predict_from_probs(rec, probs, score_fn: Callable, boundary_threshold=0.5, score_threshold=0.35,
                       min_gap=0.0, edge_snap=0.5) -> list[ScenePrediction]:
    """Decode ``probs`` into segments and score each with ``score_fn(rec, segments)``."""
    bounds = decode_boundaries(probs, rec.snippet_rate, boundary_threshold, min_gap)
    segments = boundaries_to_segments(bounds, rec.duration, edge_snap)
    scores = score_fn(rec, segments)
    return [ScenePrediction(seg, np.asarray(sc), apply_score_threshold(sc, score_threshold))
            for seg, sc in zip(segments, scores)]


def _map_records(fn, records, workers):
    records = sorted(records, key=lambda r: r.id)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, records))
    else:
        results = [fn(r) for r in records]
    return {r.id: res for r, res in zip(records, results)}


def predict(records, seg_models: list[SegmenterModel], tag_models: list[TaggerModel],
            boundary_threshold=0.5, score_threshold=0.35, min_gap=0.0, edge_snap=0.5,
            workers=1) -> dict[str, list[ScenePrediction]]:
    """Ensemble boundary probabilities, decode, then ensemble-tag every segment."""
    check_compatible(records, seg_models, tag_models)

    def one(rec):
        return predict_from_probs(rec, boundary_probs(seg_models, rec),
                                  lambda r, segs: tag_segments(tag_models, r, segs),
                                  boundary_threshold, score_threshold, min_gap, edge_snap)

    return _map_records(one, records, workers)


def perfect_predictions(records, score_threshold=0.35, edge_snap=0.5):
    """Predictions decoded from ground-truth transition labels and one-hot scores."""
    C = 1 + max((c for r in records for s in r.scenes for c in s.labels), default=0)

    def scores(rec, segments):
        out = []
        for start, end in segments:
            best = max(rec.scenes, key=lambda s: min(end, s.end) - max(start, s.start))
            v = np.zeros(C)
            v[list(best.labels)] = 1.0
            out.append(v)
        return out

    return {r.id: predict_from_probs(r, transform_ground_truth(r.scenes, r.n_snippets, r.snippet_rate),
                                     scores, 0.5, score_threshold, 0.0, edge_snap)
            for r in sorted(records, key=lambda r: r.id)}


# -- files ---------------------------------------------------------------

def write_predictions(path, predictions, durations) -> None:
    lines = []
    for vid in sorted(predictions):
        segs = [{"start": p.segment[0], "end": p.segment[1],
                 "scores": [float(x) for x in p.scores], "labels": list(p.labels)}
                for p in predictions[vid]]
        lines.append(json.dumps({"id": vid, "duration": durations[vid], "segments": segs}))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_predictions(path) -> dict[str, list[ScenePrediction]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                segs = [ScenePrediction((float(s["start"]), float(s["end"])),
                                        np.asarray(s["scores"], dtype=np.float64),
                                        tuple(int(c) for c in s.get("labels", [])))
                        for s in obj["segments"]]
                vid, duration = str(obj["id"]), float(obj["duration"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed prediction record: {exc!r}", lineno) from exc
            _check_tiling(vid, segs, duration)
            out[vid] = segs
    return out


def _check_tiling(vid, segs, duration, tol=1e-6):
    prev = 0.0
    for s in segs:
        if abs(s.segment[0] - prev) > tol or not s.segment[0] < s.segment[1]:
            raise ValidationError(f"video {vid!r}: predicted segments do not tile [0, {duration})")
        prev = s.segment[1]
    if segs and abs(prev - duration) > tol:
        raise ValidationError(f"video {vid!r}: segments end at {prev}, duration is {duration}")
    if len({len(s.scores) for s in segs}) > 1:
        raise ValidationError(f"video {vid!r}: score vectors differ in length")


# -- sweeps ------------------------------------------------------------------

def sweep(records, seg_models, tag_models, thresholds, which="score", boundary_threshold=0.5,
          score_threshold=0.35, min_gap=0.0, edge_snap=0.5, workers=1) -> list[dict]:
    """One evaluation per threshold with everything else fixed, rows sorted
    by threshold descending.  ``which`` picks the boundary or the score threshold."""
    if which not in ("score", "boundary"):
        raise ConfigurationError(f"sweep target must be 'score' or 'boundary', got {which!r}")
    thresholds = sorted({float(t) for t in thresholds}, reverse=True)
    if not thresholds or any(not 0.0 < t < 1.0 for t in thresholds):
        raise ConfigurationError("sweep thresholds must be a non-empty list inside (0, 1)")
    check_compatible(records, seg_models, tag_models)
    probs = _map_records(lambda r: boundary_probs(seg_models, r), records, workers)
    score_cache = {}

    def score_fn(rec, segments):
        key = (rec.id, tuple(segments))
        if key not in score_cache:
            score_cache[key] = tag_segments(tag_models, rec, segments)
        return score_cache[key]

    rows = []
    for t in thresholds:
        tb = t if which == "boundary" else boundary_threshold
        ts = t if which == "score" else score_threshold
        preds = {r.id: predict_from_probs(r, probs[r.id], score_fn, tb, ts, min_gap, edge_snap)
                 for r in sorted(records, key=lambda r: r.id)}
        rep = evaluate(preds, records, n_classes=tag_models[0].n_classes)
        n_labels = [len(p.labels) for ps in preds.values() for p in ps]
        rows.append({"threshold": t, "f1": rep.f1, "avg_map": rep.avg_map, "final": rep.final,
                     "mean_labels": float(np.mean(n_labels)) if n_labels else 0.0,
                     "predictions": preds})
    return rows


def evaluate_predictions(predictions, records, n_classes=None) -> MetricReport:
    return evaluate(predictions, records, n_classes=n_classes)
