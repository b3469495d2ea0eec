"""Dilated-TCN scene segmenter.

Per-snippet transition classification: an input projection, two residual
TCN blocks (dilations 1, 2, 4, 8), a plain convolution, and a dense
classifier with a sigmoid output.  Also the label transform, training loop,
and boundary decoding.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels as K
from .errors import ConfigurationError, DimensionError, ValidationError
from .evaluation import f1_from_counts, match_boundaries

log = logging.getLogger(__name__)

DILATIONS = (1, 2, 4, 8)


@dataclass(frozen=True)
class SegmenterConfig:
    input_dim: int = 64
    hidden: int = 64
    kernel_size: int = 3
    n_blocks: int = 2
    dropout: float = 0.3
    residual: bool = True
    branch_init: float = 0.25
    # training
    loss: str = "bce"
    pos_weight: float | str = "auto"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    loss_scale: float = 1.0
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    ema_decay: float = 0.9
    seed: int = 0
    gt_mode: str = "modified"
    label_width: int = 0
    # decoding
    threshold: float = 0.5
    min_gap: float = 0.0
    edge_snap: float = 0.5
    use_ema: bool = True

    def validate(self):
        if self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.loss not in ("bce", "focal"):
            raise ConfigurationError(f"loss must be 'bce' or 'focal', got {self.loss!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gt_mode not in ("modified", "original"):
            raise ConfigurationError(f"gt_mode must be 'modified' or 'original', got {self.gt_mode!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not (self.pos_weight == "auto" or float(self.pos_weight) > 0):
            raise ConfigurationError(f"pos_weight must be 'auto' or positive, got {self.pos_weight}")
        return self

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__}).validate()


@dataclass
class SegmenterModel:
    config: SegmenterConfig
    store: K.ParamStore
    history: list[dict] = field(default_factory=list)

    @property
    def receptive_radius(self) -> int:
        half = (self.config.kernel_size - 1) // 2
        return half * (self.config.n_blocks * sum(DILATIONS) + 1)


class Boundary(NamedTuple):
    time: float
    confidence: float


def init_segmenter(config: SegmenterConfig, seed: int | None = None) -> SegmenterModel:
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    k, H, D = config.kernel_size, config.hidden, config.input_dim
    # residual branches start small so the stream stays O(1) through all layers
    branch_std = math.sqrt(2.0 / (k * H)) * config.branch_init
    store = K.ParamStore()
    store.add("in/W", rng.normal(0, math.sqrt(1.0 / D), (1, D, H)))
    store.add("in/b", np.zeros(H))
    for b in range(config.n_blocks):
        for d in DILATIONS:
            store.add(f"block{b}/d{d}/W", rng.normal(0, branch_std, (k, H, H)))
            store.add(f"block{b}/d{d}/b", np.zeros(H))
    store.add("final/W", rng.normal(0, math.sqrt(2.0 / (k * H)), (k, H, H)))
    store.add("final/b", np.zeros(H))
    store.add("cls/W", rng.normal(0, 0.01, (H, 1)))
    store.add("cls/b", np.zeros(1))
    return SegmenterModel(config, store)


def _forward(graph, params, config, features, training, rng):
    P = lambda name: graph.param(name, params[name])  # noqa: E731
    h = K.conv1d_dilated(graph.constant(features), P("in/W"), 1, P("in/b"))
    for b in range(config.n_blocks):
        for d in DILATIONS:
            z = K.relu(K.conv1d_dilated(h, P(f"block{b}/d{d}/W"), d, P(f"block{b}/d{d}/b")))
            h = K.add(h, z) if config.residual else z
        h = K.dropout(h, config.dropout, rng, training)
    h = K.relu(K.conv1d_dilated(h, P("final/W"), 1, P("final/b")))
    logits = K.dense(h, P("cls/W"), P("cls/b"))
    return K.sigmoid(K.reshape(logits, (-1,)))


def _check_features(model, features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != model.config.input_dim:
        raise DimensionError(
            f"segmenter expects [T, {model.config.input_dim}] features, got {f.shape}")
    return f


def segmenter_forward(model: SegmenterModel, features, training: bool = False, seed=None,
                      ema: bool | None = None) -> np.ndarray:
    """Per-snippet transition probabilities, length T."""
    f = _check_features(model, features)
    use_ema = model.config.use_ema if ema is None else ema
    params = model.store.weights(ema=use_ema and not training)
    g = K.Graph()
    return _forward(g, params, model.config, f, training, seed).value.copy()


# -- labels -------------------------------------------------------------

def _nearest_index(t, rate, T):
    return min(max(int(math.floor(t * rate + 0.5)), 0), T - 1)


def transform_ground_truth(scenes, T: int, snippet_rate: float, mode: str = "modified",
                           width: int = 0) -> np.ndarray:
    """Binary transition labels.

    ``modified`` marks the snippets nearest to every scene start and end;
    ``original`` marks scene ends only.  ``width`` widens each positive into
    a band of ``2 * width + 1`` snippets.
    """
    if mode not in ("modified", "original"):
        raise ConfigurationError(f"unknown ground-truth mode {mode!r}")
    labels = np.zeros(T)
    for s in scenes:
        start, end = (s.start, s.end) if hasattr(s, "start") else (s[0], s[1])
        idx = [_nearest_index(end, snippet_rate, T)]
        if mode == "modified":
            idx.append(_nearest_index(start, snippet_rate, T))
        for i in idx:
            labels[max(0, i - width):min(T, i + width + 1)] = 1.0
    return labels


# -- decoding -----------------------------------------------------------------

def decode_boundaries(probs, snippet_rate: float, threshold: float = 0.5,
                      min_gap_seconds: float = 0.0) -> list[Boundary]:
    """Threshold + strict local maximum within +-ceil(0.5 * rate) snippets,
    then merge boundaries closer than ``min_gap_seconds`` (higher confidence wins)."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must be in (0, 1), got {threshold}")
    if min_gap_seconds < 0:
        raise ConfigurationError(f"min_gap_seconds must be >= 0, got {min_gap_seconds}")
    p = np.ascontiguousarray(probs, dtype=np.float64)
    radius = int(math.ceil(0.5 * snippet_rate))
    cands = [Boundary(t / snippet_rate, float(p[t]))
             for t in backend_local_maxima(p, threshold, radius)]
    if min_gap_seconds > 0 and len(cands) > 1:
        kept = []
        for b in sorted(cands, key=lambda b: (-b.confidence, b.time)):
            if all(abs(b.time - k.time) >= min_gap_seconds for k in kept):
                kept.append(b)
        cands = sorted(kept)
    return cands


def backend_local_maxima(p, threshold, radius):
    return K.backend.local_maxima(p, float(threshold), int(radius))


def boundaries_to_segments(boundaries, duration: float, edge_snap: float = 0.0):
    """Tile ``[0, duration)`` at the given boundary times.

    Times within ``edge_snap`` seconds of either end are absorbed by that
    end.
    """
    if not duration > 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    times = []
    for b in boundaries:
        t = b.time if isinstance(b, Boundary) else float(b)
        if t < 0 or t > duration + 1e-9:
            raise ValidationError(f"boundary {t} outside [0, {duration}]")
        if t <= edge_snap or t >= duration - edge_snap or t <= 0 or t >= duration:
            continue
        times.append(t)
    cuts = [0.0] + sorted(set(times)) + [float(duration)]
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


def ensemble_boundary_probs(prob_sequences: Sequence) -> np.ndarray:
    if not prob_sequences:
        raise ValidationError("cannot ensemble an empty list")
    arrs = [np.asarray(p, dtype=np.float64) for p in prob_sequences]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionError(f"probability sequences differ in length: {[a.shape for a in arrs]}")
    return K.stable_mean(arrs)


def predict_segments(model_or_models, rec, threshold=None, min_gap=None, edge_snap=None):
    """Segments for one record from one model or an ensemble."""
    models = model_or_models if isinstance(model_or_models, (list, tuple)) else [model_or_models]
    cfg = models[0].config
    probs = ensemble_boundary_probs([segmenter_forward(m, rec.features) for m in models])
    bounds = decode_boundaries(probs, rec.snippet_rate,
                               cfg.threshold if threshold is None else threshold,
                               cfg.min_gap if min_gap is None else min_gap)
    return boundaries_to_segments(bounds, rec.duration,
                                  cfg.edge_snap if edge_snap is None else edge_snap)


def boundary_f1(model_or_models, records, **kw) -> float:
    """Pooled F1@0.5s of decoded interior boundaries over ``records``."""
    tp = fp = fn = 0
    for rec in records:
        segs = predict_segments(model_or_models, rec, **kw)
        m = match_boundaries([s[0] for s in segs[1:]], rec.transition_times())
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
    return f1_from_counts(tp, fp, fn)[2]


# -- training -----------------------------------------------------------

def _batch_loss_grads(model, batch, labels, params, rng_seed, epoch):
    cfg = model.config
    n_total = sum(len(labels[i]) for i in batch)
    if cfg.pos_weight == "auto":
        n_pos = sum(float(labels[i].sum()) for i in batch)
        pos_weight = (n_total - n_pos) / n_pos if n_pos > 0 else 1.0
    else:
        pos_weight = float(cfg.pos_weight)
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    total = 0.0
    for i, (rec_features, y) in ((i, (batch[i], labels[i])) for i in batch):
        g = K.Graph()
        p = _forward(g, params, cfg, rec_features, True,
                     np.random.default_rng([rng_seed, epoch, i]))
        if cfg.loss == "bce":
            loss = K.bce_loss(p, y, pos_weight=pos_weight, reduction="sum")
        else:
            loss = K.focal_loss(p, y, cfg.focal_gamma, cfg.focal_alpha, reduction="sum")
        loss = K.scale(loss, cfg.loss_scale / n_total)
        total += float(loss.value)
        for name, gr in K.backward(g, loss).items():
            grads[name] += gr
    return total, grads


def train_segmenter(records, config: SegmenterConfig | None = None, model=None,
                    val_records=None, eval_every: int = 0, log_path=None) -> SegmenterModel:
    """Adam + EMA training on annotated ``records``.

    Passing ``model`` resumes from its parameters, moments, and step count.
    ``history`` gains one entry per epoch with the mean batch loss and, every
    ``eval_every`` epochs, the validation F1.
    """
    config = (config or (model.config if model else SegmenterConfig())).validate()
    for rec in records:
        if not rec.annotated:
            raise ValidationError(f"video {rec.id!r}: training requires scene annotations")
        if rec.features.shape[1] != config.input_dim:
            raise DimensionError(
                f"video {rec.id!r}: feature width {rec.features.shape[1]} != input_dim {config.input_dim}")
    if model is None:
        model = init_segmenter(config)
    else:
        model = SegmenterModel(config, model.store, list(model.history))
    store = model.store
    feats = {i: r.features for i, r in enumerate(records)}
    labels = {i: transform_ground_truth(r.scenes, r.n_snippets, r.snippet_rate,
                                        config.gt_mode, config.label_width)
              for i, r in enumerate(records)}
    order_rng = np.random.default_rng([config.seed, 17])
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            perm = order_rng.permutation(len(records))
            losses = []
            for s in range(0, len(perm), config.batch_size):
                idx = [int(i) for i in perm[s:s + config.batch_size]]
                batch = {i: feats[i] for i in idx}
                loss, grads = _batch_loss_grads(model, batch, labels, store.params,
                                                config.seed, store.step)
                K.adam_step(store, grads, config.lr)
                K.ema_update(store, config.ema_decay)
                losses.append(loss)
            entry = {"epoch": len(model.history), "loss": float(np.mean(losses)) if losses else 0.0}
            if val_records and eval_every and (epoch + 1) % eval_every == 0:
                entry["val_f1"] = boundary_f1(model, val_records)
            model.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
            log.debug("segmenter epoch %(epoch)d loss %(loss).5f", entry)
    finally:
        if log_fh:
            log_fh.close()
    return model


def save_segmenter(model: SegmenterModel, path) -> None:
    K.save_checkpoint(path, model.store, "segmenter", asdict(model.config),
                      {"history": model.history})


def load_segmenter(path) -> SegmenterModel:
    store, manifest = K.load_checkpoint(path, kind="segmenter")
    cfg = SegmenterConfig.from_dict(manifest["hyperparameters"])
    return SegmenterModel(cfg, store, list(manifest["extra"].get("history", [])))
