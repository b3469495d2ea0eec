"""Scene-level multi-label tagger.

Visual branch: one NeXt-SoftDBoF per feature stream, concatenated, then a
dense head to ``C`` logits.  Text branch: the global-local token sequence
through the attention-pooling encoder, then a dense head.  The two logit
vectors are concatenated and mapped to ``C`` fused logits.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels as K
from .aggregation import SoftDBoFConfig, aggregate_graph, init_softdbof
from .errors import ConfigurationError, DimensionError, ValidationError
from .evaluation import ScenePrediction, average_map
from .text_fusion import (
    TextEncoderConfig,
    TokenSequence,
    VocabConfig,
    build_input,
    dedup_ocr,
    encode_text_graph,
    init_text_encoder,
    tokenize,
)

log = logging.getLogger(__name__)

HEADS = ("head_v", "head_t", "head_f")
SWEEP_THRESHOLDS = (0.5, 0.45, 0.4, 0.35)


@dataclass(frozen=True)
class TaggerConfig:
    n_classes: int = 82
    input_dim: int = 64
    stream_dims: tuple[int, ...] | None = None
    expansion: int = 2
    groups: int = 8
    clusters: int = 64
    normalize_by_length: bool = False
    vocab_size: int = 8192
    hash_seed: int = 0
    embed_dim: int = 64
    text_out: int = 128
    max_len: int = 256
    fusion: str = "concat"
    lr_head: float = 1e-4
    lr_rest: float = 1e-5
    batch_size: int = 32
    epochs: int = 100
    ema_decay: float = 0.9
    seed: int = 0
    score_threshold: float = 0.35
    use_ema: bool = True

    @property
    def streams(self) -> tuple[int, ...]:
        return tuple(self.stream_dims) if self.stream_dims else (self.input_dim,)

    @property
    def vocab(self) -> VocabConfig:
        return VocabConfig(self.vocab_size, self.hash_seed)

    def softdbof(self, dim) -> SoftDBoFConfig:
        return SoftDBoFConfig(dim, self.expansion, self.groups, self.clusters, self.normalize_by_length)

    def text(self) -> TextEncoderConfig:
        return TextEncoderConfig(self.vocab, self.embed_dim, self.text_out, self.max_len)

    def validate(self):
        if self.n_classes < 1:
            raise ConfigurationError(f"n_classes must be >= 1, got {self.n_classes}")
        if sum(self.streams) != self.input_dim:
            raise ConfigurationError(f"stream_dims {self.stream_dims} do not sum to input_dim {self.input_dim}")
        if self.fusion not in ("concat", "average"):
            raise ConfigurationError(f"fusion must be 'concat' or 'average', got {self.fusion!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.score_threshold < 1.0:
            raise ConfigurationError(f"score_threshold must be in (0, 1), got {self.score_threshold}")
        self.vocab.validate()
        for d in self.streams:
            self.softdbof(d).validate()
        return self

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if d.get("stream_dims") is not None:
            d["stream_dims"] = tuple(d["stream_dims"])
        return cls(**d).validate()


@dataclass
class TaggerModel:
    config: TaggerConfig
    store: K.ParamStore
    history: list[dict] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes


def is_head_param(name: str) -> bool:
    return name.split("/", 1)[0] in HEADS


def init_tagger(config: TaggerConfig, seed: int | None = None) -> TaggerModel:
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = K.ParamStore()
    for s, d in enumerate(config.streams):
        init_softdbof(store, f"vis{s}", config.softdbof(d), rng)
    init_text_encoder(store, "text", config.text(), rng)
    C = config.n_classes
    kv = config.clusters * len(config.streams)
    store.add("head_v/W", rng.normal(0, 1.0 / math.sqrt(kv), (kv, C)))
    store.add("head_v/b", np.zeros(C))
    store.add("head_t/W", rng.normal(0, 0.1 / math.sqrt(config.text_out), (config.text_out, C)))
    store.add("head_t/b", np.zeros(C))
    # starts as the sum of the two branch logits
    store.add("head_f/W", np.vstack([np.eye(C), np.eye(C)]))
    store.add("head_f/b", np.zeros(C))
    return TaggerModel(config, store)


# -- inputs ---------------------------------------------------------------

@dataclass(frozen=True)
class SceneInput:
    features: np.ndarray          # [T_s, D]; may have zero rows
    text: TokenSequence


def snippet_range(segment, snippet_rate, T) -> tuple[int, int]:
    """Snippets whose start time lies in ``[start, end)``."""
    start, end = segment
    lo = max(0, math.ceil(start * snippet_rate - 1e-9))
    hi = min(T, math.ceil(end * snippet_rate - 1e-9))
    return lo, max(lo, hi)


def scene_inputs(rec, segment, config: TaggerConfig, ocr_clean=None) -> SceneInput:
    """Slice a record for one segment: features, scene-local OCR, global ASR."""
    lo, hi = snippet_range(segment, rec.snippet_rate, rec.n_snippets)
    frames = ocr_clean if ocr_clean is not None else dedup_ocr(rec.ocr_tokens)
    vocab = config.vocab
    ocr_ids = tokenize([w for f in frames[lo:hi] for w in f], vocab)
    asr_ids = tokenize(list(rec.asr_tokens), vocab)
    return SceneInput(rec.features[lo:hi], build_input(ocr_ids, asr_ids, config.max_len))


# -- forward ---------------------------------------------------------------

def _forward(graph, params, config: TaggerConfig, inp: SceneInput, allow_empty=False):
    P = lambda n: graph.param(n, params[n])  # noqa: E731
    f = np.asarray(inp.features, dtype=np.float64)
    if f.ndim != 2 or (f.shape[0] and f.shape[1] != config.input_dim):
        raise DimensionError(f"tagger expects [T, {config.input_dim}] features, got {f.shape}")
    if f.shape[0] == 0 and not allow_empty:
        raise ValidationError("scene has no snippets")
    descs = []
    col = 0
    for s, d in enumerate(config.streams):
        if f.shape[0] == 0:
            descs.append(graph.constant(np.zeros(config.clusters)))
        else:
            descs.append(aggregate_graph(graph, f[:, col:col + d], params, f"vis{s}", config.softdbof(d)))
        col += d
    desc = descs[0] if len(descs) == 1 else K.concat(descs, axis=0)
    v_logits = K.dense(desc, P("head_v/W"), P("head_v/b"))
    t_logits = K.dense(encode_text_graph(graph, inp.text, params, "text"), P("head_t/W"), P("head_t/b"))
    if config.fusion == "concat":
        return K.sigmoid(K.dense(K.concat([v_logits, t_logits], axis=0), P("head_f/W"), P("head_f/b")))
    return K.scale(K.add(K.sigmoid(v_logits), K.sigmoid(t_logits)), 0.5)


def tag_scene(model: TaggerModel, scene_features, scene_ocr, video_asr, ema=None,
              allow_empty=False) -> np.ndarray:
    """Class probabilities for one scene.

    ``scene_ocr`` is the scene's per-frame OCR token lists (deduplicated
    here) and ``video_asr`` the whole-video transcript tokens.
    """
    cfg = model.config
    frames = dedup_ocr(scene_ocr)
    ocr_ids = tokenize([w for fr in frames for w in fr], cfg.vocab)
    seq = build_input(ocr_ids, tokenize(list(video_asr), cfg.vocab), cfg.max_len)
    return tag_input(model, SceneInput(np.asarray(scene_features, dtype=np.float64), seq), ema,
                     allow_empty)


def tag_input(model: TaggerModel, inp: SceneInput, ema=None, allow_empty=False) -> np.ndarray:
    use_ema = model.config.use_ema if ema is None else ema
    g = K.Graph()
    return _forward(g, model.store.weights(ema=use_ema), model.config, inp, allow_empty).value.copy()


def tag_segments(models, rec, segments, ema=None) -> list[np.ndarray]:
    """Ensemble-mean scores for each segment of ``rec``; empty segments get
    a zero visual descriptor."""
    models = models if isinstance(models, (list, tuple)) else [models]
    cfg = models[0].config
    frames = dedup_ocr(rec.ocr_tokens)
    out = []
    for seg in segments:
        inp = scene_inputs(rec, seg, cfg, frames)
        out.append(ensemble_scene_scores([tag_input(m, inp, ema, allow_empty=True) for m in models]))
    return out


# -- loss, ensembling, thresholds ---------------------------------------------

def _label_vector(labels, C):
    y = np.zeros(C)
    for c in labels:
        if not 0 <= int(c) < C:
            raise ValidationError(f"class id {c} outside [0, {C})")
        y[int(c)] = 1.0
    return y


def tagging_loss_graph(scores: K.Var, labels) -> K.Var:
    return K.bce_loss(scores, _label_vector(labels, scores.shape[0]), reduction="sum")


def tagging_loss(scores, labels) -> float:
    """Per-class BCE summed over classes."""
    g = K.Graph()
    return float(tagging_loss_graph(g.constant(np.asarray(scores, dtype=np.float64)), labels).value)


def ensemble_scene_scores(score_list: Sequence) -> np.ndarray:
    if len(score_list) == 0:
        raise ValidationError("cannot ensemble an empty list of scores")
    arrs = [np.asarray(s, dtype=np.float64) for s in score_list]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionError(f"score vectors differ in shape: {[a.shape for a in arrs]}")
    return K.stable_mean(arrs)


def apply_score_threshold(pred, theta: float) -> tuple[int, ...]:
    """Classes scoring at least ``theta``; the argmax class if none does."""
    if not 0.0 < theta < 1.0:
        raise ConfigurationError(f"threshold must be in (0, 1), got {theta}")
    scores = np.asarray(pred.scores if isinstance(pred, ScenePrediction) else pred)
    labels = tuple(int(c) for c in np.flatnonzero(scores >= theta))
    return labels if labels else (int(np.argmax(scores)),)


# -- training -----------------------------------------------------------------

def _training_items(records, config):
    items = []
    for rec in records:
        frames = dedup_ocr(rec.ocr_tokens)
        for s in rec.scenes:
            inp = scene_inputs(rec, (s.start, s.end), config, frames)
            if inp.features.shape[0] == 0:
                continue
            items.append((inp, s.labels))
    return items


def train_tagger(records, config: TaggerConfig | None = None, model=None, log_path=None) -> TaggerModel:
    """Adam + EMA training on every annotated scene of ``records``.

    Head parameters (``head_v``, ``head_t``, ``head_f``) use ``lr_head``;
    everything else uses ``lr_rest``.  The batch loss is the mean over scenes
    of the class-summed BCE.
    """
    config = (config or (model.config if model else TaggerConfig())).validate()
    for rec in records:
        if rec.features.shape[1] != config.input_dim:
            raise DimensionError(
                f"video {rec.id!r}: feature width {rec.features.shape[1]} != input_dim {config.input_dim}")
        for s in rec.scenes:
            _label_vector(s.labels, config.n_classes)
    items = _training_items(records, config)
    if not items:
        raise ValidationError("no annotated scenes to train the tagger on")
    model = init_tagger(config) if model is None else TaggerModel(config, model.store, list(model.history))
    store = model.store
    lr = lambda name: config.lr_head if is_head_param(name) else config.lr_rest  # noqa: E731
    rng = np.random.default_rng([config.seed, 23])
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(len(items))
            losses = []
            for s in range(0, len(perm), config.batch_size):
                idx = perm[s:s + config.batch_size]
                grads = {n: np.zeros_like(p) for n, p in store.params.items()}
                total = 0.0
                for i in idx:
                    inp, labels = items[int(i)]
                    g = K.Graph()
                    loss = K.scale(tagging_loss_graph(_forward(g, store.params, config, inp), labels),
                                   1.0 / len(idx))
                    total += float(loss.value)
                    for n, gr in K.backward(g, loss).items():
                        grads[n] += gr
                K.adam_step(store, grads, lr)
                K.ema_update(store, config.ema_decay)
                losses.append(total)
            entry = {"epoch": len(model.history), "loss": float(np.mean(losses))}
            model.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
            log.debug("tagger epoch %(epoch)d loss %(loss).5f", entry)
    finally:
        if log_fh:
            log_fh.close()
    return model


def scene_map(models, records, thresholds=None) -> float:
    """Average mAP when tagging the ground-truth scenes of ``records``."""
    preds = {}
    for rec in records:
        segs = [(s.start, s.end) for s in rec.scenes]
        preds[rec.id] = [ScenePrediction(seg, sc) for seg, sc in zip(segs, tag_segments(models, rec, segs))]
    gts = {r.id: r.scenes for r in records}
    kw = {} if thresholds is None else {"thresholds": thresholds}
    C = (models[0] if isinstance(models, (list, tuple)) else models).n_classes
    return average_map(preds, gts, C, **kw)[1]


def save_tagger(model: TaggerModel, path) -> None:
    hp = asdict(model.config)
    K.save_checkpoint(path, model.store, "tagger", hp,
                      {"history": model.history,
                       "vocab": {"size": model.config.vocab_size, "seed": model.config.hash_seed}})


def load_tagger(path) -> TaggerModel:
    store, manifest = K.load_checkpoint(path, kind="tagger")
    cfg = TaggerConfig.from_dict(manifest["hyperparameters"])
    return TaggerModel(cfg, store, list(manifest["extra"].get("history", [])))
