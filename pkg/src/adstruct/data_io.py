"""Dataset model, the JSON-lines dataset format, and a synthetic generator.

Dataset file: one JSON object per line::

    {"id": "v0", "snippet_rate": 4.0,
     "features": [[...], ...],              # T rows of D floats
     "ocr": [["tok", ...], ...],            # T per-snippet token lists
     "asr": ["tok", ...],                   # whole-video transcript
     "scenes": [{"start": 0.0, "end": 2.5, "labels": [3]}, ...]}

Instead of ``features`` a line may carry ``"features_file": "v0.npy"``, a
sidecar ``.npy`` array resolved relative to the dataset file.  Blank lines
are ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, ValidationError

TIME_TOL = 1e-6


@dataclass(frozen=True)
class SceneAnnotation:
    start: float
    end: float
    labels: tuple[int, ...] = ()

    @property
    def interval(self) -> tuple[float, float]:
        return (self.start, self.end)


@dataclass(frozen=True, eq=False)
class VideoRecord:
    id: str
    snippet_rate: float
    features: np.ndarray
    ocr_tokens: tuple[tuple[str, ...], ...]
    asr_tokens: tuple[str, ...]
    scenes: tuple[SceneAnnotation, ...] = ()

    @property
    def n_snippets(self) -> int:
        return int(self.features.shape[0])

    @property
    def duration(self) -> float:
        return self.n_snippets / self.snippet_rate

    @property
    def annotated(self) -> bool:
        return len(self.scenes) > 0

    def transition_times(self) -> list[float]:
        """Interior scene boundaries (starts of every scene but the first)."""
        return [s.start for s in self.scenes[1:]]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[str]
    val: list[str]
    split_seed: int


def make_record(id, snippet_rate, features, ocr_tokens=None, asr_tokens=(), scenes=()):
    """Build and validate a :class:`VideoRecord` from plain Python data."""
    feats = np.array(features, dtype=np.float64)
    if feats.ndim == 1 and feats.size == 0:
        feats = feats.reshape(0, 0)
    if ocr_tokens is None:
        ocr_tokens = [[] for _ in range(len(feats))]
    rec = VideoRecord(
        id=str(id),
        snippet_rate=float(snippet_rate),
        features=feats,
        ocr_tokens=tuple(tuple(str(t) for t in frame) for frame in ocr_tokens),
        asr_tokens=tuple(str(t) for t in asr_tokens),
        scenes=tuple(
            s if isinstance(s, SceneAnnotation)
            else SceneAnnotation(float(s[0]), float(s[1]), tuple(sorted(int(c) for c in s[2])))
            for s in scenes
        ),
    )
    validate_record(rec)
    return rec


def validate_record(rec: VideoRecord, n_classes: int | None = None) -> None:
    def fail(msg):
        raise ValidationError(f"video {rec.id!r}: {msg}")

    if not rec.snippet_rate > 0:
        fail(f"snippet_rate must be positive, got {rec.snippet_rate}")
    f = rec.features
    if f.ndim != 2 or f.shape[0] < 1:
        fail(f"features must be a non-empty [T, D] matrix, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        fail("features contain non-finite values")
    if len(rec.ocr_tokens) != f.shape[0]:
        fail(f"{len(rec.ocr_tokens)} OCR frames for {f.shape[0]} snippets")
    if not rec.scenes:
        return
    duration = rec.duration
    prev_end = 0.0
    for i, s in enumerate(rec.scenes):
        if not 0 <= s.start < s.end:
            fail(f"scene {i} has invalid interval [{s.start}, {s.end})")
        if abs(s.start - prev_end) > TIME_TOL:
            kind = "overlaps" if s.start < prev_end else "leaves a gap before"
            fail(f"scene {i} [{s.start}, {s.end}) {kind} the previous scene ending at {prev_end}")
        if not s.labels:
            fail(f"scene {i} has no labels")
        if any(c < 0 or (n_classes is not None and c >= n_classes) for c in s.labels):
            fail(f"scene {i} has a label outside [0, {n_classes})")
        prev_end = s.end
    if abs(prev_end - duration) > TIME_TOL:
        fail(f"scenes end at {prev_end} but the video lasts {duration}")


# -- file format ----------------------------------------------------------

def record_to_json(rec: VideoRecord, features_file: str | None = None) -> dict:
    out = {"id": rec.id, "snippet_rate": rec.snippet_rate}
    if features_file is None:
        out["features"] = rec.features.tolist()
    else:
        out["features_file"] = features_file
    out["ocr"] = [list(frame) for frame in rec.ocr_tokens]
    out["asr"] = list(rec.asr_tokens)
    out["scenes"] = [{"start": s.start, "end": s.end, "labels": list(s.labels)} for s in rec.scenes]
    return out


def save_dataset(records, path, sidecar: bool = False) -> None:
    """Write ``records`` as JSON lines; ``sidecar`` stores features as .npy files."""
    path = Path(path)
    lines = []
    for rec in records:
        ff = None
        if sidecar:
            ff = f"{path.stem}.{rec.id}.npy"
            np.save(path.parent / ff, rec.features.astype("<f8"), allow_pickle=False)
        lines.append(json.dumps(record_to_json(rec, ff), ensure_ascii=False))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def record_from_json(obj: dict, base_dir: Path | None = None, line: int | None = None) -> VideoRecord:
    try:
        if "features_file" in obj:
            feats = np.load((base_dir or Path(".")) / obj["features_file"], allow_pickle=False)
        else:
            feats = obj["features"]
        scenes = [(s["start"], s["end"], s.get("labels", [])) for s in obj.get("scenes", [])]
        return make_record(obj["id"], obj["snippet_rate"], feats, obj.get("ocr"),
                           obj.get("asr", []), scenes)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ParseError(f"malformed record: {exc!r}", line) from exc


def load_dataset(path) -> list[VideoRecord]:
    path = Path(path)
    records = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            rec = record_from_json(obj, path.parent, lineno)
            if rec.id in seen:
                raise ValidationError(f"video {rec.id!r}: duplicate id")
            seen.add(rec.id)
            records.append(rec)
    return records


def split_dataset(records, val_fraction: float = 0.10, seed: int = 0) -> DatasetSplit:
    """Random train/validation split with ``round(val_fraction * N)`` val videos."""
    ids = [r.id if isinstance(r, VideoRecord) else str(r) for r in records]
    if not 0.0 < val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    if len(ids) < 2:
        raise ConfigurationError(f"need at least 2 videos to split, got {len(ids)}")
    n_val = int(math.floor(val_fraction * len(ids) + 0.5))
    perm = np.random.default_rng(seed).permutation(len(ids))
    val = sorted(ids[i] for i in perm[:n_val])
    train = sorted(ids[i] for i in perm[n_val:])
    return DatasetSplit(train=train, val=val, split_seed=seed)


# -- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_videos: int = 50
    t_range: tuple[int, int] = (48, 112)
    D: int = 64
    C: int = 8
    vocab: int = 200
    seed: int = 7
    snippet_rate: float = 4.0
    separation: float = 4.0
    noise: float = 0.5
    min_scene: int = 8
    max_scenes: int = 6
    pair_prob: float = 0.3
    ocr_label_prob: float = 0.7


def class_prototypes(config: SyntheticConfig) -> np.ndarray:
    """One direction per class, norm ``separation``; a scene's centroid is
    the sum over its labels."""
    rng = np.random.default_rng([config.seed, 1])
    u = rng.normal(size=(config.C, config.D))
    if config.C <= config.D:
        q, _ = np.linalg.qr(u.T)
        u = q.T[: config.C]
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * config.separation


def label_token(c: int) -> str:
    return f"tag{c}"


def generate_synthetic(config: SyntheticConfig | None = None, **overrides) -> list[VideoRecord]:
    """Seed-deterministic tagged-and-segmented toy videos.

    Snippet features scatter (``noise``) around a centroid fixed by the
    scene's label set, adjacent scenes always differ in label set, OCR frames
    mostly show a label token of their scene in runs of repeated subtitles,
    and the ASR transcript mixes every scene's label tokens with noise words.
    """
    cfg = config or SyntheticConfig()
    if overrides:
        cfg = SyntheticConfig(**{**cfg.__dict__, **overrides})
    if cfg.D < 4:
        raise ConfigurationError(f"D must be >= 4, got {cfg.D}")
    if cfg.C < 2:
        raise ConfigurationError(f"C must be >= 2, got {cfg.C}")
    lo, hi = cfg.t_range
    if lo > hi or lo < 2 * cfg.min_scene:
        raise ConfigurationError(
            f"t_range {cfg.t_range} cannot hold 2 scenes of >= {cfg.min_scene} snippets")
    if cfg.n_videos < 0:
        raise ConfigurationError("n_videos must be >= 0")
    protos = class_prototypes(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    noise_words = [f"w{j}" for j in range(cfg.vocab)]
    records = []
    for v in range(cfg.n_videos):
        T = int(rng.integers(lo, hi + 1))
        n_max = min(cfg.max_scenes, T // cfg.min_scene)
        n_scenes = int(rng.integers(2, n_max + 1))
        # cut points with every scene >= min_scene snippets
        slack = T - n_scenes * cfg.min_scene
        extra = np.sort(rng.integers(0, slack + 1, size=n_scenes - 1))
        cuts = [0] + [int(e) + (i + 1) * cfg.min_scene for i, e in enumerate(extra)] + [T]
        labels = []
        for _ in range(n_scenes):
            while True:
                k = 2 if rng.random() < cfg.pair_prob else 1
                ls = tuple(sorted(int(c) for c in rng.choice(cfg.C, size=k, replace=False)))
                if not labels or ls != labels[-1]:
                    break
            labels.append(ls)
        feats = np.empty((T, cfg.D))
        ocr = []
        for s in range(n_scenes):
            a, b = cuts[s], cuts[s + 1]
            centroid = protos[list(labels[s])].sum(axis=0)
            feats[a:b] = centroid + cfg.noise * rng.normal(size=(b - a, cfg.D))
            t = a
            while t < b:
                run = int(rng.integers(2, 5))
                words = [noise_words[int(rng.integers(cfg.vocab))]]
                if rng.random() < cfg.ocr_label_prob:
                    words.insert(0, label_token(int(rng.choice(labels[s]))))
                for _ in range(min(run, b - t)):
                    ocr.append(list(words))
                t += run
        asr = [label_token(c) for ls in labels for c in ls]
        asr += [noise_words[int(rng.integers(cfg.vocab))] for _ in range(int(rng.integers(3, 9)))]
        asr = [asr[i] for i in rng.permutation(len(asr))]
        rate = cfg.snippet_rate
        scenes = [(cuts[s] / rate, cuts[s + 1] / rate, labels[s]) for s in range(n_scenes)]
        records.append(make_record(f"syn{v:04d}", rate, feats, ocr, asr, scenes))
    return records
