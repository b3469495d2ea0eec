"""OCR clean-up, ``[CLS] ocr [SEP] asr`` input construction, and a small
attention-pooling text encoder.

Token ids 0-3 are reserved; every other token hashes into ``[4, V)``.
"""

from __future__ import annotations

import hashlib
import math
import unicodedata
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ConfigurationError, ValidationError

CLS, SEP, PAD, UNK = 0, 1, 2, 3
N_RESERVED = 4
SEG_CLS, SEG_OCR, SEG_SEP, SEG_ASR = 0, 1, 2, 3


@dataclass(frozen=True)
class VocabConfig:
    size: int = 8192
    seed: int = 0

    def validate(self):
        if self.size <= N_RESERVED:
            raise ConfigurationError(f"vocabulary size must exceed {N_RESERVED}, got {self.size}")
        return self


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __post_init__(self):
        t, s = self.tokens, self.segment_ids
        if len(t) != len(s):
            raise ValidationError("tokens and segment ids differ in length")
        if not t or t[0] != CLS or s[0] != SEG_CLS or t.count(CLS) != 1:
            raise ValidationError("sequence must hold exactly one CLS, at position 0")
        if t.count(SEP) != 1:
            raise ValidationError("sequence must hold exactly one SEP")
        j = t.index(SEP)
        if s[j] != SEG_SEP or any(x != SEG_OCR for x in s[1:j]) or any(x != SEG_ASR for x in s[j + 1:]):
            raise ValidationError("segment ids must read CLS, OCR*, SEP, ASR*")

    def __len__(self):
        return len(self.tokens)


def _is_cjk(ch):
    return unicodedata.name(ch, "").startswith(("CJK", "HIRAGANA", "KATAKANA", "HANGUL"))


def split_words(text: str) -> list[str]:
    """Whitespace split, with every CJK character as its own word."""
    out = []
    for word in text.split():
        buf = ""
        for ch in word:
            if _is_cjk(ch):
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(ch)
            else:
                buf += ch
        if buf:
            out.append(buf)
    return out


def token_id(word: str, vocab: VocabConfig) -> int:
    key = vocab.seed.to_bytes(8, "little", signed=True)
    h = hashlib.blake2b(word.encode("utf-8"), digest_size=8, key=key).digest()
    return N_RESERVED + int.from_bytes(h, "little") % (vocab.size - N_RESERVED)


def tokenize(raw, vocab: VocabConfig) -> list[int]:
    """Hash words of ``raw`` (a string or a sequence of strings) to ids."""
    vocab.validate()
    texts = [raw] if isinstance(raw, str) else list(raw)
    return [token_id(w, vocab) for text in texts for w in split_words(text)]


def dedup_ocr(per_frame_tokens):
    """Drop tokens already present in the previous frame's original list."""
    frames = [list(f) for f in per_frame_tokens]
    out = []
    for i, frame in enumerate(frames):
        if i == 0:
            out.append(list(frame))
        else:
            prev = set(frames[i - 1])
            out.append([t for t in frame if t not in prev])
    return out


def build_input(ocr_ids, asr_ids, max_len: int = 256) -> TokenSequence:
    """``[CLS] ocr [SEP] asr``; over-long input loses OCR tail first, then ASR tail."""
    if max_len < 3:
        raise ConfigurationError(f"max_len must be >= 3, got {max_len}")
    ocr, asr = list(ocr_ids), list(asr_ids)
    room = max_len - 2
    n_ocr = min(len(ocr), max(0, room - len(asr)))
    n_asr = min(len(asr), room - n_ocr)
    tokens = [CLS] + ocr[:n_ocr] + [SEP] + asr[:n_asr]
    segs = [SEG_CLS] + [SEG_OCR] * n_ocr + [SEG_SEP] + [SEG_ASR] * n_asr
    return TokenSequence(tuple(tokens), tuple(segs))


# -- encoder ----------------------------------------------------------------

@dataclass(frozen=True)
class TextEncoderConfig:
    vocab: VocabConfig = VocabConfig()
    embed_dim: int = 64
    out_dim: int = 128
    max_len: int = 256


def init_text_encoder(store: K.ParamStore, prefix: str, config: TextEncoderConfig, rng) -> None:
    V, E = config.vocab.size, config.embed_dim
    store.add(f"{prefix}/tok_emb", rng.normal(0, 1.0, (V, E)))
    store.add(f"{prefix}/seg_emb", rng.normal(0, 1.0, (4, E)))
    store.add(f"{prefix}/query", rng.normal(0, 1.0 / math.sqrt(E), (E,)))
    store.add(f"{prefix}/proj", rng.normal(0, 1.0 / math.sqrt(E), (E, config.out_dim)))


def _encode(graph, seq: TokenSequence, params, prefix, return_weights=False):
    P = lambda k: graph.param(f"{prefix}/{k}", params[f"{prefix}/{k}"])  # noqa: E731
    tok = P("tok_emb")
    ids = np.asarray(seq.tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= tok.shape[0]):
        raise ValidationError(f"token id outside [0, {tok.shape[0]})")
    h = K.add(K.gather_rows(tok, ids), K.gather_rows(P("seg_emb"), np.asarray(seq.segment_ids)))
    E = h.shape[1]
    scores = K.scale(K.matmul(h, K.reshape(P("query"), (E, 1))), 1.0 / math.sqrt(E))
    a = K.softmax_rows(K.reshape(scores, (1, -1)), mask=(ids != PAD)[None, :])
    pooled = K.matmul(a, h)                                     # [1, E]
    out = K.reshape(K.matmul(pooled, P("proj")), (-1,))
    return (out, a) if return_weights else out


def encode_text_graph(graph, seq, params, prefix="text") -> K.Var:
    return _encode(graph, seq, params, prefix)


def encode_text(seq: TokenSequence, params, prefix="text") -> np.ndarray:
    return _encode(K.Graph(), seq, params, prefix).value.copy()


def attention_weights(seq: TokenSequence, params, prefix="text") -> np.ndarray:
    return _encode(K.Graph(), seq, params, prefix, return_weights=True)[1].value[0].copy()
