"""NeXt-SoftDBoF: grouped soft bag-of-features pooling.

Each snippet ``x_i`` is expanded linearly to ``lambda * N`` dims.  In every
group ``g`` it is softly assigned over ``K`` clusters with a softmax and
weighted by a sigmoid group attention.  The assignments are then summed over
snippets and groups:

    y_k = sum_{i, g} sigmoid(a_g . xe_i + c_g) * softmax_k(w_gk . xe_i + b_gk)

Groups are indexed from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ConfigurationError, DimensionError, ValidationError


@dataclass(frozen=True)
class SoftDBoFConfig:
    input_dim: int = 64
    expansion: int = 2
    groups: int = 8
    clusters: int = 64
    normalize_by_length: bool = False

    def validate(self):
        if int(self.expansion) != self.expansion or self.expansion < 1:
            raise ConfigurationError(f"expansion must be a positive integer, got {self.expansion}")
        if self.groups < 1 or self.clusters < 1 or self.input_dim < 1:
            raise ConfigurationError("input_dim, groups and clusters must be >= 1")
        return self

    @property
    def expanded_dim(self) -> int:
        return self.expansion * self.input_dim


def param_names(prefix: str) -> dict[str, str]:
    return {k: f"{prefix}/{k}" for k in ("expand/W", "expand/b", "att/W", "att/b", "cluster/W", "cluster/b")}


def init_softdbof(store: K.ParamStore, prefix: str, config: SoftDBoFConfig, rng) -> None:
    config.validate()
    N, M, G, Kc = config.input_dim, config.expanded_dim, config.groups, config.clusters
    n = param_names(prefix)
    store.add(n["expand/W"], rng.normal(0, 1.0 / math.sqrt(N), (N, M)))
    store.add(n["expand/b"], np.zeros(M))
    store.add(n["att/W"], rng.normal(0, 1.0 / math.sqrt(M), (M, G)))
    store.add(n["att/b"], np.zeros(G))
    store.add(n["cluster/W"], rng.normal(0, 1.0 / math.sqrt(M), (M, G * Kc)))
    store.add(n["cluster/b"], np.zeros(G * Kc))


def softdbof_param_count(input_dim, expansion, groups, clusters) -> int:
    M = expansion * input_dim
    return (input_dim * M + M) + (M * groups + groups) + (M * groups * clusters + groups * clusters)


def nextvlad_param_count(input_dim, expansion, groups, clusters) -> int:
    """Same layers as NeXt-SoftDBoF plus the ``K x (lambda N / G)`` cluster centres."""
    M = expansion * input_dim
    return softdbof_param_count(input_dim, expansion, groups, clusters) + clusters * (M // groups)


# -- graph-level pieces -------------------------------------------------------

def _p(graph, params, prefix, key):
    name = f"{prefix}/{key}"
    return graph.param(name, params[name])


def expand(graph, x, params, prefix) -> K.Var:
    W = _p(graph, params, prefix, "expand/W")
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"expand: input width {x.shape[-1]} != {W.shape[0]}")
    return K.dense(x, W, _p(graph, params, prefix, "expand/b"))


def attention_logits(graph, xe, params, prefix) -> K.Var:
    return K.dense(xe, _p(graph, params, prefix, "att/W"), _p(graph, params, prefix, "att/b"))


def cluster_logits(graph, xe, params, prefix) -> K.Var:
    return K.dense(xe, _p(graph, params, prefix, "cluster/W"), _p(graph, params, prefix, "cluster/b"))


def canonical_order(X: np.ndarray) -> np.ndarray:
    """Row permutation sorting snippets lexicographically, so the sum is
    accumulated in the same order whatever the input order."""
    return np.lexsort(X.T[::-1])


def aggregate_graph(graph, X, params, prefix, config: SoftDBoFConfig,
                    canonical: bool = True) -> K.Var:
    """Record the pooled descriptor ``y`` (length ``clusters``) on ``graph``."""
    Xv = np.asarray(X.value if isinstance(X, K.Var) else X, dtype=np.float64)
    if Xv.ndim != 2 or Xv.shape[0] == 0:
        raise ValidationError(f"aggregate needs at least one snippet, got shape {Xv.shape}")
    if Xv.shape[1] != config.input_dim:
        raise DimensionError(f"aggregate: feature width {Xv.shape[1]} != {config.input_dim}")
    T, G, Kc = Xv.shape[0], config.groups, config.clusters
    if isinstance(X, K.Var):
        x = K.gather_rows(X, canonical_order(Xv)) if canonical else X
    else:
        x = graph.constant(Xv[canonical_order(Xv)] if canonical else Xv)
    xe = expand(graph, x, params, prefix)
    att = K.sigmoid(attention_logits(graph, xe, params, prefix))                 # [T, G]
    assign = K.softmax_rows(K.reshape(cluster_logits(graph, xe, params, prefix), (T * G, Kc)))
    y = K.reshape(K.matmul(K.reshape(att, (1, T * G)), assign), (Kc,))
    if config.normalize_by_length:
        y = K.scale(y, 1.0 / T)
    return y


# -- numpy conveniences ----------------------------------------------------------

def _eval(fn, params, *args):
    g = K.Graph()
    return fn(g, *args).value.copy()


def expand_np(x, params, prefix):
    return _eval(lambda g, x: expand(g, g.constant(x), params, prefix), params, x)


def group_attention(xe, g_idx, params, prefix) -> float:
    """``alpha_g`` for one expanded snippet."""
    G = params[f"{prefix}/att/b"].shape[0]
    if not 0 <= g_idx < G:
        raise ConfigurationError(f"group index {g_idx} outside [0, {G})")
    a = _eval(lambda g, x: K.sigmoid(attention_logits(g, g.constant(x), params, prefix)), params, xe)
    return float(a[..., g_idx])


def cluster_assign(xe, g_idx, params, prefix) -> np.ndarray:
    """``alpha_gk`` over the K clusters of group ``g_idx`` for one expanded snippet."""
    G = params[f"{prefix}/att/b"].shape[0]
    if not 0 <= g_idx < G:
        raise ConfigurationError(f"group index {g_idx} outside [0, {G})")
    Kc = params[f"{prefix}/cluster/b"].shape[0] // G

    def fn(g, x):
        logits = K.reshape(cluster_logits(g, g.constant(x), params, prefix), (G, Kc))
        return K.softmax_rows(logits)

    return _eval(fn, params, xe)[g_idx]


def aggregate(X, params, prefix, config: SoftDBoFConfig, canonical: bool = True) -> np.ndarray:
    return _eval(lambda g: aggregate_graph(g, X, params, prefix, config, canonical), params)


def attention_mass(X, params, prefix, config: SoftDBoFConfig) -> float:
    """``sum_{i, g} alpha_g(xe_i)``; equals ``aggregate(...).sum()`` exactly in exact arithmetic."""
    g = K.Graph()
    xe = expand(g, g.constant(np.asarray(X, dtype=np.float64)), params, prefix)
    return float(K.sigmoid(attention_logits(g, xe, params, prefix)).value.sum())
