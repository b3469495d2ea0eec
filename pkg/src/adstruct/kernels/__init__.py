"""Minimal differentiable compute layer used by both models."""

from . import backend
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .graph import Graph, Var, backward
from .ops import (
    EPS,
    add,
    bce_loss,
    bce_terms,
    concat,
    conv1d_dilated,
    dense,
    dropout,
    focal_loss,
    focal_terms,
    gather_rows,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    stable_mean,
    sum_,
)
from .optim import ParamStore, adam_step, ema_update

__all__ = [
    "EPS", "FORMAT_VERSION", "Graph", "ParamStore", "Var", "adam_step", "add",
    "backend", "backward", "bce_loss", "bce_terms", "concat", "conv1d_dilated",
    "dense", "dropout", "ema_update", "focal_loss", "focal_terms", "gather_rows",
    "load_checkpoint", "matmul", "mean", "mul", "relu", "reshape", "save_checkpoint",
    "scale", "sigmoid", "softmax_rows", "stable_mean", "sum_",
]
