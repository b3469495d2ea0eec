"""Tape-based reverse-mode differentiation.

A :class:`Graph` records primitive operations in execution order, so the
tape is topologically sorted by construction.  Each node stores a closure
mapping the gradient of its output to gradients of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Var:
    """Handle to one tensor recorded on a graph."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, id_: int):
        self.graph = graph
        self.id = id_

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.values[self.id].shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


class Graph:
    def __init__(self):
        self.values: list[np.ndarray] = []
        self.nodes: list[Node] = []
        self.param_ids: dict[str, int] = {}

    def _new(self, value) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        self.values.append(arr)
        return Var(self, len(self.values) - 1)

    def constant(self, value) -> Var:
        return self._new(value)

    def param(self, name: str, value) -> Var:
        """Register a named parameter; repeated names return the same Var."""
        if name in self.param_ids:
            return Var(self, self.param_ids[name])
        var = self._new(value)
        self.param_ids[name] = var.id
        return var

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.graph is not self:
                raise ContractError("Var belongs to a different graph")
            return x
        return self.constant(x)

    def record(self, op, inputs, value, backward) -> Var:
        out = self._new(value)
        self.nodes.append(Node(op, tuple(v.id for v in inputs), out.id, backward))
        return out


def backward(graph: Graph, loss: Var | int) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every registered parameter.

    Parameters the loss does not depend on get a zero tensor.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    loss_val = graph.values[loss_id]
    if loss_val.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss_val.shape}")
    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss_val)}
    for node in reversed(graph.nodes):
        if node.output > loss_id:
            continue
        g = grads.get(node.output)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    out = {}
    for name, pid in graph.param_ids.items():
        g = grads.get(pid)
        out[name] = np.zeros_like(graph.values[pid]) if g is None else g
    return out
