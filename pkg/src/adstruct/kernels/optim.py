"""Parameter storage, Adam, and EMA shadow weights."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import ContractError


class ParamStore:
    """Named float64 parameters with Adam moments and an EMA shadow.

    The shadow starts equal to the parameter and the moments start at zero.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.shadow: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ContractError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.shadow[name] = arr.copy()
        return arr

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def weights(self, ema: bool = False) -> dict[str, np.ndarray]:
        return self.shadow if ema else self.params

    def n_values(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> ParamStore:
        out = ParamStore()
        for attr in ("params", "m", "v", "shadow"):
            setattr(out, attr, {k: a.copy() for k, a in getattr(self, attr).items()})
        out.step = self.step
        return out


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray],
              lr: float | Mapping[str, float] | Callable[[str], float],
              beta1=0.9, beta2=0.999, eps=1e-8) -> ParamStore:
    """One bias-corrected Adam update, in place.

    ``lr`` may be a float, a per-name mapping, or a callable on the name.
    Parameters absent from ``grads`` keep their value and moments.
    """
    for name, g in grads.items():
        if name not in store.params:
            raise ContractError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != store.params[name].shape:
            raise ContractError(
                f"gradient shape {np.shape(g)} != parameter shape {store.params[name].shape} for {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        if callable(lr):
            rate = lr(name)
        elif isinstance(lr, Mapping):
            rate = lr[name]
        else:
            rate = lr
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if rate != 0.0:
            store.params[name] -= rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def ema_update(store: ParamStore, decay: float = 0.9) -> ParamStore:
    for name, p in store.params.items():
        s = store.shadow[name]
        s *= decay
        s += (1.0 - decay) * p
    return store
