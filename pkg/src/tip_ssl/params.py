"""Named parameter storage with deterministic initialisation."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .numeric import Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside ``±bound·std``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(np.float32)


class ParamStore(OrderedDict):
    """Ordered ``name -> Tensor`` mapping; every tensor requires grad."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.rng = np.random.default_rng(seed)

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter slot {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self[name] = t
        return t

    def weight(self, name: str, shape) -> Tensor:
        return self._add(name, trunc_normal(self.rng, shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape, dtype=np.float32))

    def ones(self, name: str, shape) -> Tensor:
        return self._add(name, np.ones(shape, dtype=np.float32))

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.items() if k.startswith(prefix)}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}
