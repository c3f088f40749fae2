"""Named parameter store with seeded initialization."""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor


class ParamStore(Mapping[str, Tensor]):
    """Ordered ``name -> Tensor`` map; every entry is a trainable leaf."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self._t: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._t:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True)
        self._t[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int) -> Tensor:
        """He-scaled uniform, bound sqrt(6 / fan_in), so GELU stacks keep their scale."""
        bound = np.sqrt(6.0 / fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def linear(self, name: str, d_in: int, d_out: int, zero: bool = False) -> None:
        """``name.w`` (d_in×d_out) and ``name.b``; He-uniform unless ``zero``."""
        if zero:
            self.add(f"{name}.w", np.zeros((d_in, d_out)))
        else:
            self.uniform(f"{name}.w", (d_in, d_out), d_in)
        self.add(f"{name}.b", np.zeros(d_out))

    def norm(self, name: str, d: int) -> None:
        self.add(f"{name}.g", np.ones(d))
        self.add(f"{name}.b", np.zeros(d))

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._t.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for k, t in self._t.items():
            if k not in state:
                raise KeyError(f"checkpoint lacks tensor {k}")
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != t.shape:
                raise ValueError(f"tensor {k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.copy()

    def randomize(self, seed: int, scale: float = 0.3) -> None:
        """Overwrite every tensor with seeded noise (gradient probes use this
        so that zero-initialized heads do not hide upstream paths)."""
        rng = np.random.default_rng(seed)
        for t in self._t.values():
            t.data = t.data + scale * rng.normal(size=t.shape) / np.sqrt(max(t.shape[0], 1))
