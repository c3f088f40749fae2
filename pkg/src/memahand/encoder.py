"""Small convolutional encoder-decoder producing a global feature and a 3-level pyramid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .params import ParamStore


@dataclass
class FeaturePyramid:
    f_gap: Tensor              # D_gap
    maps: list[Tensor]         # coarse -> fine, each C×H×W

    def __post_init__(self):
        if len(self.maps) != 3:
            raise ad.DimensionError("a feature pyramid has exactly three maps")
        sizes = [m.shape[1] for m in self.maps]
        if not sizes[0] < sizes[1] < sizes[2]:
            raise ad.DimensionError(f"pyramid maps must grow coarse to fine, got {sizes}")


def init_encoder(store: ParamStore, cfg: ModelConfig, prefix: str = "enc") -> None:
    c_in = 3
    for i, c in enumerate(cfg.enc_channels):
        store.uniform(f"{prefix}.conv{i}.w", (c, c_in, 3, 3), c_in * 9)
        store.add(f"{prefix}.conv{i}.b", np.zeros(c))
        c_in = c
    for i, c in enumerate(cfg.pyramid_channels):
        store.uniform(f"{prefix}.up{i}.w", (c_in, c, 2, 2), c_in)
        store.add(f"{prefix}.up{i}.b", np.zeros(c))
        c_in = c


def encode(p, image: Tensor, cfg: ModelConfig, prefix: str = "enc") -> FeaturePyramid:
    """Image ``3×S×S`` -> global pooled feature and maps at S/8, S/4, S/2."""
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] != image.shape[2]:
        raise ad.DimensionError(f"expected a square 3 x S x S image, got {image.shape}")
    s = image.shape[1]
    if s < 32 or s & (s - 1):
        raise ad.DimensionError(f"image side must be a power of two >= 32, got {s}")
    x = image
    for i in range(len(cfg.enc_channels)):
        x = ad.gelu(ad.conv2d(x, p[f"{prefix}.conv{i}.w"], p[f"{prefix}.conv{i}.b"], stride=2, pad=1))
    f_gap = ad.mean(x, axis=(1, 2))
    maps = []
    for i in range(len(cfg.pyramid_channels)):
        x = ad.gelu(ad.conv_transpose2x2(x, p[f"{prefix}.up{i}.w"], p[f"{prefix}.up{i}.b"]))
        maps.append(x)
    return FeaturePyramid(f_gap, maps)


def grid_lattice(g: int) -> np.ndarray:
    """``g²×2`` normalized (x, y) cell centres, row-major in y."""
    if g < 1:
        raise ad.ContractError("grid size must be positive")
    c = -1.0 + (2.0 * np.arange(g) + 1.0) / g
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def init_grid_tokens(store: ParamStore, name: str, channels: int, dim: int) -> None:
    store.linear(name, channels, dim)


def grid_tokens(p, name: str, fmap: Tensor, g: int) -> Tensor:
    """Sample ``fmap`` on a uniform g×g lattice and project channels to tokens."""
    if g < 1:
        raise ad.ContractError("grid size must be positive")
    if g > min(fmap.shape[1:]):
        raise ad.ContractError(f"grid {g} exceeds feature map {fmap.shape[1:]}")
    feats = ad.bilinear_sample(fmap, Tensor(grid_lattice(g)))
    return ad.linear(feats, p[f"{name}.w"], p[f"{name}.b"])
