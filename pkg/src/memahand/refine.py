"""Mesh alignment refinement: project the coarse mesh, gather image features
under each vertex, and correct vertices and MANO parameters with residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import FeaturePyramid
from .hand_model import N_POSE, N_SHAPE
from .mmib import TokenSet, apply_heads, init_heads, init_mmib, mmib_forward
from .params import ParamStore
from .synthetic import HANDS, Camera


@dataclass
class Prediction:
    vertices: dict[str, Tensor]
    theta: dict[str, Tensor]
    beta: dict[str, Tensor]
    camera: Camera

    def __post_init__(self):
        for h in HANDS:
            if not np.isfinite(self.vertices[h].data).all():
                raise ad.NumericError(f"non-finite vertices for hand {h}")
            if self.theta[h].shape != (N_POSE,) or self.beta[h].shape != (N_SHAPE,):
                raise ad.DimensionError("theta/beta must have 48/10 entries")

    def numpy(self) -> dict:
        return {h: {"vertices": self.vertices[h].data, "theta": self.theta[h].data,
                    "beta": self.beta[h].data} for h in HANDS}


def project(vertices: Tensor, cam: Camera) -> Tensor:
    """Weak perspective ``s * (x, y) + t`` in pixels."""
    xy = ad.as_tensor(vertices)[:, :2]
    return ad.add(ad.mul(xy, cam.scale), np.asarray(cam.translation, dtype=float))


def pixels_to_normalized(px: Tensor, image_size: int) -> Tensor:
    """Pixel coordinates (0..S-1) to the sampler's [-1, 1] range; the pyramid
    maps cover the whole image so one conversion serves every scale."""
    return ad.sub(ad.mul(px, 2.0 / (image_size - 1)), 1.0)


def init_refine(store: ParamStore, cfg: ModelConfig, name: str = "refine") -> None:
    c_total = sum(cfg.pyramid_channels)
    d = cfg.dims[-1] + cfg.d_refine
    for it in range(cfg.refine_iters):
        pre = f"{name}{it}"
        store.linear(f"{pre}.mlp1", c_total, cfg.d_refine)
        store.linear(f"{pre}.mlp2", cfg.d_refine, cfg.d_refine)
        init_mmib(store, f"{pre}.block", d, cfg)
        init_heads(store, f"{pre}.head", d)


def sample_pyramid(vertices: Tensor, cam: Camera, pyramid: FeaturePyramid, image_size: int) -> Tensor:
    """``N × (C1+C2+C3)`` features under each projected vertex (border clamped)."""
    coords = pixels_to_normalized(project(vertices, cam), image_size)
    return ad.concat([ad.bilinear_sample(m, coords) for m in pyramid.maps], axis=1)


def mesh_aligned_features(p, name: str, vertices: Tensor, cam: Camera, pyramid: FeaturePyramid,
                          image_size: int) -> tuple[Tensor, Tensor]:
    """Per-vertex features ``phi_v`` (N×D_r) and their vertex mean ``phi_m`` (D_r)."""
    feats = sample_pyramid(vertices, cam, pyramid, image_size)
    hidden = ad.gelu(ad.linear(feats, p[f"{name}.mlp1.w"], p[f"{name}.mlp1.b"]))
    phi_v = ad.linear(hidden, p[f"{name}.mlp2.w"], p[f"{name}.mlp2.b"])
    return phi_v, ad.mean(phi_v, axis=0)


def _broadcast_row(row: Tensor, n: int) -> Tensor:
    return ad.add(np.zeros((n, row.shape[0])), row)


def refine_step(p, name: str, tokens: TokenSet, pred: Prediction, pyramid: FeaturePyramid,
                lap, cfg: ModelConfig) -> Prediction:
    phi = {h: mesh_aligned_features(p, name, pred.vertices[h], pred.camera, pyramid, cfg.image_size)
           for h in HANDS}
    rect = TokenSet(
        vertex_l=ad.concat([tokens.vertex_l, phi["L"][0]], axis=1),
        vertex_r=ad.concat([tokens.vertex_r, phi["R"][0]], axis=1),
        mano_l=ad.concat([tokens.mano_l, _broadcast_row(phi["L"][1], 2)], axis=1),
        mano_r=ad.concat([tokens.mano_r, _broadcast_row(phi["R"][1], 2)], axis=1),
        grid=None, level=tokens.level)
    out = mmib_forward(p, f"{name}.block", rect, lap, cfg)
    dv, dtheta, dbeta = apply_heads(p, f"{name}.head", out)
    return Prediction({h: ad.add(pred.vertices[h], dv[h]) for h in HANDS},
                      {h: ad.add(pred.theta[h], dtheta[h]) for h in HANDS},
                      {h: ad.add(pred.beta[h], dbeta[h]) for h in HANDS}, pred.camera)


def refine_forward(p, tokens: TokenSet, coarse: Prediction, pyramid: FeaturePyramid, lap,
                   cfg: ModelConfig, name: str = "refine") -> Prediction:
    """Apply ``cfg.refine_iters`` refinement blocks, each with its own weights.

    The finest-level vertex tokens are reused each round; only the image
    features follow the updated mesh.
    """
    if tokens.n_vertices != coarse.vertices["L"].shape[0]:
        raise ad.DimensionError("refinement runs on the finest mesh level only")
    pred = coarse
    for it in range(cfg.refine_iters):
        pred = refine_step(p, f"{name}{it}", tokens, pred, pyramid, lap, cfg)
    return pred
