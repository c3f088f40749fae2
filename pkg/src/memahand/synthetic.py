"""Seeded synthetic two-hand samples rendered as joint splat images."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .hand_model import N_JOINTS, N_SHAPE, HandModel, mano_forward, regress_joints

log = logging.getLogger(__name__)

HANDS = ("L", "R")
SPLAT_SIGMA = 1.5


@dataclass(frozen=True)
class Camera:
    """Weak perspective: pixels = scale * (x, y) + translation."""

    scale: float
    translation: tuple[float, float]

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"camera scale must be positive, got {self.scale}")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["scale"]), tuple(float(t) for t in d["translation"]))


@dataclass
class HandGT:
    theta: np.ndarray
    beta: np.ndarray
    vertices: np.ndarray
    joints: np.ndarray        # joint regressor applied to vertices


@dataclass
class SyntheticSample:
    seed: int
    image: np.ndarray         # 3×S×S
    hands: dict[str, HandGT]
    camera: Camera


def project_np(points: np.ndarray, cam: Camera) -> np.ndarray:
    return cam.scale * points[:, :2] + np.asarray(cam.translation)


def render_splats(points_px: np.ndarray, size: int, sigma: float = SPLAT_SIGMA) -> np.ndarray:
    """Max over isotropic Gaussians centred at ``points_px`` (x = column, y = row)."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    img = np.zeros((size, size))
    for x, y in np.asarray(points_px).reshape(-1, 2):
        img = np.maximum(img, np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * sigma ** 2)))
    return img


def draw_params(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    theta = rng.uniform(-0.4, 0.4, size=3 * N_JOINTS)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    theta[:3] = axis * rng.uniform(0.0, 0.5 * np.pi)
    beta = rng.uniform(-1.0, 1.0, size=N_SHAPE)
    return theta, beta


def draw_camera(rng: np.random.Generator, image_size: int) -> Camera:
    c = (image_size - 1) / 2.0
    scale = rng.uniform(0.85, 1.0) * image_size * 3.2
    return Camera(float(scale), (float(c + rng.uniform(-2, 2)), float(c + rng.uniform(-2, 2))))


def hand_gt(model: HandModel, theta: np.ndarray, beta: np.ndarray) -> HandGT:
    verts, _ = mano_forward(model, theta, beta)
    joints = regress_joints(model.joint_regressor, verts)
    return HandGT(theta, beta, verts.data, joints.data)


def render_sample(hands: dict[str, HandGT], cam: Camera, image_size: int) -> np.ndarray:
    left = render_splats(project_np(hands["L"].joints, cam), image_size)
    right = render_splats(project_np(hands["R"].joints, cam), image_size)
    return np.stack([left, right, np.maximum(left, right)])


def synthesize_sample(model_l: HandModel, model_r: HandModel, seed: int,
                      image_size: int = 64) -> SyntheticSample:
    """Both hands share the camera; the mirrored templates sit side by side,
    so the projections overlap once the wrists rotate."""
    rng = np.random.default_rng([seed, 0x5EED])
    params = {h: draw_params(rng) for h in HANDS}
    cam = draw_camera(rng, image_size)
    return build_sample(model_l, model_r, seed, params, cam, image_size)


def build_sample(model_l, model_r, seed, params, cam, image_size) -> SyntheticSample:
    models = {"L": model_l, "R": model_r}
    hands = {h: hand_gt(models[h], *params[h]) for h in HANDS}
    return SyntheticSample(seed, render_sample(hands, cam, image_size), hands, cam)


# ---------------------------------------------------------------- manifest


def write_manifest(path: str | Path, samples: list[SyntheticSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({
                "seed": s.seed,
                "camera": s.camera.to_dict(),
                "params": {h: {"theta": s.hands[h].theta.tolist(), "beta": s.hands[h].beta.tolist()}
                           for h in HANDS},
            }) + "\n")


def read_manifest(path: str | Path, model_l, model_r, image_size: int = 64) -> list[SyntheticSample]:
    """Rebuild samples (images re-rendered). Lines without a seed are skipped."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "seed" not in rec:
                log.warning("manifest line %d has no seed; skipped", lineno)
                continue
            if "params" in rec and "camera" in rec:
                params = {h: (np.asarray(rec["params"][h]["theta"], float),
                              np.asarray(rec["params"][h]["beta"], float)) for h in HANDS}
                out.append(build_sample(model_l, model_r, int(rec["seed"]), params,
                                        Camera.from_dict(rec["camera"]), image_size))
            else:
                out.append(synthesize_sample(model_l, model_r, int(rec["seed"]), image_size))
    return out


def image_tensor(sample: SyntheticSample) -> Tensor:
    return Tensor(sample.image)
