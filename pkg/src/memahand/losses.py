"""The seven training losses and their weighted total.

Every L1 term is a mean over its index set and summed over the two hands,
except the normal term, which averages over hands as well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import LossWeights
from .hand_model import HandModel, mano_forward, regress_joints
from .mesh import unique_edges
from .refine import Prediction, project
from .synthetic import HANDS, Camera, HandGT

log = logging.getLogger(__name__)

TERMS = ("L_V", "L_J", "L_N", "L_E", "L_P", "L_Vmano", "L_consist")
DEGENERATE_AREA = 1e-14


class LossNaNError(ad.NumericError):
    def __init__(self, term: str):
        super().__init__(f"loss term {term} is not finite")
        self.term = term


def _hand(x, h):
    return x[h] if isinstance(x, Mapping) else x


def l1_mean(a, b) -> Tensor:
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ad.DimensionError(f"L1 operands differ in shape: {a.shape} vs {b.shape}")
    return ad.mean(ad.tabs(ad.sub(a, b)))


def _hand_sum(values) -> Tensor:
    total = None
    for v in values:
        total = v if total is None else ad.add(total, v)
    return total


def vertex_joint_loss(pred_v, gt_v, regressor, cam: Camera,
                      pixel_scale: float = 1.0) -> tuple[Tensor, Tensor]:
    """3D plus projected-2D mean L1 on vertices (L_V) and on regressed joints (L_J).

    The 2D terms are in pixels times ``pixel_scale``; training passes
    ``2 / (S - 1)`` so they live in normalized image units like the sampler.
    """
    def proj(x):
        return ad.mul(project(x, cam), pixel_scale)

    lv, lj = [], []
    for h in HANDS:
        v, g = ad.as_tensor(pred_v[h]), ad.as_tensor(gt_v[h])
        reg = _hand(regressor, h)
        lv.append(ad.add(l1_mean(v, g), l1_mean(proj(v), proj(g))))
        jv, jg = regress_joints(reg, v), regress_joints(reg, g)
        lj.append(ad.add(l1_mean(jv, jg), l1_mean(proj(jv), proj(jg))))
    return _hand_sum(lv), _hand_sum(lj)


def normalized_pixel_scale(image_size: int) -> float:
    return 2.0 / (image_size - 1)


def face_edges(v: Tensor, faces: np.ndarray) -> Tensor:
    """``F×3×3`` edge vectors (v1-v0, v2-v1, v0-v2) per face."""
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    return ad.stack([ad.sub(b, a), ad.sub(c, b), ad.sub(a, c)], axis=1)


def gt_face_normals(gt: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals and a validity mask (zero-area faces are invalid)."""
    cross = np.cross(gt[faces[:, 1]] - gt[faces[:, 0]], gt[faces[:, 2]] - gt[faces[:, 0]])
    norm = np.linalg.norm(cross, axis=1)
    valid = norm > DEGENERATE_AREA
    normals = np.zeros_like(cross)
    normals[valid] = cross[valid] / norm[valid, None]
    return normals, valid


def normal_loss(pred_v, gt_v, faces) -> Tensor:
    """Mean over (hand, face, edge) of ``|unit predicted edge . unit GT normal|``."""
    parts, count, skipped = [], 0, 0
    for h in HANDS:
        f = np.asarray(_hand(faces, h))
        normals, valid = gt_face_normals(np.asarray(ad.as_tensor(gt_v[h]).data), f)
        skipped += int((~valid).sum())
        f, normals = f[valid], normals[valid]
        if len(f) == 0:
            continue
        edges = ad.normalize(face_edges(ad.as_tensor(pred_v[h]), f))
        dots = ad.tsum(ad.mul(edges, normals[:, None, :]), axis=2)
        parts.append(ad.tsum(ad.tabs(dots)))
        count += 3 * len(f)
    if skipped:
        log.warning("normal loss skipped %d degenerate ground-truth faces", skipped)
    if not parts:
        return Tensor(0.0)
    return ad.div(_hand_sum(parts), float(count))


def edge_loss(pred_v, gt_v, edges) -> Tensor:
    """Per hand, mean over unique edges of ``| |e| - |e_gt| |``."""
    out = []
    for h in HANDS:
        e = np.asarray(_hand(edges, h))
        v, g = ad.as_tensor(pred_v[h]), np.asarray(ad.as_tensor(gt_v[h]).data)
        lengths = ad.row_norm(ad.sub(v[e[:, 1]], v[e[:, 0]]))
        gt_len = np.linalg.norm(g[e[:, 1]] - g[e[:, 0]], axis=1)
        out.append(l1_mean(lengths, gt_len))
    return _hand_sum(out)


def mano_losses(theta, beta, gt_theta, gt_beta, models, gt_v) -> tuple[Tensor, Tensor]:
    """Parameter L1 (L_P) and L1 between the parametric mesh and GT vertices (L_Vmano)."""
    lp, lvm = [], []
    for h in HANDS:
        lp.append(ad.add(l1_mean(theta[h], gt_theta[h]), l1_mean(beta[h], gt_beta[h])))
        verts, _ = mano_forward(_hand(models, h), theta[h], beta[h])
        lvm.append(l1_mean(verts, gt_v[h]))
    return _hand_sum(lp), _hand_sum(lvm)


def consistency_loss(pred_v, theta, beta, models, regressor=None) -> Tensor:
    """Agreement of the direct mesh with the parametric mesh, on vertices and joints.

    Neither side is detached, so both representations receive gradient.
    """
    out = []
    for h in HANDS:
        model = _hand(models, h)
        reg = model.joint_regressor if regressor is None else _hand(regressor, h)
        mano_v, _ = mano_forward(model, theta[h], beta[h])
        v = ad.as_tensor(pred_v[h])
        out.append(ad.add(l1_mean(mano_v, v), l1_mean(regress_joints(reg, mano_v), regress_joints(reg, v))))
    return _hand_sum(out)


@dataclass
class LossReport:
    terms: dict[str, float]
    weights: tuple[float, ...]
    total: float

    def row(self) -> list[float]:
        return [self.terms[t] for t in TERMS] + [self.total]


def total_loss(terms: Mapping[str, Tensor], weights: LossWeights = LossWeights()) -> tuple[Tensor, LossReport]:
    """Weighted sum of the seven terms; raises ``LossNaNError`` naming a non-finite term."""
    missing = [t for t in TERMS if t not in terms]
    if missing:
        raise KeyError(f"missing loss terms {missing}")
    lam = weights.as_tuple()
    total = None
    for name, w in zip(TERMS, lam):
        t = ad.as_tensor(terms[name])
        if not np.isfinite(t.data).all():
            raise LossNaNError(name)
        part = ad.mul(t, w)
        total = part if total is None else ad.add(total, part)
    values = {t: ad.as_tensor(terms[t]).item() for t in TERMS}
    return total, LossReport(values, lam, total.item())


def compute_terms(pred: Prediction, hands: Mapping[str, HandGT], models: Mapping[str, HandModel],
                  image_size: int, cam: Camera | None = None) -> dict[str, Tensor]:
    """All seven terms for one sample; 2D terms in normalized image units."""
    cam = cam or pred.camera
    gt_v = {h: hands[h].vertices for h in HANDS}
    regs = {h: models[h].joint_regressor for h in HANDS}
    lv, lj = vertex_joint_loss(pred.vertices, gt_v, regs, cam, normalized_pixel_scale(image_size))
    lp, lvm = mano_losses(pred.theta, pred.beta, {h: hands[h].theta for h in HANDS},
                          {h: hands[h].beta for h in HANDS}, models, gt_v)
    return {
        "L_V": lv,
        "L_J": lj,
        "L_N": normal_loss(pred.vertices, gt_v, {h: models[h].faces for h in HANDS}),
        "L_E": edge_loss(pred.vertices, gt_v, {h: unique_edges(models[h].faces) for h in HANDS}),
        "L_P": lp,
        "L_Vmano": lvm,
        "L_consist": consistency_loss(pred.vertices, pred.theta, pred.beta, models),
    }
