"""Evaluation metrics: root-aligned joint/vertex errors, PCK AUC and 2D reprojection error."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .synthetic import HANDS, Camera, project_np

PCK_MAX_MM = 50.0
PCK_THRESHOLDS = np.linspace(0.0, PCK_MAX_MM, 101)
ROOT = 0


@dataclass
class SampleMetrics:
    mpjpe_mm: float
    mpvpe_mm: float
    pck_auc: float
    proj2d_px: float


def root_aligned(points: np.ndarray, joints: np.ndarray) -> np.ndarray:
    return points - joints[ROOT]


def pck_curve(errors_mm: np.ndarray, thresholds: np.ndarray = PCK_THRESHOLDS) -> np.ndarray:
    errors_mm = np.asarray(errors_mm).ravel()
    return (errors_mm[None, :] <= thresholds[:, None]).mean(axis=1)


def pck_auc(errors_mm: np.ndarray, thresholds: np.ndarray = PCK_THRESHOLDS) -> float:
    """Trapezoid area under the PCK curve, normalized by the threshold span."""
    curve = pck_curve(errors_mm, thresholds)
    return float(np.trapezoid(curve, thresholds) / (thresholds[-1] - thresholds[0]))


def sample_metrics(pred_v: Mapping[str, np.ndarray], gt_v: Mapping[str, np.ndarray],
                   regressor, cam: Camera) -> SampleMetrics:
    """Errors over both hands; 3D metrics in millimetres after per-hand root alignment."""
    joint_err, vert_err, proj_err = [], [], []
    for h in HANDS:
        reg = regressor[h] if isinstance(regressor, Mapping) else regressor
        pv, gv = np.asarray(pred_v[h], float), np.asarray(gt_v[h], float)
        pj, gj = reg @ pv, reg @ gv
        joint_err.append(np.linalg.norm(root_aligned(pj, pj) - root_aligned(gj, gj), axis=1))
        vert_err.append(np.linalg.norm(root_aligned(pv, pj) - root_aligned(gv, gj), axis=1))
        proj_err.append(np.linalg.norm(project_np(pv, cam) - project_np(gv, cam), axis=1))
    joint_mm = 1000.0 * np.concatenate(joint_err)
    return SampleMetrics(
        mpjpe_mm=float(joint_mm.mean()),
        mpvpe_mm=float(1000.0 * np.concatenate(vert_err).mean()),
        pck_auc=pck_auc(joint_mm),
        proj2d_px=float(np.concatenate(proj_err).mean()),
    )


def aggregate(per_sample: Sequence[SampleMetrics], seeds: Sequence[int] | None = None) -> dict:
    """Means over samples in the report layout ``{mpjpe_mm, ..., per_sample}``."""
    if not per_sample:
        raise ValueError("no samples to aggregate")
    rows = [asdict(m) for m in per_sample]
    if seeds is not None:
        for row, seed in zip(rows, seeds):
            row["seed"] = int(seed)
    keys = ("mpjpe_mm", "mpvpe_mm", "pck_auc", "proj2d_px")
    report = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    report["per_sample"] = rows
    return report


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2))
