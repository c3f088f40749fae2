"""Parametric hand layer: shape blend, forward kinematics and linear blend skinning.

The layer follows the MANO pipeline (template + shape basis, joint regression,
per-joint axis-angle rotations along a 16-joint kinematic tree, skinning)
without pose-dependent corrective blendshapes. Since the original model
files are not redistributable, :func:`synthesize_model` procedurally builds
hand-shaped meshes with any vertex count, including the 778-vertex layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import is_edge_manifold, unique_edges

N_JOINTS = 16
N_POSE = 3 * N_JOINTS
N_SHAPE = 10
PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14)

MODEL_FIELDS = ("template", "faces", "skin_weights", "shape_basis", "joint_regressor", "parents")


class ModelValidationError(ValueError):
    """A hand model violates one of its invariants; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True, eq=False)
class HandModel:
    template: np.ndarray          # N×3, meters
    faces: np.ndarray             # F×3
    skin_weights: np.ndarray      # N×J
    shape_basis: np.ndarray       # N×3×10
    joint_regressor: np.ndarray   # J×N
    parents: tuple[int, ...] = PARENTS
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", unique_edges(self.faces))
        for name in ("template", "skin_weights", "shape_basis", "joint_regressor"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    def validate(self) -> "HandModel":
        n = self.n_vertices
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            raise ModelValidationError("template", f"expected N x 3, got {self.template.shape}")
        J = self.n_joints
        if self.parents[0] != -1 or any(not 0 <= p < j for j, p in enumerate(self.parents) if j):
            raise ModelValidationError("parents", "root must be -1 and parents must precede children")
        sw = self.skin_weights
        if sw.shape != (n, J):
            raise ModelValidationError("skin_weights", f"expected {(n, J)}, got {sw.shape}")
        if np.any(sw < 0) or np.max(np.abs(sw.sum(1) - 1)) > 1e-9:
            raise ModelValidationError("skin_weights", "rows must be nonnegative and sum to 1")
        if self.shape_basis.shape != (n, 3, N_SHAPE):
            raise ModelValidationError("shape_basis", f"expected {(n, 3, N_SHAPE)}, got {self.shape_basis.shape}")
        jr = self.joint_regressor
        if jr.shape != (J, n):
            raise ModelValidationError("joint_regressor", f"expected {(J, n)}, got {jr.shape}")
        if np.max(np.abs(jr.sum(1) - 1)) > 1e-9:
            raise ModelValidationError("joint_regressor", "rows must sum to 1")
        f = self.faces
        if f.ndim != 2 or f.shape[1] != 3 or f.min() < 0 or f.max() >= n:
            raise ModelValidationError("faces", "faces must index existing vertices")
        if not is_edge_manifold(f):
            raise ModelValidationError("faces", "mesh is not edge-manifold")
        for name in ("template", "skin_weights", "shape_basis", "joint_regressor"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelValidationError(name, "non-finite entries")
        return self

    def mirrored(self) -> "HandModel":
        """Left hand from a right hand: flip x, reverse face winding."""
        flip = np.array([-1.0, 1.0, 1.0])
        return HandModel(
            template=self.template * flip,
            faces=self.faces[:, ::-1].copy(),
            skin_weights=self.skin_weights.copy(),
            shape_basis=self.shape_basis * flip[None, :, None],
            joint_regressor=self.joint_regressor.copy(),
            parents=self.parents,
        )

    def to_dict(self) -> dict:
        return {
            "template": self.template.tolist(),
            "faces": self.faces.tolist(),
            "skin_weights": self.skin_weights.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "joint_regressor": self.joint_regressor.tolist(),
            "parents": list(self.parents),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HandModel":
        missing = [k for k in MODEL_FIELDS if k not in d]
        if missing:
            raise ModelValidationError(missing[0], "missing from model file")
        try:
            model = cls(
                template=np.asarray(d["template"], dtype=float),
                faces=np.asarray(d["faces"], dtype=int),
                skin_weights=np.asarray(d["skin_weights"], dtype=float),
                shape_basis=np.asarray(d["shape_basis"], dtype=float),
                joint_regressor=np.asarray(d["joint_regressor"], dtype=float),
                parents=tuple(int(p) for p in d["parents"]),
            )
        except (ValueError, IndexError) as exc:
            raise ModelValidationError("faces", str(exc)) from exc
        return model.validate()


def save_model(model: HandModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path: str | Path) -> HandModel:
    return HandModel.from_dict(json.loads(Path(path).read_text()))


def load_or_synthesize_model(source: str | Path | int, n_vertices: int = 98) -> HandModel:
    """Load a JSON model file, or synthesize one when given an integer seed."""
    if isinstance(source, (int, np.integer)):
        return synthesize_model(int(source), n_vertices)
    return load_model(source)


# ---------------------------------------------------------------- forward model


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix of one axis-angle vector."""
    return ad.rodrigues(Tensor(np.reshape(axis_angle, (1, 3)))).data[0]


def regress_joints(regressor, vertices: Tensor) -> Tensor:
    regressor = np.asarray(regressor)
    if regressor.shape[1] != vertices.shape[0]:
        raise ad.DimensionError(f"regressor {regressor.shape} does not fit vertices {vertices.shape}")
    return ad.matmul(Tensor(regressor), vertices)


def _depth_groups(parents) -> list[np.ndarray]:
    depth = [0] * len(parents)
    for j in range(1, len(parents)):
        depth[j] = depth[parents[j]] + 1
    return [np.array([j for j, d in enumerate(depth) if d == k]) for k in range(max(depth) + 1)]


def mano_forward(model: HandModel, theta, beta, translation=None) -> tuple[Tensor, Tensor]:
    """Posed vertices (N×3) and joints (J×3) for pose ``theta`` (48) and shape ``beta`` (10).

    ``theta`` and ``beta`` may be tracked Tensors; the result is differentiable
    with respect to both.
    """
    theta, beta = ad.as_tensor(theta), ad.as_tensor(beta)
    N, J = model.n_vertices, model.n_joints
    if theta.shape != (3 * J,) or beta.shape != (N_SHAPE,):
        raise ad.DimensionError(f"expected theta ({3 * J},) and beta ({N_SHAPE},), "
                                f"got {theta.shape} and {beta.shape}")
    basis = Tensor(model.shape_basis.reshape(N * 3, N_SHAPE))
    shaped = ad.add(Tensor(model.template), (basis @ beta.reshape(N_SHAPE, 1)).reshape(N, 3))
    rest_joints = regress_joints(model.joint_regressor, shaped)
    rots = ad.rodrigues(theta.reshape(J, 3))

    # Relative transforms x -> R_j x + a_j with a_j = G_t(j) - R_j J_j, built by
    # a_c = a_p + (R_p - R_c) J_c so that identity rotations give exact zeros.
    parents = np.array(model.parents)
    groups = _depth_groups(model.parents)
    root = groups[0]
    r_root = rots[root]
    j_root = rest_joints[root].reshape(len(root), 3, 1)
    g_rot = r_root
    a_t = ad.sub(j_root, ad.matmul(r_root, j_root)).reshape(len(root), 3)
    # order[k] is the joint stored at row k of g_rot / a_t
    order = list(root)
    for grp in groups[1:]:
        rows = np.array([order.index(p) for p in parents[grp]])
        p_rot = g_rot[rows]
        c_rot = ad.matmul(p_rot, rots[grp])
        jc = rest_joints[grp].reshape(len(grp), 3, 1)
        new_a = ad.add(a_t[rows], ad.matmul(ad.sub(p_rot, c_rot), jc).reshape(len(grp), 3))
        g_rot = ad.concat([g_rot, c_rot], axis=0)
        a_t = ad.concat([a_t, new_a], axis=0)
        order.extend(grp)
    inv = np.argsort(order)
    g_rot, a_t = g_rot[inv], a_t[inv]

    blend = ad.concat([ad.sub(g_rot, Tensor(np.eye(3))).reshape(J, 9), a_t], axis=1)
    per_vertex = ad.matmul(Tensor(model.skin_weights), blend)
    v_rot = per_vertex[:, :9].reshape(N, 3, 3)
    posed = ad.add(shaped, ad.add(ad.tsum(ad.mul(v_rot, shaped.reshape(N, 1, 3)), axis=2),
                                  per_vertex[:, 9:]))
    g_t = ad.add(a_t, ad.matmul(g_rot, rest_joints.reshape(J, 3, 1)).reshape(J, 3))
    joints = g_t
    if translation is not None:
        tr = ad.as_tensor(translation).reshape(1, 3)
        posed, joints = ad.add(posed, tr), ad.add(joints, tr)
    return posed, joints


# ---------------------------------------------------------------- synthetic hands


def _layout(n: int) -> tuple[int, int, int, int, int]:
    """Choose (palm cols, palm rows, finger width, finger rows, thumb rows) with exact count ``n``."""
    fw = 2 if n < 300 else 3
    best, best_cost = None, np.inf
    for pc in range(4 * fw + 3, 4 * fw + 8):
        for pr in range(3, n // pc + 1):
            rest = n - pc * pr
            if rest <= 0 or rest % fw:
                continue
            strips = rest // fw
            for L in range(3, strips // 4 + 1):
                Lt = strips - 4 * L
                if Lt < 3:
                    continue
                dx = 0.085 / (pc - 1)
                cost = (abs(pc * pr / n - 0.4) + abs(Lt / L - 0.75)
                        + 0.5 * abs(np.log(0.09 / (pr - 1) / dx))
                        + 0.3 * abs(np.log(0.085 / L / dx)))
                if cost < best_cost:
                    best, best_cost = (pc, pr, fw, L, Lt), cost
    if best is None:
        raise ValueError(f"cannot lay out a hand mesh with {n} vertices")
    return best


def _hand_mesh(n: int):
    """Planar hand-shaped triangulation: palm grid, four finger strips, one thumb strip."""
    pc, pr, fw, L, Lt = _layout(n)
    palm_w, palm_h = 0.085, 0.09
    dx, dy = palm_w / (pc - 1), palm_h / (pr - 1)
    verts, part, faces = [], [], []

    def quad(a, b, c, d):  # a-b bottom, d-c top, counter-clockwise seen from +z
        faces.append((a, b, c))
        faces.append((a, c, d))

    palm = np.zeros((pr, pc), dtype=int)
    for r in range(pr):
        for c in range(pc):
            palm[r, c] = len(verts)
            verts.append(((c - (pc - 1) / 2) * dx, r * dy))
            part.append(0)
    for r in range(pr - 1):
        for c in range(pc - 1):
            quad(palm[r, c], palm[r, c + 1], palm[r + 1, c + 1], palm[r + 1, c])

    gap = (pc - 4 * fw) / 3.0
    starts = [int(round(k * (fw + gap))) for k in range(4)]
    starts[-1] = pc - fw
    lengths = np.array([0.95, 1.0, 0.95, 0.78]) * 0.085
    chains = []
    for k, s in enumerate(starts):
        strip = np.zeros((L, fw), dtype=int)
        dyf = lengths[k] / L
        for m in range(L):
            for i in range(fw):
                strip[m, i] = len(verts)
                x = (s + i - (pc - 1) / 2) * dx
                verts.append((x, palm_h + (m + 1) * dyf))
                part.append(1 + k)
        below = palm[pr - 1, s : s + fw]
        for i in range(fw - 1):
            quad(below[i], below[i + 1], strip[0, i + 1], strip[0, i])
        for m in range(L - 1):
            for i in range(fw - 1):
                quad(strip[m, i], strip[m, i + 1], strip[m + 1, i + 1], strip[m + 1, i])
        x_mid = (s + (fw - 1) / 2 - (pc - 1) / 2) * dx
        chains.append([(x_mid, palm_h + f * lengths[k]) for f in (0.0, 0.36, 0.68, 1.0)])

    r0 = max(0, int(round(pr * 0.2)))
    r0 = min(r0, pr - fw)
    thumb = np.zeros((Lt, fw), dtype=int)
    dxt = 0.065 / Lt
    for m in range(Lt):
        for i in range(fw):
            thumb[m, i] = len(verts)
            verts.append((-palm_w / 2 - (m + 1) * dxt * 0.8, (r0 + i) * dy + (m + 1) * dxt * 0.6))
            part.append(5)
    side = palm[r0 : r0 + fw, 0]
    for i in range(fw - 1):
        quad(thumb[0, i], side[i], side[i + 1], thumb[0, i + 1])
    for m in range(Lt - 1):
        for i in range(fw - 1):
            quad(thumb[m + 1, i], thumb[m, i], thumb[m, i + 1], thumb[m + 1, i + 1])
    ty = (r0 + (fw - 1) / 2) * dy
    chains.append([(-palm_w / 2 - f * 0.065 * 0.8, ty + f * 0.065 * 0.6) for f in (0.0, 0.36, 0.68, 1.0)])

    xy = np.array(verts)
    xn = xy[:, 0] / 0.1
    yn = (xy[:, 1] - palm_h / 2) / 0.15
    z = 0.012 * np.exp(-(xn ** 2 + yn ** 2))
    template = np.column_stack([xy, z])
    assert template.shape[0] == n
    wrist = np.array([0.0, 0.0])
    return template, np.array(faces, dtype=int), np.array(part), wrist, chains


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def synthesize_model(seed: int = 0, n_vertices: int = 98) -> HandModel:
    """Seeded procedural right hand with ``n_vertices`` vertices and 16 joints.

    The wrist sits at x=+0.03 m so that the mirrored left hand lies beside it.
    """
    rng = np.random.default_rng(seed)
    template, faces, part, wrist, chains = _hand_mesh(n_vertices)
    offset = np.array([0.03, -0.06, 0.0])
    template = template + offset
    z0 = lambda xy: np.array([xy[0], xy[1], 0.006]) + offset  # noqa: E731
    joint_pos = np.zeros((N_JOINTS, 3))
    joint_pos[0] = z0(wrist)
    tips = np.zeros((N_JOINTS, 3))
    tips[0] = z0((0.0, 0.09))
    for k, chain in enumerate(chains):
        for m in range(3):
            j = 1 + 3 * k + m
            joint_pos[j] = z0(chain[m])
            tips[j] = z0(chain[m + 1])

    allowed = {0: [0] + [1 + 3 * k for k in range(5)]}
    for k in range(5):
        allowed[1 + k] = [1 + 3 * k, 2 + 3 * k, 3 + 3 * k]
    weights = np.zeros((n_vertices, N_JOINTS))
    sigma = 0.012
    for j in range(N_JOINTS):
        d = _segment_distance(template, joint_pos[j], tips[j])
        weights[:, j] = np.exp(-0.5 * (d / sigma) ** 2) + 1e-6
    mask = np.zeros_like(weights, dtype=bool)
    for p_id, js in allowed.items():
        mask[np.ix_(part == p_id, js)] = True
    weights = weights * mask * (1.0 + 0.1 * rng.random(weights.shape))
    weights[weights < 1e-3 * weights.max(axis=1, keepdims=True)] = 0.0
    weights /= weights.sum(axis=1, keepdims=True)

    regressor = np.zeros((N_JOINTS, n_vertices))
    for j in range(N_JOINTS):
        d = np.linalg.norm(template - joint_pos[j], axis=1)
        near = np.argsort(d, kind="stable")[:4]
        w = (1.0 / (d[near] + 2e-3)) * (1.0 + 0.1 * rng.random(4))
        regressor[j, near] = w / w.sum()

    rel = template - joint_pos[0]
    scale = 0.006
    basis = np.zeros((n_vertices, 3, N_SHAPE))
    basis[:, :, 0] = rel / np.abs(rel).max() * scale * 1.5
    basis[:, 1, 1] = np.where(part > 0, rel[:, 1] / np.abs(rel[:, 1]).max(), 0.0) * scale
    basis[:, 0, 2] = rel[:, 0] / np.abs(rel[:, 0]).max() * scale
    basis[:, 2, 3] = (template[:, 2] - template[:, 2].mean()) / 0.012 * scale * 0.5
    for b in range(4, N_SHAPE):
        freq = rng.normal(size=(3, 3)) * 15.0
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.normal(size=3) * scale * 0.5
        basis[:, :, b] = amp * np.sin(rel @ freq + phase)

    return HandModel(template=template, faces=faces, skin_weights=weights, shape_basis=basis,
                     joint_regressor=regressor, parents=PARENTS).validate()
