"""Triangle-mesh topology helpers and OBJ round-tripping."""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges of a triangle list, each once, sorted ``(lo, hi)``."""
    f = np.asarray(faces, dtype=int)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def is_edge_manifold(faces: np.ndarray) -> bool:
    """Every undirected edge is shared by at most two faces."""
    f = np.asarray(faces, dtype=int)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    counts = Counter(map(tuple, e))
    return max(counts.values()) <= 2 and not np.any(f[:, 0] == f[:, 1]) \
        and not np.any(f[:, 1] == f[:, 2]) and not np.any(f[:, 0] == f[:, 2])


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices)
    f = np.asarray(faces, dtype=int)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """ASCII OBJ with ``v x y z`` and 1-indexed ``f a b c`` lines."""
    with open(path, "w") as fh:
        for v in np.asarray(vertices):
            fh.write("v {!r} {!r} {!r}\n".format(*(float(c) for c in v)))
        for f in np.asarray(faces, dtype=int):
            fh.write("f {} {} {}\n".format(*(f + 1)))


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=int).reshape(-1, 3)
