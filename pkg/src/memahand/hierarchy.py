"""Nested mesh coarsening, convex upsamplers and scaled graph Laplacians."""

from __future__ import annotations

import heapq
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor

FULL_COUNTS = (63, 126, 252, 778)


class HierarchyError(ValueError):
    """Requested level counts cannot be produced by edge contraction."""


@dataclass(frozen=True)
class Level:
    n_vertices: int
    edges: np.ndarray          # E×2, lo < hi
    laplacian: sp.csr_matrix   # scaled, spectrum in [-1, 1]


@dataclass(frozen=True)
class MeshHierarchy:
    """Levels ordered coarse to fine; ``upsamplers[i]`` maps level i to level i+1."""

    levels: tuple[Level, ...]
    upsamplers: tuple[sp.csr_matrix, ...]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(lv.n_vertices for lv in self.levels)

    def to_dict(self) -> dict:
        ups = []
        for u in self.upsamplers:
            c = u.tocoo()
            ups.append([[int(r), int(k), float(v)] for r, k, v in zip(c.row, c.col, c.data)])
        return {"counts": list(self.counts),
                "edges": [lv.edges.tolist() for lv in self.levels],
                "upsamplers": ups}

    @classmethod
    def from_dict(cls, d: dict) -> "MeshHierarchy":
        counts = d["counts"]
        levels = tuple(Level(n, np.asarray(e, dtype=int).reshape(-1, 2), scaled_laplacian(n, e))
                       for n, e in zip(counts, d["edges"]))
        ups = []
        for i, trip in enumerate(d["upsamplers"]):
            t = np.asarray(trip, dtype=float).reshape(-1, 3)
            ups.append(sp.csr_matrix((t[:, 2], (t[:, 0].astype(int), t[:, 1].astype(int))),
                                     shape=(counts[i + 1], counts[i])))
        return cls(levels, tuple(ups))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MeshHierarchy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def scaled_laplacian(n: int, edges) -> sp.csr_matrix:
    """``2 L / lambda_max - I`` of the symmetric-normalized Laplacian.

    Isolated vertices get a zero diagonal in ``L``; a graph with no edges maps
    to the zero matrix.
    """
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    A = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    A = ((A + A.T) > 0).astype(float)
    deg = np.asarray(A.sum(axis=1)).ravel()
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    L = sp.diags((deg > 0).astype(float)) - sp.diags(dinv) @ A @ sp.diags(dinv)
    L = sp.csr_matrix((L + L.T) * 0.5)
    lam = float(np.linalg.eigvalsh(L.toarray()).max()) if n > 1 else 0.0
    if lam <= 0.0:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix(L * (2.0 / lam) - sp.identity(n))


def _contract(n: int, edges: np.ndarray, target: int) -> np.ndarray:
    """Greedy edge contraction down to ``target`` clusters.

    Cheapest edge first, cost = merged cluster size; ties go to the pair with
    the lowest representative indices. Returns the coarse index of every
    vertex, coarse vertices numbered by their lowest member.
    """
    rep = list(range(n))          # union-find parent
    size = [1] * n
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)

    def find(x):
        while rep[x] != x:
            rep[x] = rep[rep[x]]
            x = rep[x]
        return x

    heap = [(2, min(a, b), max(a, b)) for a, b in {(min(a, b), max(a, b)) for a, b in edges if a != b}]
    heapq.heapify(heap)
    count = n
    while count > target:
        if not heap:
            raise HierarchyError(f"cannot contract {n} vertices to {target}: graph has too few edges")
        cost, a, b = heapq.heappop(heap)
        if rep[a] != a or rep[b] != b or size[a] + size[b] != cost:
            continue
        # the lower index survives as representative
        rep[b] = a
        size[a] += size[b]
        nbrs[a] |= nbrs[b]
        nbrs[a].discard(a)
        nbrs[a].discard(b)
        for c in nbrs[b]:
            nbrs[c].discard(b)
            if c != a:
                nbrs[c].add(a)
        nbrs[b] = set()
        count -= 1
        for c in nbrs[a]:
            heapq.heappush(heap, (size[a] + size[c], min(a, c), max(a, c)))
    roots = sorted({find(v) for v in range(n)})
    index = {r: i for i, r in enumerate(roots)}
    return np.array([index[find(v)] for v in range(n)])


def _upsampler(assign: np.ndarray, edges: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """Fine-from-coarse interpolation with rows of weight 1 or 0.5/0.5.

    A cluster's lowest-index member copies its cluster. Other members that
    touch a foreign cluster average their own cluster with the foreign one
    they touch most (lowest index on ties).
    """
    n = len(assign)
    first = {}
    for v in range(n):
        first.setdefault(assign[v], v)
    foreign: list[Counter] = [Counter() for _ in range(n)]
    for a, b in edges:
        if assign[a] != assign[b]:
            foreign[a][assign[b]] += 1
            foreign[b][assign[a]] += 1
    rows, cols, vals = [], [], []
    for v in range(n):
        p = assign[v]
        if first[p] == v or not foreign[v]:
            rows.append(v), cols.append(p), vals.append(1.0)
        else:
            q = min(foreign[v].items(), key=lambda kv: (-kv[1], kv[0]))[0]
            rows += [v, v]
            cols += [p, q]
            vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n_coarse))


def build_hierarchy_from_graph(n: int, edges, level_counts) -> MeshHierarchy:
    counts = tuple(int(c) for c in level_counts)
    if len(counts) < 2 or any(b <= a for a, b in zip(counts, counts[1:])) or counts[0] < 1:
        raise HierarchyError(f"level counts must be strictly increasing, got {counts}")
    if counts[-1] != n:
        raise HierarchyError(f"last level count {counts[-1]} must equal vertex count {n}")
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    levels = [Level(n, edges, scaled_laplacian(n, edges))]
    ups = []
    cur_n, cur_e = n, edges
    for target in reversed(counts[:-1]):
        assign = _contract(cur_n, cur_e, target)
        ups.append(_upsampler(assign, cur_e, target))
        ce = np.sort(assign[cur_e], axis=1)
        ce = np.unique(ce[ce[:, 0] != ce[:, 1]], axis=0).reshape(-1, 2)
        levels.append(Level(target, ce, scaled_laplacian(target, ce)))
        cur_n, cur_e = target, ce
    return MeshHierarchy(tuple(reversed(levels)), tuple(reversed(ups)))


def build_hierarchy(model, level_counts) -> MeshHierarchy:
    """Coarsening hierarchy of a hand model's mesh; ``level_counts`` ends with N."""
    return build_hierarchy_from_graph(model.n_vertices, model.edges, level_counts)


def upsample_vertices(U, tokens: Tensor) -> Tensor:
    return ad.spmm(U, tokens)
