"""Mesh-Mano Interaction Blocks and the coarse-to-fine block stack.

Token order is fixed: ``[vertex_L | vertex_R | mano_L | mano_R | grid]``.
Two asymmetric masks gate attention. Vertex (and grid) queries never see
mano keys, so parameter tokens cannot steer the mesh, while mano queries
read their own hand's vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import FeaturePyramid, grid_tokens, init_grid_tokens
from .hand_model import N_POSE, N_SHAPE
from .hierarchy import MeshHierarchy, upsample_vertices
from .params import ParamStore

N_MANO_TOKENS = 2


@dataclass
class TokenSet:
    vertex_l: Tensor
    vertex_r: Tensor
    mano_l: Tensor
    mano_r: Tensor
    grid: Tensor | None
    level: int

    @property
    def n_vertices(self) -> int:
        return self.vertex_l.shape[0]

    @property
    def core_length(self) -> int:
        return 2 * self.n_vertices + 2 * N_MANO_TOKENS

    @property
    def n_grid(self) -> int:
        return 0 if self.grid is None else self.grid.shape[0]

    def core(self) -> Tensor:
        return ad.concat([self.vertex_l, self.vertex_r, self.mano_l, self.mano_r], axis=0)

    def sequence(self) -> Tensor:
        parts = [self.core()] if self.grid is None else [self.core(), self.grid]
        return ad.concat(parts, axis=0)

    def with_core(self, core: Tensor, grid: Tensor | None = None) -> "TokenSet":
        n = self.n_vertices
        return replace(self, vertex_l=core[:n], vertex_r=core[n:2 * n],
                       mano_l=core[2 * n:2 * n + 2], mano_r=core[2 * n + 2:2 * n + 4],
                       grid=self.grid if grid is None else grid)


# ---------------------------------------------------------------- masks


def _blocks(n: int, n_grid: int):
    vl = slice(0, n)
    vr = slice(n, 2 * n)
    ml = slice(2 * n, 2 * n + 2)
    mr = slice(2 * n + 2, 2 * n + 4)
    g = slice(2 * n + 4, 2 * n + 4 + n_grid)
    return vl, vr, ml, mr, g


@lru_cache(maxsize=64)
def _intra(n: int, n_grid: int) -> np.ndarray:
    vl, vr, ml, mr, g = _blocks(n, n_grid)
    size = 2 * n + 4 + n_grid
    m = np.zeros((size, size), dtype=bool)
    for v, mano in ((vl, ml), (vr, mr)):
        m[v, v] = True
        m[v, g] = True
        m[mano, v] = True
        m[mano, mano] = True
        m[mano, g] = True
    m[g, vl] = m[g, vr] = m[g, g] = True
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def _inter(n: int) -> np.ndarray:
    vl, vr, ml, mr, _ = _blocks(n, 0)
    size = 2 * n + 4
    m = np.zeros((size, size), dtype=bool)
    verts = slice(0, 2 * n)
    m[verts, verts] = True
    m[2 * n:, :] = True
    m.setflags(write=False)
    return m


def build_intra_mask(n: int, n_grid: int) -> np.ndarray:
    """Within-hand mask over ``[vL | vR | mL | mR | grid]`` (True = may attend).

    vertex_h -> {vertex_h, grid}; mano_h -> {vertex_h, mano_h, grid};
    grid -> {vertex_L, vertex_R, grid}.
    """
    if n < 1 or n_grid < 0:
        raise ValueError("need at least one vertex per hand")
    return _intra(int(n), int(n_grid))


def build_inter_mask(n: int) -> np.ndarray:
    """Cross-hand mask over ``[vL | vR | mL | mR]``.

    vertex_h -> both hands' vertices; mano_h -> all vertex and mano tokens.
    """
    if n < 1:
        raise ValueError("need at least one vertex per hand")
    return _inter(int(n))


# ---------------------------------------------------------------- graph residual block


def init_graph_block(store: ParamStore, name: str, d: int, order: int) -> None:
    store.uniform(f"{name}.theta", (order * d, d), order * d)
    store.add(f"{name}.b", np.zeros(d))


def chebyshev_terms(lap, x: Tensor, order: int) -> list[Tensor]:
    """T0 = x, T1 = L x, T_k = 2 L T_{k-1} - T_{k-2}."""
    terms = [x]
    if order > 1:
        terms.append(ad.spmm(lap, x))
    for _ in range(2, order):
        terms.append(ad.sub(ad.mul(ad.spmm(lap, terms[-1]), 2.0), terms[-2]))
    return terms


def graph_residual_block(p, name: str, vertex_l: Tensor, vertex_r: Tensor, lap,
                         order: int, activation: bool = True) -> Tensor:
    """Shared-weight Chebyshev convolution on each hand plus a residual; returns ``[L; R]``."""
    n = vertex_l.shape[0]
    if lap.shape != (n, n) or vertex_r.shape != vertex_l.shape:
        raise ad.DimensionError(f"Laplacian {lap.shape} does not match {n} vertices per hand")
    x = ad.concat([vertex_l, vertex_r], axis=0)
    terms = [ad.concat(pair, axis=0) for pair in
             zip(chebyshev_terms(lap, vertex_l, order), chebyshev_terms(lap, vertex_r, order))]
    mixed = ad.linear(ad.concat(terms, axis=1), p[f"{name}.theta"], p[f"{name}.b"])
    return ad.add(x, ad.gelu(mixed) if activation else mixed)


# ---------------------------------------------------------------- transformer encoder


def init_transformer(store: ParamStore, name: str, d: int, depth: int) -> None:
    for layer in range(depth):
        pre = f"{name}.{layer}"
        store.norm(f"{pre}.ln1", d)
        store.linear(f"{pre}.q", d, d)
        # no key bias: softmax is invariant to it, so it would never train
        store.uniform(f"{pre}.k.w", (d, d), d)
        store.linear(f"{pre}.v", d, d)
        store.linear(f"{pre}.o", d, d, zero=True)
        store.norm(f"{pre}.ln2", d)
        store.linear(f"{pre}.ff1", d, 4 * d)
        store.linear(f"{pre}.ff2", 4 * d, d, zero=True)


def attention_weights(p, pre: str, h: Tensor, mask: np.ndarray, heads: int) -> tuple[Tensor, Tensor]:
    S, D = h.shape
    dh = D // heads

    def split(t):
        return t.reshape(S, heads, dh).transpose(1, 0, 2)

    q = split(ad.linear(h, p[f"{pre}.q.w"], p[f"{pre}.q.b"]))
    k = split(ad.linear(h, p[f"{pre}.k.w"]))
    v = split(ad.linear(h, p[f"{pre}.v.w"], p[f"{pre}.v.b"]))
    scores = ad.mul(ad.matmul(q, k.transpose(0, 2, 1)), 1.0 / np.sqrt(dh))
    return ad.masked_softmax(scores, mask), v


def transformer_encoder(p, name: str, tokens: Tensor, mask: np.ndarray, heads: int, depth: int) -> Tensor:
    """Pre-norm masked multi-head self-attention + GELU feed-forward, ``depth`` layers."""
    S, D = tokens.shape
    if D % heads:
        raise ValueError(f"token dim {D} not divisible by {heads} heads")
    if mask.shape != (S, S):
        raise ad.DimensionError(f"mask {mask.shape} does not match {S} tokens")
    x = tokens
    for layer in range(depth):
        pre = f"{name}.{layer}"
        h = ad.layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        attn, v = attention_weights(p, pre, h, mask, heads)
        o = ad.matmul(attn, v).transpose(1, 0, 2).reshape(S, D)
        x = ad.add(x, ad.linear(o, p[f"{pre}.o.w"], p[f"{pre}.o.b"]))
        h = ad.layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        ff = ad.linear(ad.gelu(ad.linear(h, p[f"{pre}.ff1.w"], p[f"{pre}.ff1.b"])),
                       p[f"{pre}.ff2.w"], p[f"{pre}.ff2.b"])
        x = ad.add(x, ff)
    return x


# ---------------------------------------------------------------- block


def init_mmib(store: ParamStore, name: str, d: int, cfg: ModelConfig) -> None:
    init_graph_block(store, f"{name}.graph", d, cfg.cheb_order)
    init_transformer(store, f"{name}.intra", d, cfg.tfe_depth)
    init_transformer(store, f"{name}.inter", d, cfg.tfe_depth)


def mmib_forward(p, name: str, tokens: TokenSet, lap, cfg: ModelConfig,
                 use_inter: bool = True) -> TokenSet:
    """Graph residual block, then within-hand and cross-hand encoders.

    Grid tokens take part in the within-hand stage only and are returned as
    that stage left them.
    """
    n = tokens.n_vertices
    if lap.shape != (n, n):
        raise ad.DimensionError(f"level Laplacian {lap.shape} does not match {n} vertex tokens")
    f_graph = graph_residual_block(p, f"{name}.graph", tokens.vertex_l, tokens.vertex_r, lap, cfg.cheb_order)
    parts = [f_graph, tokens.mano_l, tokens.mano_r]
    if tokens.grid is not None:
        parts.append(tokens.grid)
    seq = ad.concat(parts, axis=0)
    seq = transformer_encoder(p, f"{name}.intra", seq, build_intra_mask(n, tokens.n_grid),
                              cfg.heads, cfg.tfe_depth)
    core_len = 2 * n + 4
    core = seq[:core_len]
    grid = seq[core_len:] if tokens.grid is not None else None
    if use_inter:
        core = transformer_encoder(p, f"{name}.inter", core, build_inter_mask(n), cfg.heads, cfg.tfe_depth)
    out = tokens.with_core(core)
    out.grid = grid
    return out


# ---------------------------------------------------------------- stack


@dataclass
class StackOutput:
    vertices: dict[str, Tensor]     # hand -> N×3
    theta: dict[str, Tensor]        # hand -> 48
    beta: dict[str, Tensor]         # hand -> 10
    tokens: TokenSet                # finest level, no grid
    level_tokens: list[TokenSet]    # inputs to each block, for inspection


def init_stack(store: ParamStore, cfg: ModelConfig, name: str = "mmim") -> None:
    n1, d1 = cfg.level_counts[0], cfg.dims[0]
    store.uniform(f"{name}.query.w", (cfg.d_gap, (2 * n1 + 4) * d1), cfg.d_gap)
    store.add(f"{name}.query.b", np.zeros((2 * n1 + 4) * d1))
    dims = list(cfg.dims) + [cfg.dims[-1]]
    for i in range(3):
        init_grid_tokens(store, f"{name}.grid{i}", cfg.pyramid_channels[i], dims[i])
        init_mmib(store, f"{name}.block{i}", dims[i], cfg)
        store.linear(f"{name}.reduce{i}", dims[i], dims[i + 1])
        # vertices merged into one coarse cluster receive identical upsampled
        # tokens; a per-vertex, per-hand embedding lets the head separate them
        store.add(f"{name}.embed{i}", np.zeros((2, cfg.level_counts[i + 1], dims[i + 1])))
    init_heads(store, f"{name}.head", dims[-1])


def init_heads(store: ParamStore, name: str, d: int) -> None:
    store.norm(f"{name}.ln", d)
    store.linear(f"{name}.vertex", d, 3, zero=True)
    store.linear(f"{name}.pose", d, N_POSE, zero=True)
    store.linear(f"{name}.shape", d, N_SHAPE, zero=True)


def apply_heads(p, name: str, tokens: TokenSet):
    """Per-token 1x1 heads after a final layer norm: vertices from vertex
    tokens, pose from mano token 0, shape from mano token 1."""
    g, b = p[f"{name}.ln.g"], p[f"{name}.ln.b"]
    verts, theta, beta = {}, {}, {}
    for h, vt, mt in (("L", tokens.vertex_l, tokens.mano_l), ("R", tokens.vertex_r, tokens.mano_r)):
        vt, mt = ad.layer_norm(vt, g, b), ad.layer_norm(mt, g, b)
        verts[h] = ad.linear(vt, p[f"{name}.vertex.w"], p[f"{name}.vertex.b"])
        theta[h] = ad.linear(mt[0:1], p[f"{name}.pose.w"], p[f"{name}.pose.b"]).reshape(N_POSE)
        beta[h] = ad.linear(mt[1:2], p[f"{name}.shape.w"], p[f"{name}.shape.b"]).reshape(N_SHAPE)
    return verts, theta, beta


def initial_tokens(p, name: str, f_gap: Tensor, cfg: ModelConfig) -> TokenSet:
    n1, d1 = cfg.level_counts[0], cfg.dims[0]
    q = ad.linear(f_gap.reshape(1, -1), p[f"{name}.query.w"], p[f"{name}.query.b"]).reshape(2 * n1 + 4, d1)
    ts = TokenSet(q[:n1], q[n1:2 * n1], q[2 * n1:2 * n1 + 2], q[2 * n1 + 2:], None, 0)
    return ts


def stack_forward(p, pyramid: FeaturePyramid, hierarchy: MeshHierarchy, cfg: ModelConfig,
                  name: str = "mmim") -> StackOutput:
    if len(hierarchy.levels) != 4:
        raise ad.DimensionError("the block stack needs three coarse levels plus the full mesh")
    tokens = initial_tokens(p, name, pyramid.f_gap, cfg)
    seen = []
    for i in range(3):
        grid = grid_tokens(p, f"{name}.grid{i}", pyramid.maps[i], cfg.grid)
        tokens = replace(tokens, grid=grid, level=i)
        seen.append(tokens)
        tokens = mmib_forward(p, f"{name}.block{i}", tokens, hierarchy.levels[i].laplacian, cfg)
        U = hierarchy.upsamplers[i]
        w, b = p[f"{name}.reduce{i}.w"], p[f"{name}.reduce{i}.b"]
        embed = p[f"{name}.embed{i}"]
        tokens = TokenSet(
            vertex_l=ad.add(ad.linear(upsample_vertices(U, tokens.vertex_l), w, b), embed[0]),
            vertex_r=ad.add(ad.linear(upsample_vertices(U, tokens.vertex_r), w, b), embed[1]),
            mano_l=ad.linear(tokens.mano_l, w, b),
            mano_r=ad.linear(tokens.mano_r, w, b),
            grid=None, level=i + 1)
    verts, theta, beta = apply_heads(p, f"{name}.head", tokens)
    return StackOutput(verts, theta, beta, tokens, seen)
