"""The full two-hand reconstruction network: encoder, block stack, refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .encoder import FeaturePyramid, encode, init_encoder
from .hand_model import HandModel
from .hierarchy import MeshHierarchy, build_hierarchy
from .mmib import StackOutput, init_stack, stack_forward
from .params import ParamStore
from .refine import Prediction, init_refine, refine_forward
from .synthetic import Camera


@dataclass
class ForwardResult:
    coarse: Prediction          # block-stack output
    final: Prediction           # after refinement
    pyramid: FeaturePyramid
    stack: StackOutput


class Network:
    """Weights plus the fixed geometry (hand models and mesh hierarchy)."""

    def __init__(self, cfg: ModelConfig, right: HandModel, seed: int = 0,
                 hierarchy: MeshHierarchy | None = None):
        cfg.validate()
        if right.n_vertices != cfg.n_vertices:
            raise ad.DimensionError(
                f"hand model has {right.n_vertices} vertices, config expects {cfg.n_vertices}")
        self.cfg = cfg
        self.models = {"L": right.mirrored(), "R": right}
        self.hierarchy = hierarchy or build_hierarchy(right, cfg.level_counts)
        if self.hierarchy.counts != tuple(cfg.level_counts):
            raise ad.DimensionError(f"hierarchy counts {self.hierarchy.counts} != {cfg.level_counts}")
        self.params = ParamStore(seed)
        init_encoder(self.params, cfg)
        init_stack(self.params, cfg)
        init_refine(self.params, cfg)

    def forward(self, image, camera: Camera, params=None) -> ForwardResult:
        """``params`` may replace the stored weights (any name -> Tensor mapping)."""
        cfg = self.cfg
        p = self.params if params is None else params
        pyramid = encode(p, ad.as_tensor(image), cfg)
        stack = stack_forward(p, pyramid, self.hierarchy, cfg)
        coarse = Prediction(stack.vertices, stack.theta, stack.beta, camera)
        final = refine_forward(p, stack.tokens, coarse, pyramid,
                               self.hierarchy.levels[-1].laplacian, cfg)
        return ForwardResult(coarse, final, pyramid, stack)

    def n_parameters(self) -> int:
        return int(sum(np.prod(t.shape) for t in self.params.values()))
