"""Model and run configuration, presets and JSON (de)serialization."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .hierarchy import FULL_COUNTS


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 64, 128)   # last entry is D_gap
    pyramid_channels: tuple[int, int, int] = (64, 32, 16)
    dims: tuple[int, int, int] = (64, 32, 32)
    d_refine: int = 32
    grid: int = 4
    heads: int = 4
    tfe_depth: int = 1
    cheb_order: int = 3
    refine_iters: int = 1
    level_counts: tuple[int, ...] = (4, 8, 16, 98)

    @property
    def d_gap(self) -> int:
        return self.enc_channels[-1]

    @property
    def n_vertices(self) -> int:
        return self.level_counts[-1]

    def validate(self) -> "ModelConfig":
        s = self.image_size
        if s < 32 or s & (s - 1):
            raise ValueError(f"image_size must be a power of two >= 32, got {s}")
        if len(self.enc_channels) != 4:
            raise ValueError("enc_channels needs four stages")
        if len(self.level_counts) != 4:
            raise ValueError("level_counts needs three coarse levels plus the full mesh")
        for d in (*self.dims, self.dims[-1] + self.d_refine):
            if d % self.heads:
                raise ValueError(f"token dim {d} not divisible by {self.heads} heads")
        if self.grid < 1 or self.grid > s // 8:
            raise ValueError("grid must satisfy 1 <= g <= smallest feature map size")
        if self.cheb_order < 1 or self.refine_iters < 0 or self.tfe_depth < 1:
            raise ValueError("cheb_order, tfe_depth must be >= 1 and refine_iters >= 0")
        return self


PRESETS = {
    "desk": ModelConfig(),
    "tiny": ModelConfig(image_size=32, enc_channels=(4, 8, 8, 16), pyramid_channels=(8, 8, 4),
                        dims=(8, 8, 8), d_refine=8, grid=2),
    "full-topology": ModelConfig(level_counts=FULL_COUNTS),
}


@dataclass(frozen=True)
class LossWeights:
    v: float = 40.0
    j: float = 40.0
    n: float = 5.0
    e: float = 40.0
    p: float = 10.0
    v_mano: float = 10.0
    consist: float = 40.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.v, self.j, self.n, self.e, self.p, self.v_mano, self.consist)


@dataclass
class RunConfig:
    preset: str = "desk"
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    steps: int = 500
    n_samples: int = 2
    seed: int = 0
    model_seed: int = 0
    model_file: str | None = None
    checkpoint: str | None = None
    manifest: str | None = None
    out_dir: str = "runs"
    loss_weights: LossWeights = field(default_factory=LossWeights)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RunConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(preset=name, model=PRESETS[name], **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        base = cls.from_preset(d.pop("preset", "desk"))
        model = dataclasses.replace(base.model, **{k: tuple(v) if isinstance(v, list) else v
                                                   for k, v in d.pop("model", {}).items()})
        weights = LossWeights(**d.pop("loss_weights", {}))
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(base, model=model.validate(), loss_weights=weights, **d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
