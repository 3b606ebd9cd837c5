"""Run configuration: model architecture and the three training phases.

Defaults follow the reference hyper-parameter setting for this
architecture: AdamW with learning rates 1e-3 / 3e-4 / 3e-5 across the
phases, weight decay 1e-2, beta2 0.95, batch size 1024 for supervised
pretraining, context size 1000 with target chunks of 200 and 64 retrieved
neighbors per target for the in-context phases, early-stopping patience
20 / 20 / 10, and a 15% validation split. Configs serialize to JSON with
nested sections mirroring these dataclasses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError


@dataclass
class ModelConfig:
    dim: int = 32                   # CLS token width (2b)
    heads: int = 4
    encoder_layers: int = 2
    ffn_mult: int = 4
    dropout: float = 0.1
    gate_p: float = 0.9             # probability of keeping the instance token
    alpha_init: float = 0.9         # evaluation blend toward the instance token
    icl_layers: int = 2
    icl_variant: str = "nonlinear"  # "nonlinear" | "linearized"
    icl_dropout: float = 0.1
    kappa_init: float = 1.0
    kappa_trainable: bool = True
    kappa_source: str = "unit"      # decorator case weights: "unit" | "exposure"
    decorator_hidden: int = 16
    decoder_hidden: int = 32

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 < self.gate_p <= 1.0:
            raise ConfigError(f"gate_p must lie in (0, 1], got {self.gate_p}")
        if self.icl_variant == "linearized" and self.icl_layers != 1:
            raise ConfigError("linearized variant requires exactly one ICL layer")


@dataclass
class PhaseConfig:
    lr: float
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    epochs: int = 0
    patience: int = 20
    batch_size: int = 1024      # phase 1 only
    context_size: int = 1000    # phases 2-3
    chunk_size: int = 200       # phases 2-3
    k_neighbors: int = 64       # phases 2-3


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    phase1: PhaseConfig = field(default_factory=lambda: PhaseConfig(lr=1e-3, epochs=100, patience=20))
    phase2: PhaseConfig = field(default_factory=lambda: PhaseConfig(lr=3e-4, epochs=50, patience=20))
    phase3: PhaseConfig = field(default_factory=lambda: PhaseConfig(lr=3e-5, epochs=20, patience=10))
    val_fraction: float = 0.15
    seed: int = 1
    deterministic: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "model" in kwargs:
            kwargs["model"] = ModelConfig(**kwargs["model"])
        for phase in ("phase1", "phase2", "phase3"):
            if phase in kwargs:
                kwargs[phase] = PhaseConfig(**kwargs[phase])
        return cls(**kwargs)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json(indent=None).encode()).hexdigest()[:16]


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_json(fh.read())


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config.to_json())
        fh.write("\n")
