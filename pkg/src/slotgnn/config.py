"""Training configuration with named profiles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class TrainConfig:
    dim: int = 64
    heads: int = 8
    layers: int = 2
    dropout: float = 0.5
    epochs: int = 150
    max_lr: float = 0.0005
    start_fraction: float = 0.3
    lr_div: float = 25.0
    lr_final_div: float = 10000.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_mode: str = "full"  # full | sampled
    sample_depth: int = 3
    sample_budget: int = 1800
    batch_size: int = 256
    batches_per_epoch: int = 250
    seed: int = 0
    precision: str = "float32"
    use_seq: bool = True
    use_fusion: bool = True
    use_relation_encoding: bool = True
    attention_norm: str = "joint"  # joint | literal
    scale_outside: bool = False
    early_stop_patience: int = 0  # 0 disables early stopping

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.epochs < 1 or self.layers < 1:
            raise ValueError("epochs and layers must be at least 1")
        if self.batch_mode not in ("full", "sampled"):
            raise ValueError(f"unknown batch mode {self.batch_mode!r}")
        if self.attention_norm not in ("joint", "literal"):
            raise ValueError(f"unknown attention norm {self.attention_norm!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# "desk" keeps runs laptop-sized; "paper" restores the published scale.
PROFILES: dict[str, dict] = {
    "desk": {},
    "paper": {"dim": 512, "heads": 8, "dropout": 0.5, "max_lr": 0.0005, "epochs": 150},
}


def from_profile(name: str) -> TrainConfig:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return TrainConfig(**PROFILES[name])
