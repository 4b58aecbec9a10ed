"""Run configuration: dimensions, ablation switches, loss weights, optimizer
settings, and reproducibility seeds."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

# loss-weight pairs (alpha, beta) chosen per dataset
ALPHA_BETA: dict[str, tuple[float, float]] = {
    "weather": (1.00, 5.00),
    "nycbike1": (7.50, 5.00),
    "nycbike2": (3.50, 1.00),
    "nyctaxi": (3.50, 0.50),
    "pems04": (1.00, 10.00),
    "pems08": (1.00, 1.00),
}

ABLATIONS = ("no_sto", "no_sta", "no_sfl", "no_dsfl", "no_gate")


@dataclass
class DranConfig:
    # window and data dimensions
    L: int = 12
    H: int = 12
    N: int = 8
    D_in: int = 1
    # architecture widths
    D_model: int = 160
    C_e: int = 80
    latent: int = 64
    heads: int = 4
    tem_layers: int = 3
    spa_layers: int = 3
    ffn: int = 256
    stat_hidden: int = 64
    sfl_width: int = 64
    kernel_size: int = 3  # circular 1-D conv in the factor learner
    dec_layers: int = 2
    # loss weights
    alpha: float = 1.0
    beta: float = 1.0
    kl_weight_b: float = 1.0
    kl_weight_f: float = 1.0
    # optimization
    lr: float = 0.001
    batch: int = 32
    epochs: int = 100
    seed: int = 31
    clip_norm: float | None = None
    val_every: int = 1  # validation cadence in epochs
    # splits
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    # behaviour switches
    keep_frac: float = 1.0
    sigma_floor: float = 1e-5
    denorm_multiply: bool = False
    eq15_literal: bool = False
    a_st_rownorm: bool = True
    # ablations
    no_sto: bool = False
    no_sta: bool = False
    no_sfl: bool = False
    no_dsfl: bool = False
    no_gate: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.L < 1 or self.H < 1:
            raise ValueError("L and H must be >= 1")
        if self.D_model % self.heads:
            raise ValueError(f"D_model={self.D_model} not divisible by "
                             f"heads={self.heads}")
        if self.no_sta and self.no_sfl:
            raise ValueError("no_sta already removes the factor learner; "
                             "at most one of no_sta/no_sfl may be set")
        if self.no_dsfl and self.no_gate:
            raise ValueError("no_dsfl and no_gate are mutually exclusive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0.0 < self.keep_frac <= 1.0:
            raise ValueError("keep_frac must lie in (0, 1]")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")

    # -- construction helpers -------------------------------------------

    @classmethod
    def for_dataset(cls, name: str, **overrides) -> "DranConfig":
        """Defaults with the per-dataset loss-weight selection applied."""
        key = name.lower()
        if key not in ALPHA_BETA:
            raise KeyError(f"unknown dataset {name!r}; "
                           f"known: {sorted(ALPHA_BETA)}")
        alpha, beta = ALPHA_BETA[key]
        return cls(alpha=alpha, beta=beta, **overrides)

    def replace(self, **changes) -> "DranConfig":
        return dataclasses.replace(self, **changes)

    def ablated(self, variant: str) -> "DranConfig":
        """Copy with one named ablation enabled ('full' returns a copy)."""
        if variant == "full":
            return self.replace()
        if variant not in ABLATIONS:
            raise ValueError(f"unknown variant {variant!r}")
        clear = {k: False for k in ABLATIONS}
        clear[variant] = True
        return self.replace(**clear)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DranConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "DranConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
