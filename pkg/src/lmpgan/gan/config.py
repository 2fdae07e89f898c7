from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class GanConfig:
    n: int = 4
    lambda_adv: float = 0.2
    lambda_lp: float = 1.0
    lambda_gdl: float = 1.0
    lambda_dcl: float = 0.2
    p: int = 2
    alpha: int = 1
    lr_g: float = 0.0005
    lr_d: float = 0.0005
    batch_size: int = 4
    max_iterations: int = 20_000
    seed: int = 0
    eval_every: int = 500
    # early stop: validation L2 must improve by min_improvement within patience iterations
    patience: int = 2_000
    min_improvement: float = 0.001
    divergence_limit: float = 1e6
    # 0, 2 (hour of day) or 4 (hour of day + day of week) sin/cos planes appended to G input
    extra_channels: int = 0
    # multiplies every hidden width; 1.0 is the published architecture
    width: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("history length n must be >= 1")
        for name in ("lambda_adv", "lambda_lp", "lambda_gdl", "lambda_dcl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.alpha < 1 or int(self.alpha) != self.alpha:
            raise ValueError("alpha must be an integer >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.extra_channels not in (0, 2, 4):
            raise ValueError("extra_channels must be 0, 2 or 4")
        if self.width <= 0:
            raise ValueError("width must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})
