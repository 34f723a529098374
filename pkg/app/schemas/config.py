from typing import Dict, Literal, Optional

from pydantic import BaseModel, Field, model_validator

# --- Model Schemas ---

GLANCE_SIZE = 56


class ModelConfig(BaseModel):
    feature_dim: int = Field(64, ge=1)
    embed_dim: int = Field(32, ge=1)
    hidden_dim: int = Field(64, ge=1)
    picknet_hidden: int = Field(64, ge=1)
    standard_output_gate: bool = False  # False: o_t = tanh(.), True: sigmoid
    retain_prob: float = Field(0.5, gt=0.0, le=1.0)
    max_len: int = Field(20, ge=1)

    @classmethod
    def full_scale(cls, feature_dim: int = 2048) -> "ModelConfig":
        return cls(feature_dim=feature_dim, embed_dim=512, hidden_dim=1024, picknet_hidden=1024)

    @classmethod
    def desk(cls, feature_dim: int = 64) -> "ModelConfig":
        return cls(feature_dim=feature_dim)


# --- Reward Schemas ---

RewardPreset = Literal["V", "L", "V+L"]


class RewardConfig(BaseModel):
    lambda_l: float = Field(1.0, ge=0.0)
    lambda_v: float = Field(0.1, ge=0.0)
    normalize_lambda_v: bool = True  # lambda_v / E[r_v | random picks] on the train split
    n_min: int = Field(3, ge=1)
    n_max: int = 10
    tau: int = 7
    penalty: float = -1.0
    cider_variant: Literal["cider", "cider-d"] = "cider"

    @model_validator(mode="after")
    def check_limits(self):
        if not self.n_min <= self.tau <= self.n_max:
            raise ValueError(f"need n_min <= tau <= n_max, got {self.n_min}, {self.tau}, {self.n_max}")
        if self.penalty >= 0:
            raise ValueError("penalty reward must be negative")
        return self

    @classmethod
    def preset(cls, name: RewardPreset, **overrides) -> "RewardConfig":
        weights = {"V": (0.0, 0.1), "L": (1.0, 0.0), "V+L": (1.0, 0.1)}[name]
        return cls(lambda_l=weights[0], lambda_v=weights[1], **overrides)


# --- Training Schemas ---

Stage = Literal["supervision", "reinforcement", "adaptation"]


class TrainConfig(BaseModel):
    stage: Stage = "supervision"
    lr: Dict[str, float] = Field(
        default_factory=lambda: {"supervision": 3e-4, "reinforcement": 3e-4, "adaptation": 1e-4}
    )
    optimizer: Literal["adam", "sgd"] = "adam"
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(100, ge=1)
    seed: int = 0
    clip_norm: Optional[float] = 5.0
    ss_start: float = Field(0.0, ge=0.0, le=1.0)
    ss_end: float = Field(0.25, ge=0.0, le=1.0)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    use_baseline: bool = True

    @model_validator(mode="after")
    def check_lr(self):
        for stage in ("supervision", "reinforcement", "adaptation"):
            if self.lr.get(stage, 0.0) <= 0.0:
                raise ValueError(f"learning rate for {stage} must be positive")
        return self

    def stage_lr(self, stage: Optional[str] = None) -> float:
        return self.lr[stage or self.stage]


# --- Run Schemas ---

class RunConfig(BaseModel):
    """Top-level run file; its JSON schema is printed by ``pickcap.py schema``."""

    dataset: str
    output_dir: str = "runs/default"
    seed: int = 0
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)

    model_config = {"extra": "forbid"}
