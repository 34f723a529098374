from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

# --- Training Records ---

class EpochStats(BaseModel):
    stage: str
    epoch: int
    xent_loss: Optional[float] = None
    reward_loss: Optional[float] = None  # -mean reward
    mean_picks: Optional[float] = None
    val_cider: float = 0.0
    wall_time: float = 0.0  # logged, never written to deterministic artifacts


class EpisodeRecord(BaseModel):
    video: str
    picks: List[int]
    n: int


# --- Streaming ---

class StreamEvent(BaseModel):
    t: float
    picked: bool
    caption: Optional[str] = None
    n_p: int

    @model_validator(mode="after")
    def caption_iff_picked(self):
        if self.picked != (self.caption is not None):
            raise ValueError("caption must be present exactly when the frame is picked")
        return self


# --- Cost Model ---

class CostModelEntry(BaseModel):
    method: str
    appearance: float = Field(..., gt=0.0)
    motion: Literal[1, 2] = 1
    frames: float = Field(..., gt=0.0)


class CostTable(BaseModel):
    baseline_frames: float = Field(..., ge=1.0)
    entries: List[CostModelEntry]


# --- Evaluation ---

class PolicyReport(BaseModel):
    policy: str
    cider_variant: str = "cider"
    bleu4: float
    rouge_l: float
    cider: float
    mean_picks: float
    per_video: Optional[Dict[str, float]] = None


class EvaluationReport(BaseModel):
    split: str
    rows: List[PolicyReport]
