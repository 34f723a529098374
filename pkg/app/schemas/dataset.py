from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

# --- Dataset Schemas ---

Split = Literal["train", "validation", "test"]


class SceneSpan(BaseModel):
    label: List[str]  # (subject, verb, object)
    start: int
    end: int  # exclusive


class VideoRecord(BaseModel):
    id: str
    split: Split
    n_frames: int = Field(30, ge=1)
    captions: List[str]
    feature_file: str
    glance_file: str
    scenes: Optional[List[SceneSpan]] = None  # synthetic data only


class DatasetManifest(BaseModel):
    version: int = 1
    feature_dim: int = Field(..., ge=1)
    seed: Optional[int] = None
    videos: List[VideoRecord]

    @model_validator(mode="after")
    def check_unique_ids(self):
        ids = [v.id for v in self.videos]
        if len(ids) != len(set(ids)):
            raise ValueError("video ids must be unique (splits are disjoint by id)")
        return self

    def split(self, name: str) -> List[VideoRecord]:
        return [v for v in self.videos if v.split == name]
