"""
Dataset Service - manifest, feature files and in-memory datasets.

Feature file: b"PKNF" | u32 version | u32 n_frames | u32 D | f32 LE row-major.
Values are widened to float64 on load.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.core.exceptions import ConfigError, FormatError, ShapeError
from app.core.numerics import make_rng
from app.schemas.dataset import DatasetManifest, VideoRecord
from app.services.glance import GLANCE_DIM, read_glances, write_glances
from app.services.metrics import CaptionSet
from app.services.text import tokenize

logger = logging.getLogger(__name__)

MAGIC = b"PKNF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
MANIFEST_NAME = "manifest.json"


# =============================================================================
# Feature files
# =============================================================================

def write_features(path, features: np.ndarray) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"feature stack must be (n_frames, D), got {features.shape}")
    header = _HEADER.pack(MAGIC, VERSION, features.shape[0], features.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path, expected_frames: Optional[int] = None, expected_dim: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(path, 0, "feature file does not exist")
    if len(blob) < _HEADER.size:
        raise FormatError(path, len(blob), "truncated header")
    magic, version, n, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(path, 0, "bad magic, expected PKNF")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported feature version {version}")
    if expected_frames is not None and n != expected_frames:
        raise FormatError(path, 8, f"{n} frames in header, manifest says {expected_frames}")
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(path, 12, f"feature dim {dim} in header, manifest says {expected_dim}")
    need = _HEADER.size + 4 * n * dim
    if len(blob) != need:
        raise FormatError(path, min(len(blob), need), f"payload holds {len(blob) - _HEADER.size} bytes, need {4 * n * dim}")
    return np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, dim).astype(np.float64)


# =============================================================================
# Toy extractor
# =============================================================================

@lru_cache(maxsize=8)
def _projection(dim: int, seed: int) -> np.ndarray:
    return make_rng(seed, 0x7E47).normal(0.0, 1.0 / np.sqrt(GLANCE_DIM), size=(dim, GLANCE_DIM))


def toy_extract(glance: np.ndarray, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for a CNN: a fixed seeded projection of the glance."""
    centred = glance.reshape(-1) - 0.5
    return np.tanh(4.0 * (_projection(dim, seed) @ centred))


# =============================================================================
# Datasets
# =============================================================================

@dataclass
class Video:
    record: VideoRecord
    features: np.ndarray  # (n_frames, D)
    glances: np.ndarray  # (n_frames, 56, 56)
    tokens: List[List[str]] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.record.id

    @property
    def n_frames(self) -> int:
        return self.record.n_frames

    def caption_set(self) -> CaptionSet:
        return CaptionSet.of(self.id, self.tokens)


@dataclass
class Dataset:
    manifest: DatasetManifest
    videos: Dict[str, Video]
    root: Optional[Path] = None

    @property
    def feature_dim(self) -> int:
        return self.manifest.feature_dim

    def split(self, name: str) -> List[Video]:
        return [self.videos[r.id] for r in self.manifest.split(name)]

    def require_split(self, name: str) -> List[Video]:
        videos = self.split(name)
        if not videos:
            raise ConfigError(f"dataset has no {name} videos")
        return videos


def _make_video(record: VideoRecord, features: np.ndarray, glances: np.ndarray) -> Video:
    return Video(record, features, glances, [tokenize(c) for c in record.captions])


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        manifest = DatasetManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise ConfigError(f"no dataset manifest at {manifest_path}")
    except json.JSONDecodeError as e:
        raise FormatError(manifest_path, e.pos, f"manifest is not valid JSON: {e.msg}")
    root = manifest_path.parent
    videos = {}
    for rec in manifest.videos:
        features = read_features(root / rec.feature_file, rec.n_frames, manifest.feature_dim)
        glances = read_glances(root / rec.glance_file, rec.n_frames)
        videos[rec.id] = _make_video(rec, features, glances)
    logger.info("loaded %d videos (D=%d) from %s", len(videos), manifest.feature_dim, root)
    return Dataset(manifest, videos, root)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "glances").mkdir(parents=True, exist_ok=True)
    for rec in dataset.manifest.videos:
        video = dataset.videos[rec.id]
        write_features(out / rec.feature_file, video.features)
        write_glances(out / rec.glance_file, video.glances)
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(dataset.manifest.model_dump(mode="json"), indent=2, sort_keys=True),
                             encoding="utf-8")
    return manifest_path


def build_dataset(manifest: DatasetManifest, features: Dict[str, np.ndarray], glances: Dict[str, np.ndarray]) -> Dataset:
    videos = {r.id: _make_video(r, features[r.id], glances[r.id]) for r in manifest.videos}
    return Dataset(manifest, videos)
