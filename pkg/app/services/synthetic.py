"""
Synthetic Dataset Generator

Desk-scale stand-in for a captioned video corpus. Each video is a run of
scenes; a scene is a (subject, verb, object) triple that fixes both what the
frames look like (an RGB stripe texture) and what the captions say.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.core.exceptions import UsageError
from app.core.numerics import make_rng
from app.schemas.config import ModelConfig
from app.schemas.dataset import DatasetManifest, SceneSpan, VideoRecord
from app.services.dataset import Dataset, build_dataset, save_dataset
from app.services.glance import FrameImage, make_glance

logger = logging.getLogger(__name__)

SUBJECTS = ["man", "woman", "dog", "cat", "boy", "girl", "chef", "horse", "monkey", "bird"]
VERBS = ["riding", "eating", "cutting", "playing", "holding", "pushing", "washing", "kicking",
         "carrying", "throwing"]
OBJECTS = ["bike", "apple", "onion", "guitar", "ball", "box", "car", "bottle", "rope", "hat"]
ADVERBS = ["outside", "today", "again", "slowly"]

FRAME_SIZE = 64
FEATURE_NOISE = 0.05
PIXEL_NOISE = 3.0
MIN_DIM = 8
DEFAULT_MAX_LEN = ModelConfig.model_fields["max_len"].default  # decoder steps, EOS included

Scene = Tuple[int, int, int]


# =============================================================================
# Captions
# =============================================================================

def scene_words(scene: Scene) -> Tuple[str, str, str]:
    s, v, o = scene
    return SUBJECTS[s], VERBS[v], OBJECTS[o]


def scene_phrase(scene: Scene) -> str:
    subject, verb, obj = scene_words(scene)
    return f"{subject} is {verb} {obj}"


def caption_length(n_scenes: int) -> int:
    """Tokens in a joined caption: four per scene plus one joiner between scenes."""
    return 5 * n_scenes - 1


def canonical_caption(scenes: Sequence[Scene]) -> str:
    return " then ".join(scene_phrase(s) for s in scenes)


def reference_captions(scenes: Sequence[Scene], adverb: str, max_len: int = DEFAULT_MAX_LEN) -> List[str]:
    """Canonical form, an "and" variant and an adverb variant.

    Every caption plus EOS fits in ``max_len`` decoder steps; the adverb is
    replaced by a "before" join when it would not.
    """
    phrases = [scene_phrase(s) for s in scenes]
    third = f"{canonical_caption(scenes)} {adverb}"
    if caption_length(len(scenes)) + 2 > max_len:
        third = " before ".join(phrases)
    return [canonical_caption(scenes), " and ".join(phrases), third]


# =============================================================================
# Frames and features
# =============================================================================

_OBJECT_COLORS = np.array([
    [230, 60, 60], [60, 200, 80], [70, 90, 230], [220, 200, 60], [200, 80, 210],
    [60, 210, 210], [240, 140, 40], [150, 150, 150], [120, 60, 30], [250, 250, 250],
], dtype=np.float64)


def render_frame(scene: Scene, rng: np.random.Generator, size: int = FRAME_SIZE) -> FrameImage:
    """Stripes: orientation from the subject, frequency from the verb, colour from the object."""
    s, v, o = scene
    theta = np.pi * s / len(SUBJECTS)
    freq = 1.5 + v
    phase = rng.normal(0.0, 0.15)
    yy, xx = np.mgrid[0:size, 0:size] / size
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    color = _OBJECT_COLORS[o]
    pixels = wave[:, :, None] * color[None, None, :] + (1.0 - wave[:, :, None]) * (0.15 * color)
    pixels += rng.normal(0.0, PIXEL_NOISE, size=pixels.shape)
    return FrameImage(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def quantize_glance(glance: np.ndarray) -> np.ndarray:
    # same values a PKNG round trip produces
    return np.rint(glance * 255.0) / 255.0


def _components(seed: int, dim: int) -> Dict[str, np.ndarray]:
    rng = make_rng(seed, 0x5C)
    return {
        "subject": rng.normal(0.0, 0.5, size=(len(SUBJECTS), dim)),
        "verb": rng.normal(0.0, 0.5, size=(len(VERBS), dim)),
        "object": rng.normal(0.0, 0.5, size=(len(OBJECTS), dim)),
    }


def scene_prototype(scene: Scene, components: Dict[str, np.ndarray]) -> np.ndarray:
    s, v, o = scene
    return components["subject"][s] + components["verb"][v] + components["object"][o]


# =============================================================================
# Videos
# =============================================================================

def _draw_scenes(rng: np.random.Generator, max_scenes: int) -> List[Scene]:
    scenes: List[Scene] = []
    for _ in range(int(rng.integers(1, max_scenes + 1))):
        scene = (int(rng.integers(len(SUBJECTS))), int(rng.integers(len(VERBS))), int(rng.integers(len(OBJECTS))))
        while scenes and scene == scenes[-1]:
            scene = (scene[0], (scene[1] + 1) % len(VERBS), scene[2])
        scenes.append(scene)
    return scenes


def _scene_lengths(rng: np.random.Generator, n_scenes: int, n_frames: int) -> List[int]:
    floor = min(3, n_frames // n_scenes)
    extra = rng.multinomial(n_frames - floor * n_scenes, np.full(n_scenes, 1.0 / n_scenes))
    return [int(floor + e) for e in extra]


def _split_of(i: int, n_train: int, n_validation: int) -> str:
    if i < n_train:
        return "train"
    if i < n_train + n_validation:
        return "validation"
    return "test"


def generate_synthetic(seed: int, n_train: int = 200, n_validation: int = 30, n_test: int = 50,
                       n_frames: int = 30, feature_dim: int = 64, max_scenes: int = 4,
                       max_len: int = DEFAULT_MAX_LEN) -> Dataset:
    if feature_dim < MIN_DIM:
        raise UsageError(f"feature dim {feature_dim} below the minimum of {MIN_DIM}")
    if not 1 <= max_scenes <= n_frames:
        raise UsageError(f"max_scenes={max_scenes} must lie in [1, n_frames={n_frames}]")
    if caption_length(max_scenes) + 1 > max_len:
        raise UsageError(f"{max_scenes}-scene captions need {caption_length(max_scenes) + 1} decoder steps, "
                         f"max_len is {max_len}")
    components = _components(seed, feature_dim)
    records, features, glances = [], {}, {}
    total = n_train + n_validation + n_test
    for i in range(total):
        rng = make_rng(seed, 0x5D, i)
        video_id = f"vid{i:04d}"
        scenes = _draw_scenes(rng, max_scenes)
        lengths = _scene_lengths(rng, len(scenes), n_frames)
        adverb = ADVERBS[int(rng.integers(len(ADVERBS)))]

        spans, feats, views = [], [], []
        start = 0
        for scene, length in zip(scenes, lengths):
            spans.append(SceneSpan(label=list(scene_words(scene)), start=start, end=start + length))
            proto = scene_prototype(scene, components)
            for _ in range(length):
                feats.append(proto + rng.normal(0.0, FEATURE_NOISE, size=feature_dim))
                views.append(quantize_glance(make_glance(render_frame(scene, rng))))
            start += length

        # float32 on disk; keep memory bit-equal to what a reload yields
        features[video_id] = np.asarray(feats, dtype=np.float32).astype(np.float64)
        glances[video_id] = np.stack(views)
        records.append(VideoRecord(
            id=video_id,
            split=_split_of(i, n_train, n_validation),
            n_frames=n_frames,
            captions=reference_captions(scenes, adverb, max_len),
            feature_file=f"features/{video_id}.feat",
            glance_file=f"glances/{video_id}.glance",
            scenes=spans,
        ))
    manifest = DatasetManifest(feature_dim=feature_dim, seed=seed, videos=records)
    logger.info("generated %d synthetic videos (%d/%d/%d), D=%d",
                total, n_train, n_validation, n_test, feature_dim)
    return build_dataset(manifest, features, glances)


def write_synthetic(out_dir, seed: int, **kwargs) -> Path:
    dataset = generate_synthetic(seed, **kwargs)
    path = save_dataset(dataset, out_dir)
    dataset.root = Path(out_dir)
    logger.info("dataset written to %s", path)
    return path
