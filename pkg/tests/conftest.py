"""
Shared fixtures: seeded generators, tiny models for gradient checks and a
small synthetic dataset.
"""

import numpy as np
import pytest

from app.core.numerics import make_rng
from app.schemas.config import ModelConfig
from app.schemas.dataset import VideoRecord
from app.services.dataset import Video, save_dataset
from app.services.glance import GLANCE_DIM, GLANCE_SIZE
from app.services.picknet import PickNetParams
from app.services.seq2seq import Seq2SeqParams
from app.services.synthetic import generate_synthetic


# =============================================================================
# Generators
# =============================================================================

@pytest.fixture
def rng():
    return make_rng(42)


def randomize(params, rng, bias_scale: float = 0.1):
    """Non-zero biases so every gradient path is exercised."""
    for p in params.params():
        if p.value.ndim == 1:
            p.value[...] = rng.normal(0.0, bias_scale, size=p.shape)
    return params


# =============================================================================
# Tiny models
# =============================================================================

@pytest.fixture
def tiny_model_config():
    return ModelConfig(feature_dim=5, embed_dim=4, hidden_dim=4, picknet_hidden=3)


@pytest.fixture
def tiny_seq2seq(tiny_model_config, rng):
    return randomize(Seq2SeqParams.initialize(tiny_model_config, 6, rng), rng)


@pytest.fixture
def tiny_picknet(rng):
    return randomize(PickNetParams.initialize(3, rng), rng)


# =============================================================================
# Data
# =============================================================================

@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(seed=3, n_train=6, n_validation=2, n_test=3, n_frames=30, feature_dim=8)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory, small_dataset):
    out = tmp_path_factory.mktemp("data")
    save_dataset(small_dataset, out)
    return out


@pytest.fixture
def random_glances(rng):
    return rng.random((12, 56, 56))


def zero_picknet(pick_bias: float = 0.0) -> PickNetParams:
    """All weights zero; logits are exactly (pick_bias, -pick_bias)."""
    params = PickNetParams(4)
    params.tensors["b2"].value[...] = np.array([pick_bias, -pick_bias])
    return params


def scene_change_picknet(scale: float = 50.0, threshold: float = 3.0) -> PickNetParams:
    """Hand-set policy that picks when the mean brightness shifts.

    Two hidden units read +mean and -mean of the glance difference, so the
    pick logit is scale * |mean d| - threshold and the drop logit is 0.
    """
    params = PickNetParams(2)
    params.tensors["W1"].value[0] = scale / GLANCE_DIM
    params.tensors["W1"].value[1] = -scale / GLANCE_DIM
    params.tensors["W2"].value[0] = 1.0
    params.tensors["b2"].value[0] = -threshold
    return params


def scene_video(video_id, split, levels, frames_per_scene, features, captions=("x",)) -> Video:
    """Flat glances at one brightness per scene; features are given per frame."""
    per_frame = np.repeat(np.asarray(levels, dtype=np.float64), frames_per_scene)
    glances = per_frame[:, None, None] * np.ones((1, GLANCE_SIZE, GLANCE_SIZE))
    record = VideoRecord(id=video_id, split=split, n_frames=len(glances), captions=list(captions),
                         feature_file="-", glance_file="-")
    return Video(record, np.asarray(features, dtype=np.float64), glances, [c.split() for c in captions])
