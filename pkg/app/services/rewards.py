"""
Rewards Service - language reward, visual-diversity reward, pick limits.

r = lambda_l * r_l + lambda_v * r_v when N_min <= N_p <= N_max, R- otherwise.
One scalar per episode.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from app.core.exceptions import ConfigError, UsageError
from app.schemas.config import RewardConfig
from app.services.baselines import random_pick
from app.services.metrics import CaptionSet, IdfTable, cider
from app.services.seq2seq import Seq2SeqParams, encode_sequence, greedy_decode
from app.services.text import Vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardBreakdown:
    r_l: float
    r_v: float
    n_p: int
    r: float
    limited: bool

    def as_dict(self) -> Dict[str, float]:
        return {"r_l": self.r_l, "r_v": self.r_v, "n_p": self.n_p, "r": self.r, "limited": self.limited}


def decode_caption(picked_features: np.ndarray, params: Seq2SeqParams, vocab: Vocabulary,
                   max_len: int = 20):
    words = greedy_decode(encode_sequence(picked_features, params), params, max_len)
    return [vocab.token(w) for w in words]


def language_reward(picked_features: np.ndarray, params: Seq2SeqParams, refs: CaptionSet, idf: IdfTable,
                    vocab: Vocabulary, max_len: int = 20, variant: str = "cider") -> float:
    if len(picked_features) == 0:
        raise UsageError("language reward needs at least one picked frame")
    return cider(decode_caption(picked_features, params, vocab, max_len), refs, idf, variant)


def visual_diversity(picked_features: np.ndarray) -> float:
    """Sum over coordinates of the population standard deviation."""
    x = np.asarray(picked_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError("visual diversity needs at least one picked feature vector")
    std = x.std(axis=0)
    # constant columns are exactly zero, not rounding noise
    std[np.ptp(x, axis=0) == 0.0] = 0.0
    return float(std.sum())


def final_reward(r_l: float, r_v: float, n_p: int, cfg: RewardConfig, n_max: Optional[int] = None) -> RewardBreakdown:
    if n_p < 1:
        raise UsageError("an episode always picks at least one frame")
    upper = cfg.n_max if n_max is None else n_max
    limited = not (cfg.n_min <= n_p <= upper)
    r = cfg.penalty if limited else cfg.lambda_l * r_l + cfg.lambda_v * r_v
    return RewardBreakdown(r_l, r_v, n_p, r, limited)


def nmax_schedule(epoch: int, total_epochs: int, n_frames: int = 30, tau: int = 7) -> int:
    """Linear decay from ceil(n/3) at epoch 0 to tau at total//2, flat afterwards."""
    start = math.ceil(n_frames / 3)
    if tau > start:
        raise ConfigError(f"tau={tau} exceeds the initial pick limit ceil({n_frames}/3)={start}")
    if not 0 <= epoch <= total_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {total_epochs}]")
    plateau = total_epochs // 2
    if plateau == 0 or epoch >= plateau:
        return tau
    return int(math.floor(start + (tau - start) * epoch / plateau + 0.5))


def estimate_lambda_v(features_by_video: Sequence[np.ndarray], rng: np.random.Generator,
                      base: float = 0.1, trials: int = 4) -> float:
    """base / E[r_v] under random picks, estimated on the training split."""
    values = []
    for features in features_by_video:
        for _ in range(trials):
            values.append(visual_diversity(features[random_pick(len(features), rng)]))
    mean = float(np.mean(values)) if values else 0.0
    return base if mean <= 0.0 else base / mean


@dataclass
class CaptionReward:
    """Environment turning a pick set into a RewardBreakdown via the frozen captioner."""

    params: Seq2SeqParams
    vocab: Vocabulary
    idf: IdfTable
    cfg: RewardConfig
    max_len: int = 20

    def __call__(self, features: np.ndarray, picked: Sequence[int], refs: CaptionSet,
                 n_max: Optional[int] = None) -> RewardBreakdown:
        chosen = features[list(picked)]
        n_p = len(picked)
        upper = self.cfg.n_max if n_max is None else n_max
        if not self.cfg.n_min <= n_p <= upper:
            # limited episodes never need the captioner
            return final_reward(0.0, 0.0, n_p, self.cfg, upper)
        r_l = 0.0
        if self.cfg.lambda_l > 0.0:
            r_l = language_reward(chosen, self.params, refs, self.idf, self.vocab, self.max_len,
                                  self.cfg.cider_variant)
        r_v = visual_diversity(chosen) if self.cfg.lambda_v > 0.0 else 0.0
        return final_reward(r_l, r_v, n_p, self.cfg, upper)
