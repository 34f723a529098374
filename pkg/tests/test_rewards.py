import numpy as np
import pytest

from app.core.exceptions import ConfigError, UsageError
from app.core.numerics import make_rng
from app.schemas.config import RewardConfig
from app.services.metrics import CaptionSet, build_idf
from app.services.rewards import (
    CaptionReward, estimate_lambda_v, final_reward, language_reward, nmax_schedule, visual_diversity,
)
from app.services.seq2seq import Seq2SeqParams
from app.services.text import build_vocab


@pytest.fixture
def dog_captioner():
    """Vocabulary (dog, runs) and a decoder that only ever says "dog"."""
    vocab = build_vocab([["dog", "runs"]], min_freq=1)
    params = Seq2SeqParams(feature_dim=4, embed_dim=4, hidden_dim=4, vocab_size=len(vocab))
    params["b_p"][...] = 1.0
    params["W_p"][vocab.lookup("dog")] = 1.0
    return params, vocab


@pytest.fixture
def refs():
    corpus = [CaptionSet.of("v1", [["dog"]]), CaptionSet.of("v2", [["cat"]])]
    return corpus[0], build_idf(corpus)


# =============================================================================
# Visual diversity
# =============================================================================

class TestVisualDiversity:

    def test_single_frame_is_zero(self, rng):
        assert visual_diversity(rng.normal(size=(1, 6))) == 0.0

    def test_hand_value(self):
        assert visual_diversity(np.array([[0.0, 0.0], [2.0, 4.0]])) == pytest.approx(3.0)

    def test_constant_columns_exactly_zero(self):
        x = np.full((5, 3), 0.1)
        assert visual_diversity(x) == 0.0

    def test_scales_linearly(self, rng):
        x = rng.normal(size=(4, 5))
        assert visual_diversity(3.0 * x) == pytest.approx(3.0 * visual_diversity(x))

    def test_empty(self):
        with pytest.raises(UsageError):
            visual_diversity(np.zeros((0, 3)))


# =============================================================================
# Pick limits and the final reward
# =============================================================================

class TestFinalReward:

    def test_weighted_sum_inside_limits(self):
        out = final_reward(2.0, 3.0, 5, RewardConfig())
        assert out.r == pytest.approx(2.3)
        assert not out.limited

    @pytest.mark.parametrize("n_p", [1, 2, 11])
    def test_penalty_outside_limits(self, n_p):
        out = final_reward(9.0, 9.0, n_p, RewardConfig())
        assert out.r == -1.0
        assert out.limited

    def test_scheduled_upper_limit_overrides(self):
        assert final_reward(1.0, 0.0, 9, RewardConfig(), n_max=8).limited

    def test_linear_in_weights(self):
        a = final_reward(2.0, 3.0, 4, RewardConfig(lambda_l=1.0, lambda_v=0.1)).r
        b = final_reward(2.0, 3.0, 4, RewardConfig(lambda_l=2.0, lambda_v=0.2)).r
        assert b == pytest.approx(2 * a)

    def test_presets(self):
        assert (RewardConfig.preset("V").lambda_l, RewardConfig.preset("V").lambda_v) == (0.0, 0.1)
        assert RewardConfig.preset("L").lambda_v == 0.0

    def test_invalid_limits(self):
        with pytest.raises(ValueError):
            RewardConfig(n_min=5, tau=4, n_max=10)

    def test_zero_picks(self):
        with pytest.raises(UsageError):
            final_reward(0.0, 0.0, 0, RewardConfig())


class TestNmaxSchedule:

    @pytest.mark.parametrize("epoch, expected", [(0, 10), (25, 9), (50, 7), (80, 7), (100, 7)])
    def test_decay_and_plateau(self, epoch, expected):
        assert nmax_schedule(epoch, 100, n_frames=30, tau=7) == expected

    def test_monotone(self):
        values = [nmax_schedule(e, 40) for e in range(41)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_single_epoch_is_tau(self):
        assert nmax_schedule(0, 1) == 7

    def test_tau_too_large(self):
        with pytest.raises(ConfigError):
            nmax_schedule(0, 10, n_frames=12, tau=7)

    def test_epoch_out_of_range(self):
        with pytest.raises(UsageError):
            nmax_schedule(11, 10)


# =============================================================================
# Language reward and the full environment
# =============================================================================

class TestCaptionReward:

    def test_language_reward_of_exact_unigram(self, dog_captioner, refs, rng):
        params, vocab = dog_captioner
        ref, idf = refs
        # one-word caption: only the unigram similarity is non-zero
        assert language_reward(rng.normal(size=(3, 4)), params, ref, idf, vocab, max_len=1) == pytest.approx(2.5)

    def test_environment_composes_rewards(self, dog_captioner, refs, rng):
        params, vocab = dog_captioner
        ref, idf = refs
        features = rng.normal(size=(6, 4))
        env = CaptionReward(params, vocab, idf, RewardConfig(), max_len=1)
        out = env(features, [0, 2, 4], ref)
        assert out.r_l == pytest.approx(2.5)
        assert out.r_v == pytest.approx(visual_diversity(features[[0, 2, 4]]))
        assert out.r == pytest.approx(2.5 + 0.1 * out.r_v)

    def test_limited_episode_skips_captioner(self, dog_captioner, refs, rng):
        params, vocab = dog_captioner
        ref, idf = refs
        out = CaptionReward(params, vocab, idf, RewardConfig(), max_len=1)(rng.normal(size=(6, 4)), [0], ref)
        assert out.limited
        assert out.r == -1.0
        assert out.r_l == 0.0

    def test_visual_only_preset(self, dog_captioner, refs, rng):
        params, vocab = dog_captioner
        ref, idf = refs
        features = rng.normal(size=(6, 4))
        out = CaptionReward(params, vocab, idf, RewardConfig.preset("V"), max_len=1)(features, [0, 1, 2], ref)
        assert out.r_l == 0.0
        assert out.r == pytest.approx(0.1 * visual_diversity(features[:3]))


class TestLambdaV:

    def test_constant_features_fall_back_to_base(self):
        assert estimate_lambda_v([np.ones((10, 3))], make_rng(0), base=0.1) == 0.1

    def test_inverse_to_feature_scale(self, rng):
        videos = [rng.normal(size=(10, 3)) for _ in range(3)]
        a = estimate_lambda_v(videos, make_rng(5))
        b = estimate_lambda_v([2.0 * v for v in videos], make_rng(5))
        assert b == pytest.approx(a / 2)
