import numpy as np
import pytest

from app.core.exceptions import ConfigError, UsageError
from app.core.numerics import make_rng
from app.schemas.config import ModelConfig
from app.services.dataset import toy_extract
from app.services.evaluation import caption_tokens
from app.services.picknet import PickNetParams, run_episode
from app.services.seq2seq import Seq2SeqParams, encode_sequence
from app.services.streaming import StreamingCaptioner, open_stream_source, stream_caption
from app.services.text import build_vocab
from app.services.training import vocab_from_dataset
from tests.conftest import scene_change_picknet, scene_video, zero_picknet


@pytest.fixture
def setup(small_dataset):
    vocab = vocab_from_dataset(small_dataset, min_freq=1)
    model = ModelConfig(feature_dim=8, embed_dim=4, hidden_dim=6, picknet_hidden=4)
    seq2seq = Seq2SeqParams.initialize(model, len(vocab), make_rng(1))
    picknet = PickNetParams.initialize(4, make_rng(2))
    picknet["b2"][...] = [0.3, -0.3]
    return small_dataset.split("test")[0], seq2seq, picknet, vocab


def features_of(video):
    return lambda i, _g: video.features[i]


def scene_word_captioner():
    """Captioner naming the scene of the latest picked frame: feature e1 reads "cat", e2 reads "dog".

    The encoder forgets its cell on every step and the decoder copies the
    encoding into its state, so each word row reads one hidden unit.
    """
    vocab = build_vocab([["cat"], ["dog"]], min_freq=1)
    seq2seq = Seq2SeqParams(feature_dim=2, embed_dim=2, hidden_dim=2, vocab_size=len(vocab))
    seq2seq["W_e"][...] = np.eye(2)
    seq2seq["b_i"][...] = 10.0
    seq2seq["b_f"][...] = -10.0
    seq2seq["W_gx"][...] = 5.0 * np.eye(2)
    seq2seq["b_o"][...] = 10.0
    seq2seq["b_z"][...] = 10.0
    seq2seq["W_pv"][...] = 5.0 * np.eye(2)
    seq2seq["W_p"][vocab.lookup("cat")] = [10.0, 0.0]
    seq2seq["W_p"][vocab.lookup("dog")] = [0.0, 10.0]
    return seq2seq, vocab


class TestStreamingCaptioner:

    def test_incremental_state_matches_batch_encoder(self, setup):
        video, seq2seq, picknet, vocab = setup
        captioner = StreamingCaptioner(picknet, seq2seq, vocab)
        for i, glance in enumerate(video.glances):
            captioner.push(glance, lambda: video.features[i])
            v = encode_sequence(video.features[captioner.picked], seq2seq)
            np.testing.assert_allclose(captioner.state.h, v, rtol=0, atol=1e-12)

    def test_picks_match_offline_greedy_episode(self, setup):
        video, seq2seq, picknet, vocab = setup
        captioner = StreamingCaptioner(picknet, seq2seq, vocab)
        for i, glance in enumerate(video.glances):
            captioner.push(glance, lambda: video.features[i])
        assert captioner.picked == run_episode(video.glances, picknet, "greedy").picked

    def test_first_push_always_captions(self, setup):
        video, seq2seq, _, vocab = setup
        captioner = StreamingCaptioner(zero_picknet(-50.0), seq2seq, vocab)
        assert captioner.push(video.glances[0], lambda: video.features[0]) is not None
        assert captioner.push(video.glances[1], lambda: video.features[1]) is None


class TestStreamCaption:

    def test_final_caption_equals_offline_caption(self, setup):
        video, seq2seq, picknet, vocab = setup
        events = list(stream_caption(video.glances, picknet, seq2seq, vocab, features_of(video), max_len=8))
        last = [e.caption for e in events if e.picked][-1]
        picks = run_episode(video.glances, picknet, "greedy").picked
        assert last == " ".join(caption_tokens(video.features[picks], seq2seq, vocab, 8))
        assert events[-1].n_p == len(picks)

    def test_drop_favouring_policy_emits_one_caption(self, setup):
        video, seq2seq, _, vocab = setup
        events = list(stream_caption(video.glances, zero_picknet(-50.0), seq2seq, vocab, features_of(video)))
        assert len(events) == video.n_frames
        assert sum(e.picked for e in events) == 1
        assert events[0].picked
        assert all(e.n_p == 1 for e in events)

    def test_timestamps_follow_fps(self, setup):
        video, seq2seq, picknet, vocab = setup
        events = list(stream_caption(video.glances[:6], picknet, seq2seq, vocab, features_of(video), fps=2.0))
        assert [e.t for e in events] == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]

    def test_features_computed_only_for_picks(self, setup):
        video, seq2seq, _, vocab = setup
        calls = []

        def feature_fn(i, g):
            calls.append(i)
            return video.features[i]

        list(stream_caption(video.glances, zero_picknet(-50.0), seq2seq, vocab, feature_fn))
        assert calls == [0]

    def test_second_scene_changes_the_caption(self):
        seq2seq, vocab = scene_word_captioner()
        features = np.repeat(np.eye(2), 4, axis=0)
        video = scene_video("two", "test", [0.2, 0.8], 4, features)
        events = list(stream_caption(video.glances, scene_change_picknet(), seq2seq, vocab, features_of(video),
                                     max_len=3))
        captions = [(int(e.t), e.caption) for e in events if e.picked]
        assert captions == [(0, "cat cat cat"), (4, "dog dog dog")]

    @pytest.mark.parametrize("fps", [0.0, -1.0])
    def test_fps_must_be_positive(self, setup, fps):
        video, seq2seq, picknet, vocab = setup
        with pytest.raises(UsageError):
            list(stream_caption(video.glances, picknet, seq2seq, vocab, features_of(video), fps=fps))


class TestStreamSource:

    def test_sibling_features_found(self, small_dataset, small_dataset_dir):
        video = small_dataset.split("test")[0]
        glances, feature_fn = open_stream_source(small_dataset_dir / video.record.glance_file, 8)
        np.testing.assert_array_equal(glances, video.glances)
        np.testing.assert_array_equal(feature_fn(3, glances[3]), video.features[3])

    def test_toy_extractor_fallback(self, small_dataset, small_dataset_dir, tmp_path):
        video = small_dataset.split("test")[0]
        lone = tmp_path / "lone.glance"
        lone.write_bytes((small_dataset_dir / video.record.glance_file).read_bytes())
        glances, feature_fn = open_stream_source(lone, 8)
        np.testing.assert_array_equal(feature_fn(0, glances[0]), toy_extract(glances[0], 8))

    def test_missing_input(self, tmp_path):
        with pytest.raises(ConfigError):
            open_stream_source(tmp_path / "none.glance", 8)
