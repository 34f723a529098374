"""
Streaming Service - online captioning of a frame stream.

Frames arrive one at a time. The greedy pick policy judges each against the
template; a picked frame advances the encoder by a single LSTM step and the
caption is re-decoded from the new hidden state. Nothing depends on the
stream's total length.
"""

import logging
import time
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional

import numpy as np

from app.core.exceptions import ConfigError, UsageError
from app.schemas.reports import StreamEvent
from app.services.dataset import read_features, toy_extract
from app.services.glance import glance_diff, read_glances
from app.services.picknet import PICK, PickNetParams, pick_policy
from app.services.seq2seq import EncoderState, Seq2SeqParams, embed_feature, greedy_decode, lstm_step
from app.services.text import Vocabulary, decode

logger = logging.getLogger(__name__)

FeatureFn = Callable[[int, np.ndarray], np.ndarray]


class StreamingCaptioner:
    """Causal picker + incremental encoder; one ``push`` per incoming glance."""

    def __init__(self, picknet: PickNetParams, seq2seq: Seq2SeqParams, vocab: Vocabulary, max_len: int = 20):
        self.picknet = picknet
        self.seq2seq = seq2seq
        self.vocab = vocab
        self.max_len = max_len
        self.state = EncoderState.zeros(seq2seq.hidden_dim)
        self.template: Optional[np.ndarray] = None
        self.picked: List[int] = []
        self.seen = 0

    def _decide(self, glance: np.ndarray) -> bool:
        if self.template is None:
            return True  # forced first pick
        _, probs, _ = pick_policy(glance_diff(glance, self.template), self.picknet)
        return int(np.argmax(probs)) == PICK

    def push(self, glance: np.ndarray, feature: Callable[[], np.ndarray]) -> Optional[str]:
        """Returns the new caption when the frame is picked, else None."""
        index = self.seen
        self.seen += 1
        if not self._decide(glance):
            return None
        self.template = glance
        self.picked.append(index)
        x = embed_feature(np.asarray(feature(), dtype=np.float64), self.seq2seq)
        self.state, _ = lstm_step(x, self.state, self.seq2seq)
        return decode(greedy_decode(self.state.h, self.seq2seq, self.max_len), self.vocab)


def stream_caption(glances: Iterable[np.ndarray], picknet: PickNetParams, seq2seq: Seq2SeqParams,
                   vocab: Vocabulary, feature_fn: FeatureFn, fps: float = 1.0, realtime: bool = False,
                   max_len: int = 20) -> Iterator[StreamEvent]:
    """Yield one StreamEvent per sampled frame; no pick cap applies online."""
    if fps <= 0:
        raise UsageError(f"fps must be positive, got {fps}")
    captioner = StreamingCaptioner(picknet, seq2seq, vocab, max_len)
    started = time.monotonic()
    for i, glance in enumerate(glances):
        t = i / fps
        if realtime:
            delay = started + t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        caption = captioner.push(glance, lambda: feature_fn(i, glance))
        yield StreamEvent(t=t, picked=caption is not None, caption=caption, n_p=len(captioner.picked))


# =============================================================================
# Frame sources
# =============================================================================

def sibling_feature_file(glance_path: Path) -> Optional[Path]:
    """``<root>/glances/<id>.glance`` -> ``<root>/features/<id>.feat`` when present."""
    candidate = glance_path.parent.parent / "features" / f"{glance_path.stem}.feat"
    return candidate if candidate.is_file() else None


def open_stream_source(glance_path, feature_dim: int, feature_path=None, extractor_seed: int = 0):
    """Load a stored glance stream and pick a feature source for it.

    Stored features are looked up by frame index; without a feature file the
    toy extractor computes features from the glances.
    """
    glance_path = Path(glance_path)
    if not glance_path.is_file():
        raise ConfigError(f"stream input {glance_path} does not exist")
    glances = read_glances(glance_path)
    feature_path = Path(feature_path) if feature_path else sibling_feature_file(glance_path)
    if feature_path is not None:
        features = read_features(feature_path, expected_frames=len(glances), expected_dim=feature_dim)
        logger.info("streaming %d frames with stored features from %s", len(glances), feature_path)
        return glances, lambda i, _g: features[i]
    logger.info("streaming %d frames with the toy extractor (D=%d)", len(glances), feature_dim)
    return glances, lambda _i, g: toy_extract(g, feature_dim, extractor_seed)
