"""
Evaluation Service

Runs a pick policy over a split, captions the picked frames with greedy
decoding and scores the captions with BLEU-4, ROUGE-L and CIDEr. IDF comes
from the evaluated split's own references.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import UsageError
from app.core.numerics import make_rng
from app.schemas.reports import EvaluationReport, PolicyReport
from app.services.baselines import kmeans_pick, random_pick
from app.services.dataset import Dataset, Video
from app.services.metrics import CaptionSet, bleu4, build_idf, corpus_cider, corpus_rouge_l
from app.services.picknet import PickNetParams, run_episode
from app.services.seq2seq import Seq2SeqParams, encode_sequence, greedy_decode
from app.services.text import Vocabulary

logger = logging.getLogger(__name__)

POLICIES = ("picknet", "random", "kmeans", "all")
RANDOM_STREAM = 0x7A


def caption_tokens(features: np.ndarray, seq2seq: Seq2SeqParams, vocab: Vocabulary, max_len: int = 20) -> List[str]:
    return [vocab.token(w) for w in greedy_decode(encode_sequence(features, seq2seq), seq2seq, max_len)]


def greedy_picks(video: Video, picknet: PickNetParams) -> List[int]:
    return run_episode(video.glances, picknet, "greedy").picked


def mean_greedy_picks(videos: Sequence[Video], picknet: PickNetParams) -> float:
    return float(np.mean([len(greedy_picks(v, picknet)) for v in videos])) if videos else 0.0


def picks_for(video: Video, index: int, policy: str, picknet: Optional[PickNetParams] = None,
              k: Optional[int] = None, seed: int = 0) -> List[int]:
    if policy == "all":
        return list(range(video.n_frames))
    if policy == "picknet":
        if picknet is None:
            raise UsageError("the picknet policy needs trained PickNet weights")
        return greedy_picks(video, picknet)
    if policy == "random":
        return random_pick(video.n_frames, make_rng(seed, RANDOM_STREAM, index))
    if policy == "kmeans":
        if k is None:
            raise UsageError("the kmeans policy needs k")
        return kmeans_pick(video.features, min(max(k, 1), video.n_frames), seed)
    raise UsageError(f"unknown pick policy: {policy} (choose from {', '.join(POLICIES)})")


def score_captions(candidates: Sequence[Sequence[str]], refsets: Sequence[CaptionSet],
                   variant: str = "cider") -> Tuple[float, float, float, List[float]]:
    """(bleu4, rouge_l, cider, per-video cider) with idf over ``refsets``."""
    idf = build_idf(refsets)
    cider_mean, per_video = corpus_cider(candidates, refsets, idf, variant)
    return bleu4(candidates, refsets), corpus_rouge_l(candidates, refsets), cider_mean, per_video


def split_cider(videos: Sequence[Video], seq2seq: Seq2SeqParams, vocab: Vocabulary,
                picknet: Optional[PickNetParams] = None, variant: str = "cider", max_len: int = 20) -> float:
    """Greedy CIDEr used for best-epoch selection during training."""
    if not videos:
        logger.warning("empty split skipped: no videos to score, CIDEr reported as 0")
        return 0.0
    candidates = []
    for video in videos:
        picks = greedy_picks(video, picknet) if picknet is not None else list(range(video.n_frames))
        candidates.append(caption_tokens(video.features[picks], seq2seq, vocab, max_len))
    idf = build_idf([v.caption_set() for v in videos])
    return corpus_cider(candidates, [v.caption_set() for v in videos], idf, variant)[0]


def evaluate_policy(videos: Sequence[Video], policy: str, seq2seq: Seq2SeqParams, vocab: Vocabulary,
                    picknet: Optional[PickNetParams] = None, k: Optional[int] = None, seed: int = 0,
                    variant: str = "cider", max_len: int = 20, workers: int = 1) -> PolicyReport:
    def run(item):
        index, video = item
        picks = picks_for(video, index, policy, picknet, k, seed)
        return len(picks), caption_tokens(video.features[picks], seq2seq, vocab, max_len)

    items = list(enumerate(videos))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    refsets = [v.caption_set() for v in videos]
    bleu, rouge, cider_mean, per_video = score_captions([c for _, c in results], refsets, variant)
    return PolicyReport(
        policy=policy,
        cider_variant=variant,
        bleu4=bleu,
        rouge_l=rouge,
        cider=cider_mean,
        mean_picks=float(np.mean([n for n, _ in results])),
        per_video={v.id: s for v, s in zip(videos, per_video)},
    )


def evaluate_split(dataset: Dataset, split: str, seq2seq: Seq2SeqParams, vocab: Vocabulary,
                   policies: Sequence[str] = ("all",), picknet: Optional[PickNetParams] = None,
                   k: Optional[int] = None, seed: int = 0, variant: str = "cider", max_len: int = 20,
                   workers: int = 1) -> EvaluationReport:
    for policy in policies:
        if policy not in POLICIES:
            raise UsageError(f"unknown pick policy: {policy} (choose from {', '.join(POLICIES)})")
    videos = dataset.require_split(split)
    if "kmeans" in policies and k is None:
        if picknet is None:
            raise UsageError("kmeans needs --k or a PickNet checkpoint to take the mean pick count from")
        k = max(1, int(round(mean_greedy_picks(videos, picknet))))
        logger.info("k-means baseline uses k=%d (mean greedy picks)", k)

    rows: List[PolicyReport] = []
    for policy in policies:
        row = evaluate_policy(videos, policy, seq2seq, vocab, picknet, k, seed, variant, max_len, workers)
        logger.info("%-8s %s: BLEU-4 %.4f  ROUGE-L %.4f  %s %.4f  picks %.2f",
                    policy, split, row.bleu4, row.rouge_l, variant.upper(), row.cider, row.mean_picks)
        rows.append(row)
    return EvaluationReport(split=split, rows=rows)


def per_policy_cider(report: EvaluationReport) -> Dict[str, float]:
    return {row.policy: row.cider for row in report.rows}
