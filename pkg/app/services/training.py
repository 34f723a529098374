"""
Training Service - supervision, reinforcement and adaptation stages.

Randomness is keyed, never shared: every (stage, epoch, video) gets its own
PCG64 stream, so runs replay exactly, resume across stages and give the same
numbers with any worker count (up to summation order).
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.checkpoint import read_checkpoint, write_checkpoint
from app.core.exceptions import ConfigError, UsageError
from app.core.numerics import Optimizer, global_grad_norm, make_rng, zero_grads
from app.schemas.config import ModelConfig, TrainConfig
from app.schemas.reports import EpochStats
from app.services.dataset import Dataset, Video
from app.services.evaluation import split_cider
from app.services.metrics import CaptionSet, build_idf
from app.services.picknet import EpisodeTrace, PickNetParams, policy_gradient, run_episode
from app.services.rewards import CaptionReward, RewardBreakdown, estimate_lambda_v, nmax_schedule
from app.services.seq2seq import Seq2SeqParams, caption_loss_and_grads
from app.services.text import EOS, Vocabulary, build_vocab, encode

logger = logging.getLogger(__name__)

STAGE_KEYS = {"supervision": 1, "reinforcement": 2, "adaptation": 3}
ORDER_STREAM = 0x0D
XE_STREAM = 0x3E
EPISODE_STREAM = 0xE9
LAMBDA_STREAM = 0x1A

# reward_fn(features, picked, refs, n_max) -> RewardBreakdown
RewardFn = Callable[[np.ndarray, Sequence[int], CaptionSet, Optional[int]], RewardBreakdown]


# =============================================================================
# Schedules and small helpers
# =============================================================================

def scheduled_sampling_prob(epoch: int, total_epochs: int, start: float = 0.0, end: float = 0.25) -> float:
    """Feedback probability: linear from ``start`` at epoch 0 to ``end`` at the last epoch."""
    if total_epochs <= 1:
        return start
    if not 0 <= epoch < total_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {total_epochs})")
    return start + (end - start) * epoch / (total_epochs - 1)


def caption_targets(video: Video, vocab: Vocabulary) -> List[List[int]]:
    return [encode(tokens, vocab) + [EOS] for tokens in video.tokens]


def vocab_from_dataset(dataset: Dataset, min_freq: int = 3) -> Vocabulary:
    return build_vocab((t for v in dataset.require_split("train") for t in v.tokens), min_freq)


def effective_batch_size(requested: int, n_videos: int) -> int:
    if requested > n_videos:
        logger.warning("batch size %d exceeds the %d training videos; using %d", requested, n_videos, n_videos)
        return n_videos
    return requested


def epoch_batches(seed: int, epoch: int, n_videos: int, batch_size: int) -> List[np.ndarray]:
    order = make_rng(seed, ORDER_STREAM, epoch).permutation(n_videos)
    return [order[i:i + batch_size] for i in range(0, n_videos, batch_size)]


def scale_grads(param_sets, factor: float) -> None:
    for params in param_sets:
        for p in params.params():
            p.grad *= factor


def accumulate(jobs: Sequence, param_sets: Tuple, fn: Callable, workers: int = 1) -> List:
    """Run ``fn(param_sets, job)`` per job, summing gradients in job order.

    With one worker everything accumulates in place. With more, each job runs
    on private copies whose gradients are added back in job order.
    """
    if workers <= 1:
        return [fn(param_sets, job) for job in jobs]

    def run(job):
        local = tuple(ps.copy() for ps in param_sets)
        for ps in local:
            zero_grads(ps.params())
        return fn(local, job), local

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, jobs))
    for _, local in results:
        for target, source in zip(param_sets, local):
            for name, p in target.tensors.items():
                p.grad += source.tensors[name].grad
    return [out for out, _ in results]


# =============================================================================
# Results and logging
# =============================================================================

@dataclass
class StageResult:
    stage: str
    stats: List[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_cider: float = -math.inf

    def to_ndjson(self) -> str:
        return "".join(json.dumps(s.model_dump(exclude={"wall_time"}), sort_keys=True) + "\n" for s in self.stats)


def _log_epoch(stats: EpochStats, stats_path: Optional[Path]) -> None:
    parts = [f"{stats.stage} epoch {stats.epoch}"]
    if stats.xent_loss is not None:
        parts.append(f"L_X {stats.xent_loss:.4f}")
    if stats.reward_loss is not None:
        parts.append(f"L_R {stats.reward_loss:.4f}")
    if stats.mean_picks is not None:
        parts.append(f"picks {stats.mean_picks:.2f}")
    parts.append(f"val CIDEr {stats.val_cider:.4f} ({stats.wall_time:.1f}s)")
    logger.info("  ".join(parts))
    if stats_path is not None:
        with open(stats_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(stats.model_dump(exclude={"wall_time"}), sort_keys=True) + "\n")


def _start_from(result: StageResult, val: float) -> None:
    """The incoming weights compete for best as epoch -1; a stage never hands back a worse model."""
    result.best_val_cider, result.best_epoch = val, -1
    logger.info("%s starts from val CIDEr %.4f", result.stage, val)


def _splits(dataset: Dataset) -> Tuple[List[Video], List[Video]]:
    return dataset.require_split("train"), dataset.require_split("validation")


# =============================================================================
# Supervision
# =============================================================================

def _xe_job(seed: int, epoch: int, feedback_prob: float, retain: float, targets: Dict[str, List[List[int]]]):
    def job(param_sets, item):
        index, video, picks = item
        (seq2seq,) = param_sets[:1]
        rng = make_rng(seed, XE_STREAM, epoch, index)
        options = targets[video.id]
        gt = options[int(rng.integers(len(options)))]
        features = video.features if picks is None else video.features[picks]
        loss, _ = caption_loss_and_grads(features, gt, seq2seq, feedback_prob, rng, retain)
        return loss
    return job


def train_supervision(dataset: Dataset, seq2seq: Seq2SeqParams, vocab: Vocabulary, cfg: TrainConfig,
                      model: ModelConfig, stats_path: Optional[Path] = None,
                      workers: int = 1) -> Tuple[Seq2SeqParams, StageResult]:
    """Cross-entropy on all frames with scheduled sampling; returns the best-validation weights."""
    train, validation = _splits(dataset)
    targets = {v.id: caption_targets(v, vocab) for v in train}
    batch_size = effective_batch_size(cfg.batch_size, len(train))
    optimizer = Optimizer(cfg.optimizer, cfg.stage_lr("supervision"), cfg.clip_norm)
    result = StageResult("supervision")
    best = seq2seq.copy()
    zero_grads(seq2seq.params())
    _start_from(result, split_cider(validation, seq2seq, vocab, max_len=model.max_len))

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        eps = scheduled_sampling_prob(epoch, cfg.epochs, cfg.ss_start, cfg.ss_end)
        job = _xe_job(cfg.seed, epoch, eps, model.retain_prob, targets)
        losses = []
        for batch in epoch_batches(cfg.seed, epoch, len(train), batch_size):
            items = [(int(i), train[i], None) for i in batch]
            batch_losses = accumulate(items, (seq2seq,), job, workers)
            scale_grads((seq2seq,), 1.0 / len(items))
            optimizer.step(seq2seq.params())
            losses.extend(batch_losses)
            logger.debug("supervision batch: mean L_X %.4f", float(np.mean(batch_losses)))

        val = split_cider(validation, seq2seq, vocab, max_len=model.max_len)
        stats = EpochStats(stage="supervision", epoch=epoch, xent_loss=float(np.mean(losses)),
                           val_cider=val, wall_time=time.perf_counter() - started)
        result.stats.append(stats)
        _log_epoch(stats, stats_path)
        if val > result.best_val_cider:
            result.best_val_cider, result.best_epoch = val, epoch
            best = seq2seq.copy()
    zero_grads(best.params())
    return best, result


# =============================================================================
# Reinforcement
# =============================================================================

@dataclass
class ReinforceUpdate:
    sampled: EpisodeTrace
    greedy: Optional[EpisodeTrace]
    reward: RewardBreakdown
    baseline_reward: Optional[RewardBreakdown]
    baseline: float
    advantage: float
    distributions: List[np.ndarray] = field(default_factory=list)


def reinforce_from_trace(sampled: EpisodeTrace, video: Video, picknet: PickNetParams, reward_fn: RewardFn,
                         n_max: Optional[int] = None, use_baseline: bool = True) -> ReinforceUpdate:
    """Score a sampled episode against the greedy one and accumulate the policy gradient."""
    refs = video.caption_set()
    reward = reward_fn(video.features, sampled.picked, refs, n_max)
    greedy, baseline_reward, baseline = None, None, 0.0
    if use_baseline:
        greedy = run_episode(video.glances, picknet, "greedy")
        baseline_reward = reward_fn(video.features, greedy.picked, refs, n_max)
        baseline = baseline_reward.r
    advantage = reward.r - baseline
    policy_gradient(sampled, advantage, picknet)
    distributions = [a.probs for a in sampled.actions if not a.forced]
    return ReinforceUpdate(sampled, greedy, reward, baseline_reward, baseline, advantage, distributions)


def reinforce_step(video: Video, picknet: PickNetParams, reward_fn: RewardFn, rng: np.random.Generator,
                   n_max: Optional[int] = None, use_baseline: bool = True) -> ReinforceUpdate:
    """One Monte-Carlo episode with the self-critical baseline b = r(greedy episode)."""
    sampled = run_episode(video.glances, picknet, "stochastic", rng)
    return reinforce_from_trace(sampled, video, picknet, reward_fn, n_max, use_baseline)


def make_reward(dataset: Dataset, seq2seq: Seq2SeqParams, vocab: Vocabulary, cfg: TrainConfig,
                model: ModelConfig, stage: str) -> CaptionReward:
    """Reward environment with training-split idf and, if asked, a normalised lambda_v."""
    train = dataset.require_split("train")
    reward_cfg = cfg.reward
    if reward_cfg.normalize_lambda_v and reward_cfg.lambda_v > 0.0:
        rng = make_rng(cfg.seed, LAMBDA_STREAM, STAGE_KEYS[stage])
        lambda_v = estimate_lambda_v([v.features for v in train], rng, base=reward_cfg.lambda_v)
        logger.info("lambda_v normalised to %.6f", lambda_v)
        reward_cfg = reward_cfg.model_copy(update={"lambda_v": lambda_v})
    idf = build_idf([v.caption_set() for v in train])
    return CaptionReward(seq2seq, vocab, idf, reward_cfg, model.max_len)


def _reinforce_job(seed: int, stage: str, epoch: int, reward_fn: RewardFn, epochs: int, tau: int,
                   use_baseline: bool):
    def job(param_sets, item):
        index, video = item
        picknet = param_sets[0]
        rng = make_rng(seed, STAGE_KEYS[stage], epoch, index, EPISODE_STREAM)
        n_max = nmax_schedule(epoch, epochs, video.n_frames, tau)
        return reinforce_step(video, picknet, reward_fn, rng, n_max, use_baseline)
    return job


def train_reinforcement(dataset: Dataset, picknet: PickNetParams, seq2seq: Seq2SeqParams, vocab: Vocabulary,
                        cfg: TrainConfig, model: ModelConfig, stats_path: Optional[Path] = None,
                        workers: int = 1, reward_fn: Optional[RewardFn] = None) -> Tuple[PickNetParams, StageResult]:
    """REINFORCE on theta against the frozen captioner."""
    train, validation = _splits(dataset)
    if reward_fn is None:
        reward_fn = make_reward(dataset, seq2seq, vocab, cfg, model, "reinforcement")
    batch_size = effective_batch_size(cfg.batch_size, len(train))
    optimizer = Optimizer(cfg.optimizer, cfg.stage_lr("reinforcement"), cfg.clip_norm)
    result = StageResult("reinforcement")
    best = picknet.copy()
    zero_grads(picknet.params())
    _start_from(result, split_cider(validation, seq2seq, vocab, picknet, max_len=model.max_len))

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        job = _reinforce_job(cfg.seed, "reinforcement", epoch, reward_fn, cfg.epochs, cfg.reward.tau,
                             cfg.use_baseline)
        rewards = []
        for batch in epoch_batches(cfg.seed, epoch, len(train), batch_size):
            items = [(int(i), train[i]) for i in batch]
            updates = accumulate(items, (picknet,), job, workers)
            scale_grads((picknet,), 1.0 / len(items))
            logger.debug("reinforce batch: grad norm %.4e", global_grad_norm(picknet.params()))
            optimizer.step(picknet.params())
            rewards.extend(u.reward.r for u in updates)

        val = split_cider(validation, seq2seq, vocab, picknet, max_len=model.max_len)
        picks = float(np.mean([len(run_episode(v.glances, picknet, "greedy").picked) for v in validation]))
        stats = EpochStats(stage="reinforcement", epoch=epoch, reward_loss=-float(np.mean(rewards)),
                           mean_picks=picks, val_cider=val, wall_time=time.perf_counter() - started)
        result.stats.append(stats)
        _log_epoch(stats, stats_path)
        if val > result.best_val_cider:
            result.best_val_cider, result.best_epoch = val, epoch
            best = picknet.copy()
    zero_grads(best.params())
    return best, result


# =============================================================================
# Adaptation
# =============================================================================

def _adaptation_job(seed: int, epoch: int, reward_fn: RewardFn, epochs: int, cfg: TrainConfig, retain: float,
                    targets: Dict[str, List[List[int]]]):
    xe = _xe_job(seed, epoch, cfg.ss_end, retain, targets)

    def job(param_sets, item):
        index, video = item
        picknet, seq2seq = param_sets
        rng = make_rng(seed, STAGE_KEYS["adaptation"], epoch, index, EPISODE_STREAM)
        sampled = run_episode(video.glances, picknet, "stochastic", rng)
        n_max = nmax_schedule(epoch, epochs, video.n_frames, cfg.reward.tau)
        update = reinforce_from_trace(sampled, video, picknet, reward_fn, n_max, cfg.use_baseline)
        # picks are constants here: nothing flows back into theta
        loss = xe((seq2seq,), (index, video, sampled.picked))
        return update, loss
    return job


def train_adaptation(dataset: Dataset, picknet: PickNetParams, seq2seq: Seq2SeqParams, vocab: Vocabulary,
                     cfg: TrainConfig, model: ModelConfig, stats_path: Optional[Path] = None,
                     workers: int = 1) -> Tuple[PickNetParams, Seq2SeqParams, StageResult]:
    """Approximate joint training: XE on stochastic picks for omega, REINFORCE for theta."""
    train, validation = _splits(dataset)
    targets = {v.id: caption_targets(v, vocab) for v in train}
    batch_size = effective_batch_size(cfg.batch_size, len(train))
    lr = cfg.stage_lr("adaptation")
    theta_opt = Optimizer(cfg.optimizer, lr, cfg.clip_norm)
    omega_opt = Optimizer(cfg.optimizer, lr, cfg.clip_norm)
    result = StageResult("adaptation")
    best = (picknet.copy(), seq2seq.copy())
    zero_grads(picknet.params())
    zero_grads(seq2seq.params())
    # values only move at optimizer steps, so within a batch the reward sees a fixed omega
    reward_fn = make_reward(dataset, seq2seq, vocab, cfg, model, "adaptation")
    _start_from(result, split_cider(validation, seq2seq, vocab, picknet, max_len=model.max_len))

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        job = _adaptation_job(cfg.seed, epoch, reward_fn, cfg.epochs, cfg, model.retain_prob, targets)
        rewards, losses = [], []
        for batch in epoch_batches(cfg.seed, epoch, len(train), batch_size):
            items = [(int(i), train[i]) for i in batch]
            outcomes = accumulate(items, (picknet, seq2seq), job, workers)
            scale_grads((picknet, seq2seq), 1.0 / len(items))
            theta_opt.step(picknet.params())
            omega_opt.step(seq2seq.params())
            rewards.extend(u.reward.r for u, _ in outcomes)
            losses.extend(loss for _, loss in outcomes)

        val = split_cider(validation, seq2seq, vocab, picknet, max_len=model.max_len)
        picks = float(np.mean([len(run_episode(v.glances, picknet, "greedy").picked) for v in validation]))
        stats = EpochStats(stage="adaptation", epoch=epoch, xent_loss=float(np.mean(losses)),
                           reward_loss=-float(np.mean(rewards)), mean_picks=picks, val_cider=val,
                           wall_time=time.perf_counter() - started)
        result.stats.append(stats)
        _log_epoch(stats, stats_path)
        if val > result.best_val_cider:
            result.best_val_cider, result.best_epoch = val, epoch
            best = (picknet.copy(), seq2seq.copy())
    for params in best:
        zero_grads(params.params())
    return best[0], best[1], result


# =============================================================================
# Checkpoints
# =============================================================================

SEQ2SEQ_FILES = {"supervision": "seq2seq.supervision.pknc", "adaptation": "seq2seq.adaptation.pknc"}
PICKNET_FILES = {"reinforcement": "picknet.reinforcement.pknc", "adaptation": "picknet.adaptation.pknc"}
VOCAB_FILE = "vocab.json"


def save_params(path, params, vocab: Vocabulary, stage: str) -> None:
    config = dict(params.config(), vocab_hash=vocab.digest(), stage=stage)
    write_checkpoint(path, params.state_dict(), config)
    logger.info("checkpoint written: %s", path)


def _read(path) -> Tuple[Dict[str, np.ndarray], Dict]:
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} does not exist (run the earlier stage first)")
    return read_checkpoint(path)


def load_seq2seq(path, vocab: Vocabulary) -> Seq2SeqParams:
    tensors, config = _read(path)
    if config.get("vocab_hash") != vocab.digest():
        raise ConfigError(f"{path} was trained with a different vocabulary")
    return Seq2SeqParams.from_state(tensors, config)


def load_picknet(path) -> PickNetParams:
    tensors, config = _read(path)
    return PickNetParams.from_state(tensors, config)


def latest_seq2seq_path(run_dir) -> Path:
    run_dir = Path(run_dir)
    for stage in ("adaptation", "supervision"):
        if (run_dir / SEQ2SEQ_FILES[stage]).is_file():
            return run_dir / SEQ2SEQ_FILES[stage]
    raise ConfigError(f"no captioner checkpoint under {run_dir} (run --stage supervision first)")


def latest_picknet_path(run_dir) -> Optional[Path]:
    run_dir = Path(run_dir)
    for stage in ("adaptation", "reinforcement"):
        if (run_dir / PICKNET_FILES[stage]).is_file():
            return run_dir / PICKNET_FILES[stage]
    return None
