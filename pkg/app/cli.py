"""
Command-line front end.

Every subcommand writes machine output (tables, NDJSON, JSON) to stdout and
logs to stderr. Exit status: 0 on success, 1 on a library or validation
error, 2 on bad usage.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.core.config import get_settings, resolve_seed
from app.core.exceptions import ConfigError, FormatError, PickCapError
from app.core.numerics import make_rng
from app.schemas.config import ModelConfig, RewardConfig, RunConfig
from app.services import training
from app.services.cost_model import BUILTIN_TABLES, estimate_time, load_cost_table
from app.services.dataset import Dataset, load_dataset
from app.services.evaluation import POLICIES, caption_tokens, evaluate_split, greedy_picks
from app.services.picknet import PickNetParams, run_episode
from app.services.report_generator import (
    cost_table_rows, cost_table_text, evaluation_table, to_json, write_evaluation, write_json, write_statistics,
)
from app.services.seq2seq import Seq2SeqParams
from app.services.statistics import pick_statistics, read_episodes, write_episodes
from app.services.streaming import open_stream_source, stream_caption
from app.services.synthetic import write_synthetic
from app.services.text import Vocabulary
from core.utility import break_and_help, create_output_folder, logo, setup_logging

logger = logging.getLogger(__name__)

STAGES = {"supervision": "supervision", "reinforce": "reinforcement", "adapt": "adaptation"}
SEQ2SEQ_INIT_STREAM = 0x5E
PICKNET_INIT_STREAM = 0x9C

USAGE_EXAMPLES = """
example usage:
pickcap gen-data --seed 7 --out data/                         synthetic dataset
pickcap train --stage supervision --dataset data/ --out runs/a  train the captioner on all frames
pickcap train --stage reinforce --dataset data/ --out runs/a    train PickNet against it
pickcap train --stage adapt --dataset data/ --out runs/a        fine-tune both
pickcap eval --run runs/a --split test --policy picknet --policy random
pickcap stream --run runs/a --input data/glances/vid0250.glance --fps 1
pickcap estimate-time --table msrvtt
"""


# =============================================================================
# Parser
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pickcap", description=break_and_help(), epilog=USAGE_EXAMPLES,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default from PICKNET_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n-train", type=int, default=200)
    gen.add_argument("--n-validation", type=int, default=30)
    gen.add_argument("--n-test", type=int, default=50)
    gen.add_argument("--frames", type=int, default=30, help="frames per video")
    gen.add_argument("--dim", type=int, default=64, help="feature dimension D")
    gen.add_argument("--max-scenes", type=int, default=4)
    gen.add_argument("--max-len", type=int, default=ModelConfig.model_fields["max_len"].default,
                     help="decoder steps every caption plus EOS must fit in")

    train = sub.add_parser("train", help="run one training stage")
    train.add_argument("--stage", required=True, choices=list(STAGES))
    train.add_argument("--config", help="run config JSON (see the schema subcommand)")
    train.add_argument("--dataset", help="dataset directory or manifest.json")
    train.add_argument("--out", help="run directory")
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--reward", choices=["V", "L", "V+L"], help="reward preset")
    train.add_argument("--cider-variant", choices=["cider", "cider-d"])
    train.add_argument("--full-scale", action="store_true", help="embed 512 / hidden 1024 model sizes")
    train.add_argument("--workers", type=int, help="gradient accumulation threads")

    ev = sub.add_parser("eval", help="evaluate pick policies on a split")
    _run_args(ev)
    ev.add_argument("--split", default="test", choices=["train", "validation", "test"])
    ev.add_argument("--policy", action="append", choices=list(POLICIES),
                    help="repeatable; default: every policy the run has weights for")
    ev.add_argument("--k", type=int, help="k for the k-means baseline (default: mean PickNet picks)")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--cider-variant", choices=["cider", "cider-d"], default="cider")
    ev.add_argument("--workers", type=int)

    cap = sub.add_parser("caption", help="caption one stored video offline")
    _run_args(cap)
    cap.add_argument("--video", required=True, help="video id from the manifest")
    cap.add_argument("--all-frames", action="store_true", help="skip PickNet and encode every frame")

    stream = sub.add_parser("stream", help="caption a glance stream online (NDJSON on stdout)")
    _run_args(stream)
    stream.add_argument("--input", required=True, help="glance file (.glance)")
    stream.add_argument("--features", help="feature file; default: sibling features/<id>.feat or the toy extractor")
    stream.add_argument("--fps", type=float, default=1.0)
    stream.add_argument("--realtime", action="store_true", help="pace output at --fps instead of replaying at once")

    stats = sub.add_parser("stats", help="pick statistics of the trained policy")
    _run_args(stats)
    stats.add_argument("--split", default="test", choices=["train", "validation", "test"])
    stats.add_argument("--episodes", help="read episode NDJSON instead of running the policy")
    stats.add_argument("--charts", action="store_true", help="also write PNG histograms")

    est = sub.add_parser("estimate-time", help="relative running time of captioning pipelines")
    est.add_argument("--config", help="cost table JSON {baseline_frames, entries}")
    est.add_argument("--table", choices=sorted(BUILTIN_TABLES), default="msvd")
    est.add_argument("--json", action="store_true", help="print JSON instead of a table")

    sub.add_parser("schema", help="print the run-config JSON schema")
    return parser


def _run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run", help="run directory holding vocab and checkpoints")
    parser.add_argument("--dataset", help="dataset directory (default: the one the run was trained on)")


# =============================================================================
# Shared loading
# =============================================================================

def _run_dir(args) -> Path:
    return Path(args.run) if args.run else Path(get_settings().OUTPUT_DIR) / "default"


def _load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path} does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(path, e.pos, f"invalid JSON: {e.msg}")


def _run_config(run_dir: Path) -> Optional[RunConfig]:
    path = run_dir / "run.json"
    return RunConfig.model_validate(_load_json(path)) if path.is_file() else None


def _dataset(args, run_dir: Path) -> Dataset:
    if args.dataset:
        return load_dataset(args.dataset)
    run_cfg = _run_config(run_dir)
    if run_cfg is None:
        raise ConfigError(f"no --dataset given and {run_dir} has no run.json naming one")
    return load_dataset(run_cfg.dataset)


def _vocab(run_dir: Path) -> Vocabulary:
    path = run_dir / training.VOCAB_FILE
    if not path.is_file():
        raise ConfigError(f"no vocabulary under {run_dir} (run --stage supervision first)")
    return Vocabulary.load(path)


def _models(run_dir: Path, require_picknet: bool = False):
    vocab = _vocab(run_dir)
    seq2seq = training.load_seq2seq(training.latest_seq2seq_path(run_dir), vocab)
    picknet_path = training.latest_picknet_path(run_dir)
    if picknet_path is None and require_picknet:
        raise ConfigError(f"no PickNet checkpoint under {run_dir} (run --stage reinforce first)")
    picknet = training.load_picknet(picknet_path) if picknet_path else None
    return vocab, seq2seq, picknet


def _max_len(run_dir: Path) -> int:
    run_cfg = _run_config(run_dir)
    return run_cfg.model.max_len if run_cfg else ModelConfig().max_len


# =============================================================================
# Subcommands
# =============================================================================

def cmd_gen_data(args) -> int:
    seed = resolve_seed(args.seed)
    path = write_synthetic(args.out, seed, n_train=args.n_train, n_validation=args.n_validation,
                           n_test=args.n_test, n_frames=args.frames, feature_dim=args.dim,
                           max_scenes=args.max_scenes, max_len=args.max_len)
    print(path)
    return 0


def _train_config(args) -> RunConfig:
    data = _load_json(args.config) if args.config else {}
    if args.dataset:
        data["dataset"] = args.dataset
    if args.out:
        data["output_dir"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    if "dataset" not in data:
        raise ConfigError("no dataset: pass --dataset or a --config that names one")
    train_data = data.setdefault("training", {})
    if args.epochs is not None:
        train_data["epochs"] = args.epochs
    if args.batch_size is not None:
        train_data["batch_size"] = args.batch_size
    reward = train_data.setdefault("reward", {})
    if args.reward:
        preset = RewardConfig.preset(args.reward)
        reward.update(lambda_l=preset.lambda_l, lambda_v=preset.lambda_v)
    if args.cider_variant:
        reward["cider_variant"] = args.cider_variant
    if args.full_scale:
        data["model"] = {**data.get("model", {}), **ModelConfig.full_scale().model_dump(exclude={"feature_dim"})}
    return RunConfig.model_validate(data)


def cmd_train(args) -> int:
    stage = STAGES[args.stage]
    run_cfg = _train_config(args)
    seed = resolve_seed(run_cfg.seed)
    workers = args.workers or get_settings().WORKERS
    dataset = load_dataset(run_cfg.dataset)
    model = run_cfg.model.model_copy(update={"feature_dim": dataset.feature_dim})
    cfg = run_cfg.training.model_copy(update={"stage": stage, "seed": seed})
    run_dir = Path(create_output_folder(run_cfg.output_dir))
    write_json(run_dir / "run.json", run_cfg.model_copy(update={"seed": seed, "model": model, "training": cfg}))
    stats_path = run_dir / f"stats-{stage}.ndjson"
    stats_path.unlink(missing_ok=True)
    logger.info("stage %s: %d train videos, seed %d, %d worker(s)",
                stage, len(dataset.split("train")), seed, workers)

    if stage == "supervision":
        vocab = training.vocab_from_dataset(dataset)
        vocab.save(run_dir / training.VOCAB_FILE)
        seq2seq = Seq2SeqParams.initialize(model, len(vocab), make_rng(seed, SEQ2SEQ_INIT_STREAM))
        best, result = training.train_supervision(dataset, seq2seq, vocab, cfg, model, stats_path, workers)
        training.save_params(run_dir / training.SEQ2SEQ_FILES[stage], best, vocab, stage)
    elif stage == "reinforcement":
        vocab = _vocab(run_dir)
        seq2seq = training.load_seq2seq(run_dir / training.SEQ2SEQ_FILES["supervision"], vocab)
        picknet = PickNetParams.initialize(model.picknet_hidden, make_rng(seed, PICKNET_INIT_STREAM))
        best, result = training.train_reinforcement(dataset, picknet, seq2seq, vocab, cfg, model, stats_path,
                                                    workers)
        training.save_params(run_dir / training.PICKNET_FILES[stage], best, vocab, stage)
    else:
        vocab = _vocab(run_dir)
        seq2seq = training.load_seq2seq(run_dir / training.SEQ2SEQ_FILES["supervision"], vocab)
        picknet = training.load_picknet(run_dir / training.PICKNET_FILES["reinforcement"])
        best_pick, best_seq, result = training.train_adaptation(dataset, picknet, seq2seq, vocab, cfg, model,
                                                                stats_path, workers)
        training.save_params(run_dir / training.PICKNET_FILES[stage], best_pick, vocab, stage)
        training.save_params(run_dir / training.SEQ2SEQ_FILES[stage], best_seq, vocab, stage)
    logger.info("stage %s done: best epoch %d, validation CIDEr %.4f",
                stage, result.best_epoch, result.best_val_cider)
    return 0


def cmd_eval(args) -> int:
    run_dir = _run_dir(args)
    vocab, seq2seq, picknet = _models(run_dir)
    policies = args.policy or (["all", "random", "kmeans", "picknet"] if picknet else ["all", "random"])
    if "picknet" in policies and picknet is None:
        raise ConfigError(f"no PickNet checkpoint under {run_dir} (run --stage reinforce first)")
    dataset = _dataset(args, run_dir)
    report = evaluate_split(dataset, args.split, seq2seq, vocab, policies, picknet, args.k, resolve_seed(args.seed),
                            args.cider_variant, _max_len(run_dir), args.workers or get_settings().WORKERS)
    write_evaluation(report, run_dir)
    print(evaluation_table(report))
    return 0


def cmd_caption(args) -> int:
    run_dir = _run_dir(args)
    vocab, seq2seq, picknet = _models(run_dir)
    dataset = _dataset(args, run_dir)
    if args.video not in dataset.videos:
        raise ConfigError(f"video {args.video} is not in the dataset")
    video = dataset.videos[args.video]
    if args.all_frames or picknet is None:
        picks = list(range(video.n_frames))
    else:
        picks = greedy_picks(video, picknet)
    caption = " ".join(caption_tokens(video.features[picks], seq2seq, vocab, _max_len(run_dir)))
    print(json.dumps({"video": video.id, "picks": picks, "caption": caption}, sort_keys=True))
    return 0


def cmd_stream(args) -> int:
    run_dir = _run_dir(args)
    vocab, seq2seq, picknet = _models(run_dir, require_picknet=True)
    glances, feature_fn = open_stream_source(args.input, seq2seq.feature_dim, args.features)
    for event in stream_caption(glances, picknet, seq2seq, vocab, feature_fn, args.fps, args.realtime,
                                _max_len(run_dir)):
        print(json.dumps(event.model_dump(), sort_keys=True), flush=True)
    return 0


def cmd_stats(args) -> int:
    run_dir = _run_dir(args)
    if args.episodes:
        records = read_episodes(args.episodes)
    else:
        _, _, picknet = _models(run_dir, require_picknet=True)
        dataset = _dataset(args, run_dir)
        records = [run_episode(v.glances, picknet, "greedy").record(v.id) for v in dataset.require_split(args.split)]
        write_episodes(run_dir / f"episodes-{args.split}.ndjson", records)
    stats = pick_statistics(records)
    out = run_dir / "stats"
    write_statistics(stats, out)
    if args.charts:
        from app.services.chart_generator import save_charts

        save_charts(stats, out)
    logger.info("%d videos, mean picks %.2f", stats.n_videos, stats.mean_picks)
    print(stats.to_csv(), end="")
    return 0


def cmd_estimate_time(args) -> int:
    table = load_cost_table(args.config) if args.config else BUILTIN_TABLES[args.table]
    rows = estimate_time(table.entries, table.baseline_frames)
    if args.json:
        print(to_json(cost_table_rows(rows)), end="")
    else:
        print(cost_table_text(rows))
    return 0


def cmd_schema(args) -> int:
    print(json.dumps(RunConfig.model_json_schema(), indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "caption": cmd_caption,
    "stream": cmd_stream,
    "stats": cmd_stats,
    "estimate-time": cmd_estimate_time,
    "schema": cmd_schema,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    settings = get_settings()
    use_color = not settings.NO_COLOR and sys.stderr.isatty()
    if not argv:
        logo(use_color)
        parser.print_help(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    setup_logging(args.log_level or settings.LOG_LEVEL, use_color)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error("invalid configuration: %s", str(e).replace("\n", "; "))
        return 1
    except PickCapError as e:
        logger.error("%s", e)
        return 1


def main() -> int:
    return dispatch()
