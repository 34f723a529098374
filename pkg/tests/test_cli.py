"""
Command-line surface: exit codes, machine-readable output and a tiny
end-to-end run through every stage.
"""

import json
import logging

import pytest

from app.cli import dispatch
from app.core.config import get_settings

SMALL_DATA = ["--n-train", "6", "--n-validation", "2", "--n-test", "3", "--frames", "30", "--dim", "8"]
TINY_MODEL = {"model": {"embed_dim": 6, "hidden_dim": 6, "picknet_hidden": 4, "max_len": 8}}


@pytest.fixture(autouse=True, scope="module")
def restore_root_logger():
    """dispatch() installs its own stderr handler on the root logger."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    data, run = base / "data", base / "run"
    config = base / "tiny.json"
    config.write_text(json.dumps(TINY_MODEL))
    assert dispatch(["gen-data", "--seed", "5", "--out", str(data)] + SMALL_DATA) == 0
    common = ["--dataset", str(data), "--out", str(run), "--config", str(config), "--epochs", "1",
              "--batch-size", "3"]
    for stage in ("supervision", "reinforce", "adapt"):
        assert dispatch(["train", "--stage", stage] + common) == 0
    return data, run


# =============================================================================
# Exit codes
# =============================================================================

class TestExitCodes:

    def test_no_arguments(self):
        assert dispatch([]) == 2

    def test_unknown_flag(self):
        assert dispatch(["estimate-time", "--bogus"]) == 2

    def test_unknown_command(self):
        assert dispatch(["frobnicate"]) == 2

    def test_train_without_dataset(self, tmp_path):
        assert dispatch(["train", "--stage", "supervision", "--out", str(tmp_path / "r")]) == 1

    def test_missing_dataset_directory(self, tmp_path):
        assert dispatch(["train", "--stage", "supervision", "--dataset", str(tmp_path / "none"),
                         "--out", str(tmp_path / "r")]) == 1

    def test_invalid_config_value(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"dataset": "x", "training": {"epochs": 0}}))
        assert dispatch(["train", "--stage", "supervision", "--config", str(config)]) == 1

    def test_reinforce_before_supervision(self, tmp_path):
        assert dispatch(["gen-data", "--seed", "1", "--out", str(tmp_path / "d")] + SMALL_DATA) == 0
        assert dispatch(["train", "--stage", "reinforce", "--dataset", str(tmp_path / "d"),
                         "--out", str(tmp_path / "r")]) == 1

    def test_gen_data_captions_longer_than_decoder(self, tmp_path):
        assert dispatch(["gen-data", "--out", str(tmp_path / "d"), "--max-len", "10"] + SMALL_DATA) == 1

    def test_eval_without_run(self, tmp_path):
        assert dispatch(["eval", "--run", str(tmp_path / "missing")]) == 1


# =============================================================================
# Stateless commands
# =============================================================================

class TestStatelessCommands:

    def test_gen_data_is_reproducible(self, tmp_path):
        assert dispatch(["gen-data", "--seed", "9", "--out", str(tmp_path / "a")] + SMALL_DATA) == 0
        assert dispatch(["gen-data", "--seed", "9", "--out", str(tmp_path / "b")] + SMALL_DATA) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_estimate_time_table(self, capsys):
        assert dispatch(["estimate-time", "--table", "msvd"]) == 0
        out = capsys.readouterr().out
        assert "4.3x" in out
        assert "13.3x" in out

    def test_estimate_time_json(self, capsys):
        assert dispatch(["estimate-time", "--table", "msrvtt", "--json"]) == 0
        rows = {r["method"]: r["time"] for r in json.loads(capsys.readouterr().out)}
        assert rows["PickNet (V+L)"] == 1.0

    def test_estimate_time_custom_table(self, tmp_path, capsys):
        path = tmp_path / "cost.json"
        path.write_text(json.dumps({"baseline_frames": 2, "entries": [
            {"method": "mine", "appearance": 1.0, "motion": 1, "frames": 3}]}))
        assert dispatch(["estimate-time", "--config", str(path), "--json"]) == 0
        assert json.loads(capsys.readouterr().out) == [{"method": "mine", "time": 1.5}]

    def test_schema(self, capsys):
        assert dispatch(["schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert "dataset" in schema["properties"]
        assert "dataset" in schema["required"]


# =============================================================================
# End to end
# =============================================================================

class TestEndToEnd:

    def test_stage_artifacts(self, trained_run):
        _, run = trained_run
        names = {p.name for p in run.iterdir()}
        assert {"run.json", "vocab.json", "seq2seq.supervision.pknc", "picknet.reinforcement.pknc",
                "picknet.adaptation.pknc", "seq2seq.adaptation.pknc", "stats-supervision.ndjson",
                "stats-reinforcement.ndjson", "stats-adaptation.ndjson"} <= names
        line = json.loads((run / "stats-adaptation.ndjson").read_text().splitlines()[0])
        assert line["stage"] == "adaptation"
        assert "wall_time" not in line

    def test_eval(self, trained_run, capsys):
        _, run = trained_run
        assert dispatch(["eval", "--run", str(run), "--split", "test"]) == 0
        out = capsys.readouterr().out
        for policy in ("all", "random", "kmeans", "picknet"):
            assert policy in out
        report = json.loads((run / "eval-test.json").read_text())
        assert [r["policy"] for r in report["rows"]] == ["all", "random", "kmeans", "picknet"]

    def test_eval_is_reproducible(self, trained_run):
        _, run = trained_run
        assert dispatch(["eval", "--run", str(run), "--policy", "random"]) == 0
        first = (run / "eval-test.json").read_bytes()
        assert dispatch(["eval", "--run", str(run), "--policy", "random"]) == 0
        assert (run / "eval-test.json").read_bytes() == first

    def test_eval_honours_seed_override(self, trained_run, monkeypatch):
        _, run = trained_run
        assert dispatch(["eval", "--run", str(run), "--policy", "random", "--seed", "13"]) == 0
        expected = (run / "eval-test.json").read_bytes()
        monkeypatch.setenv("PICKNET_SEED", "13")
        get_settings.cache_clear()
        try:
            assert dispatch(["eval", "--run", str(run), "--policy", "random", "--seed", "0"]) == 0
        finally:
            monkeypatch.delenv("PICKNET_SEED")
            get_settings.cache_clear()
        assert (run / "eval-test.json").read_bytes() == expected

    def test_caption(self, trained_run, capsys):
        _, run = trained_run
        assert dispatch(["caption", "--run", str(run), "--video", "vid0008"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["video"] == "vid0008"
        assert result["picks"][0] == 0
        assert isinstance(result["caption"], str)

    def test_caption_unknown_video(self, trained_run):
        _, run = trained_run
        assert dispatch(["caption", "--run", str(run), "--video", "nope"]) == 1

    def test_stream(self, trained_run, capsys):
        data, run = trained_run
        assert dispatch(["stream", "--run", str(run), "--input", str(data / "glances" / "vid0008.glance")]) == 0
        events = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(events) == 30
        assert events[0]["picked"] and events[0]["caption"] is not None
        assert [e["t"] for e in events] == sorted(e["t"] for e in events)
        assert all((e["caption"] is None) != e["picked"] for e in events)

    def test_stats(self, trained_run, capsys):
        _, run = trained_run
        assert dispatch(["stats", "--run", str(run), "--charts"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("kind,value,count")
        assert "position,1,3" in out
        assert (run / "episodes-test.ndjson").is_file()
        assert (run / "stats" / "pick_counts.png").is_file()

    def test_stats_from_episode_file(self, trained_run, capsys):
        _, run = trained_run
        assert dispatch(["stats", "--run", str(run)]) == 0
        direct = capsys.readouterr().out
        assert dispatch(["stats", "--run", str(run), "--episodes", str(run / "episodes-test.ndjson")]) == 0
        assert capsys.readouterr().out == direct
