"""
Pick statistics, report files and charts.
"""

import json

import pytest

from app.core.exceptions import FormatError, UsageError
from app.schemas.reports import EpisodeRecord, EvaluationReport, PolicyReport
from app.services.chart_generator import create_pick_count_chart, save_charts
from app.services.cost_model import BUILTIN_TABLES, estimate_time
from app.services.picknet import run_episode
from app.services.report_generator import (
    cost_table_rows, cost_table_text, evaluation_csv, statistics_summary, to_json, write_evaluation,
    write_statistics,
)
from app.services.statistics import pick_statistics, power_law_exponent, read_episodes, write_episodes
from tests.conftest import zero_picknet

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def records():
    return [
        EpisodeRecord(video="a", picks=[0, 3, 7], n=10),
        EpisodeRecord(video="b", picks=[0], n=10),
        EpisodeRecord(video="c", picks=[0, 3], n=10),
    ]


@pytest.fixture
def report():
    row = PolicyReport(policy="all", bleu4=0.25, rouge_l=0.5, cider=1.5, mean_picks=30.0, per_video={"v": 1.5})
    return EvaluationReport(split="test", rows=[row])


# =============================================================================
# Statistics
# =============================================================================

class TestPickStatistics:

    def test_histograms(self, records):
        stats = pick_statistics(records)
        assert stats.count_hist == {3: 1, 1: 1, 2: 1}
        assert stats.position_hist == {1: 3, 4: 2, 8: 1}
        assert stats.mean_picks == pytest.approx(2.0)

    def test_conservation(self, records):
        stats = pick_statistics(records)
        assert sum(stats.count_hist.values()) == stats.n_videos == 3
        assert sum(stats.position_hist.values()) == stats.total_picks == 6

    def test_first_position_counts_every_video(self, small_dataset):
        traces = [run_episode(v.glances, zero_picknet(-50.0)) for v in small_dataset.split("train")]
        stats = pick_statistics(traces)
        assert stats.position_hist == {1: len(traces)}

    def test_empty(self):
        with pytest.raises(UsageError):
            pick_statistics([])

    def test_csv(self, records):
        lines = pick_statistics(records).to_csv().splitlines()
        assert lines[0] == "kind,value,count"
        assert lines[1] == "n_picks,1,1"
        assert "position,1,3" in lines

    def test_power_law_slope(self):
        assert power_law_exponent({1: 100, 2: 64, 4: 16, 8: 4}) == pytest.approx(-2.0)

    def test_power_law_needs_two_points(self):
        assert power_law_exponent({1: 5, 2: 3}) == 0.0


class TestEpisodeFiles:

    def test_round_trip(self, records, tmp_path):
        write_episodes(tmp_path / "e.ndjson", records)
        assert read_episodes(tmp_path / "e.ndjson") == records

    def test_bad_line_reports_offset(self, records, tmp_path):
        path = tmp_path / "e.ndjson"
        write_episodes(path, records[:1])
        first = path.read_bytes()
        path.write_bytes(first + b"{not json}\n")
        with pytest.raises(FormatError) as info:
            read_episodes(path)
        assert info.value.offset == len(first)


# =============================================================================
# Reports
# =============================================================================

class TestReports:

    def test_json_sorted(self, report):
        text = to_json(report)
        assert json.loads(text)["split"] == "test"
        assert text == to_json(EvaluationReport.model_validate(json.loads(text)))
        keys = list(json.loads(text)["rows"][0])
        assert keys == sorted(keys)

    def test_evaluation_csv(self, report):
        lines = evaluation_csv(report).splitlines()
        assert lines[0] == "split,policy,cider_variant,bleu4,rouge_l,cider,mean_picks"
        assert lines[1] == "test,all,cider,0.250000,0.500000,1.500000,30.0000"

    def test_write_evaluation(self, report, tmp_path):
        paths = write_evaluation(report, tmp_path)
        assert paths["json"].name == "eval-test.json"
        assert EvaluationReport.model_validate_json(paths["json"].read_text()) == report

    def test_statistics_summary(self, records, tmp_path):
        stats = pick_statistics(records)
        summary = statistics_summary(stats)
        assert summary["positions"] == {"1": 3, "4": 2, "8": 1}
        paths = write_statistics(stats, tmp_path)
        assert json.loads(paths["json"].read_text())["videos"] == 3

    def test_cost_table_text(self):
        table = BUILTIN_TABLES["msvd"]
        rows = estimate_time(table.entries, table.baseline_frames)
        lines = cost_table_text(rows).splitlines()
        assert lines[0].startswith("method")
        assert any(line.startswith("TA ") and line.endswith("4.3x") for line in lines)
        assert cost_table_rows(rows)[0] == {"method": "TA", "time": 4.3}


# =============================================================================
# Charts
# =============================================================================

class TestCharts:

    def test_png_bytes(self, records):
        assert create_pick_count_chart(pick_statistics(records)).getvalue().startswith(PNG_MAGIC)

    def test_save_charts(self, records, tmp_path):
        paths = save_charts(pick_statistics(records), tmp_path / "charts")
        assert {p.name for p in paths.values()} == {"pick_counts.png", "pick_positions.png"}
        assert all(p.read_bytes().startswith(PNG_MAGIC) for p in paths.values())
