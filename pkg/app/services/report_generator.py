"""
Report Generator - JSON, CSV and plain-text renderings of run results.

All JSON is written with sorted keys so identical results give identical bytes.
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

from pydantic import BaseModel

from app.schemas.reports import EvaluationReport
from app.services.statistics import PickHistogram, power_law_exponent


def to_json(payload: Any) -> str:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(payload), encoding="utf-8")
    return path


# --- Evaluation ---

def evaluation_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["split", "policy", "cider_variant", "bleu4", "rouge_l", "cider", "mean_picks"])
    for row in report.rows:
        writer.writerow([report.split, row.policy, row.cider_variant, f"{row.bleu4:.6f}",
                         f"{row.rouge_l:.6f}", f"{row.cider:.6f}", f"{row.mean_picks:.4f}"])
    return buf.getvalue()


def evaluation_table(report: EvaluationReport) -> str:
    lines = [f"{'policy':<10}{'BLEU-4':>9}{'ROUGE-L':>9}{'CIDEr':>9}{'picks':>8}"]
    for row in report.rows:
        lines.append(f"{row.policy:<10}{row.bleu4:>9.4f}{row.rouge_l:>9.4f}{row.cider:>9.4f}{row.mean_picks:>8.2f}")
    return "\n".join(lines)


def write_evaluation(report: EvaluationReport, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / f"eval-{report.split}.json", "csv": out / f"eval-{report.split}.csv"}
    write_json(paths["json"], report)
    paths["csv"].write_text(evaluation_csv(report), encoding="utf-8")
    return paths


# --- Statistics ---

def statistics_summary(stats: PickHistogram) -> Dict[str, Any]:
    return {
        "videos": stats.n_videos,
        "mean_picks": stats.mean_picks,
        "total_picks": stats.total_picks,
        "n_picks": {str(k): v for k, v in sorted(stats.count_hist.items())},
        "positions": {str(k): v for k, v in sorted(stats.position_hist.items())},
        "power_law_exponent": power_law_exponent(stats.position_hist),
    }


def write_statistics(stats: PickHistogram, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "pick_stats.json", "csv": out / "pick_stats.csv"}
    write_json(paths["json"], statistics_summary(stats))
    paths["csv"].write_text(stats.to_csv(), encoding="utf-8")
    return paths


# --- Cost model ---

def cost_table_text(rows: Sequence[Tuple[str, float]]) -> str:
    width = max([len("method")] + [len(m) for m, _ in rows])
    lines = [f"{'method':<{width}}  time"]
    lines += [f"{m:<{width}}  {t:.1f}x" for m, t in rows]
    return "\n".join(lines)


def cost_table_rows(rows: Sequence[Tuple[str, float]]) -> List[Dict[str, Any]]:
    return [{"method": m, "time": t} for m, t in rows]
