"""
Cost Model - relative running time of captioning pipelines.

time = appearance x motion x frames / baseline_frames, reported to 1 decimal.
The two built-in tables are the supplemental MSVD and MSR-VTT estimates.
"""

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Tuple

from app.core.exceptions import ConfigError, UsageError
from app.schemas.reports import CostModelEntry, CostTable


def _table(baseline_frames: float, rows) -> CostTable:
    return CostTable(
        baseline_frames=baseline_frames,
        entries=[CostModelEntry(method=m, appearance=a, motion=mo, frames=f) for m, a, mo, f in rows],
    )


BUILTIN_TABLES: Dict[str, CostTable] = {
    "msvd": _table(6, [
        ("TA", 0.5, 2, 26),
        ("S2VT", 0.5, 2, 80),
        ("LSTM-E", 0.5, 2, 30),
        ("p-RNN", 0.5, 2, 30),
        ("HRNE", 0.5, 2, 200),
        ("BA", 0.5, 2, 72),
        ("Baseline", 1.0, 1, 30),
        ("Random", 1.0, 1, 15),
        ("k-means (k=6)", 1.0, 1, 6),
        ("PickNet (V+L)", 1.0, 1, 6),
    ]),
    "msrvtt": _table(8, [
        ("ruc-uva", 0.5, 2, 36),
        ("Aalto", 0.5, 2, 36),
        ("DenseCap", 0.5, 2, 30),
        ("MS-RNN", 1.0, 2, 40),
        ("Baseline", 1.0, 1, 30),
        ("Random", 1.0, 1, 15),
        ("k-means (k=8)", 1.0, 1, 8),
        ("PickNet (V+L)", 1.0, 1, 8),
    ]),
}


def _one_decimal(x: float) -> float:
    return float(Decimal(x).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def estimate_time(entries: List[CostModelEntry], baseline_frames: float) -> List[Tuple[str, float]]:
    if baseline_frames < 1:
        raise UsageError("baseline frame count must be at least 1")
    return [
        (e.method, _one_decimal(e.appearance * e.motion * (e.frames / baseline_frames)))
        for e in entries
    ]


def load_cost_table(path) -> CostTable:
    try:
        return CostTable.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise ConfigError(f"cost table {path} does not exist")
