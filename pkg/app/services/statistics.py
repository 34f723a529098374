"""
Pick statistics: how many frames a policy picks and where.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from app.core.exceptions import FormatError, UsageError
from app.schemas.reports import EpisodeRecord
from app.services.picknet import EpisodeTrace

Episode = Union[EpisodeTrace, EpisodeRecord]


@dataclass
class PickHistogram:
    """Counts of N_p and of 1-based picked positions over a set of videos."""

    n_videos: int = 0
    count_hist: Dict[int, int] = field(default_factory=dict)
    position_hist: Dict[int, int] = field(default_factory=dict)

    @property
    def mean_picks(self) -> float:
        if self.n_videos == 0:
            return 0.0
        return sum(n * c for n, c in self.count_hist.items()) / self.n_videos

    @property
    def total_picks(self) -> int:
        return sum(n * c for n, c in self.count_hist.items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["kind", "value", "count"])
        for n in sorted(self.count_hist):
            writer.writerow(["n_picks", n, self.count_hist[n]])
        for pos in sorted(self.position_hist):
            writer.writerow(["position", pos, self.position_hist[pos]])
        return buf.getvalue()


def _picks(episode: Episode) -> List[int]:
    return list(episode.picked) if isinstance(episode, EpisodeTrace) else list(episode.picks)


def pick_statistics(episodes: Iterable[Episode]) -> PickHistogram:
    hist = PickHistogram()
    for episode in episodes:
        picks = _picks(episode)
        hist.n_videos += 1
        hist.count_hist[len(picks)] = hist.count_hist.get(len(picks), 0) + 1
        for idx in picks:
            hist.position_hist[idx + 1] = hist.position_hist.get(idx + 1, 0) + 1
    if hist.n_videos == 0:
        raise UsageError("pick statistics need at least one episode")
    return hist


def power_law_exponent(position_hist: Dict[int, int], skip_first: bool = True) -> float:
    """Least-squares slope of log(count) against log(position); descriptive only.

    Position 1 is the forced pick and is left out by default.
    """
    points = [(p, c) for p, c in sorted(position_hist.items()) if c > 0 and not (skip_first and p == 1)]
    if len(points) < 2:
        return 0.0
    x = np.log([p for p, _ in points])
    y = np.log([c for _, c in points])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def read_episodes(path) -> List[EpisodeRecord]:
    """Episode NDJSON as written by ``EpisodeTrace.to_ndjson``."""
    path = Path(path)
    records = []
    offset = 0
    with open(path, "rb") as fh:
        for line in fh:
            if line.strip():
                try:
                    records.append(EpisodeRecord.model_validate(json.loads(line)))
                except ValueError as e:
                    raise FormatError(path, offset, f"bad episode record: {e}")
            offset += len(line)
    return records


def write_episodes(path, records: Sequence[EpisodeRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.model_dump(), sort_keys=True) + "\n")
