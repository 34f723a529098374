"""
Chart Generator Service
Neon-style bar charts of pick statistics using Matplotlib.
"""
import io
from pathlib import Path
from typing import Dict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from app.services.statistics import PickHistogram  # noqa: E402

# Neon palette
NEON_GREEN = '#25D366'
NEON_BLACK = '#000000'
NEON_GRAY = '#646464'
NEON_WHITE = '#F0FFF0'


def _bar_chart(hist: Dict[int, int], xlabel: str, title: str, annotate: bool) -> io.BytesIO:
    keys = sorted(hist)
    counts = [hist[k] for k in keys]

    # Setup dark style
    plt.style.use('dark_background')
    fig, ax = plt.subplots(figsize=(6, 3))
    fig.patch.set_facecolor(NEON_BLACK)
    ax.set_facecolor(NEON_BLACK)

    bars = ax.bar(keys, counts, color=NEON_GREEN, alpha=0.8, width=0.7)

    # Styling
    ax.spines['top'].set_visible(False)
    ax.spines['right'].set_visible(False)
    ax.spines['left'].set_color(NEON_GREEN)
    ax.spines['bottom'].set_color(NEON_GREEN)
    ax.tick_params(axis='x', colors=NEON_WHITE)
    ax.tick_params(axis='y', colors=NEON_WHITE)
    ax.set_xlabel(xlabel, color=NEON_WHITE)
    ax.set_ylabel('videos', color=NEON_WHITE)
    ax.set_title(title, color=NEON_WHITE, fontsize=10)

    if annotate:
        for bar in bars:
            height = bar.get_height()
            ax.text(bar.get_x() + bar.get_width() / 2., height, '%d' % int(height),
                    ha='center', va='bottom', color=NEON_GRAY, fontsize=7)

    buf = io.BytesIO()
    # metadata pinned so identical statistics give identical bytes
    fig.savefig(buf, format='png', facecolor=NEON_BLACK, dpi=150, bbox_inches='tight',
                metadata={'Software': None})
    plt.close(fig)
    buf.seek(0)
    return buf


def create_pick_count_chart(stats: PickHistogram) -> io.BytesIO:
    """Distribution of the number of picked frames per video."""
    return _bar_chart(stats.count_hist, 'picked frames per video',
                      f'Number of picks (mean {stats.mean_picks:.2f})', annotate=True)


def create_pick_position_chart(stats: PickHistogram) -> io.BytesIO:
    """Distribution of picked frame positions (1-based)."""
    return _bar_chart(stats.position_hist, 'frame position', 'Position of picks', annotate=False)


def save_charts(stats: PickHistogram, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"count": out / "pick_counts.png", "position": out / "pick_positions.png"}
    paths["count"].write_bytes(create_pick_count_chart(stats).getvalue())
    paths["position"].write_bytes(create_pick_position_chart(stats).getvalue())
    return paths
