"""Benchmark report files: diff-able key=value text plus rendered figures.

The text file holds only run parameters and byte counts, never wall times,
so two runs with the same seed produce byte-identical files.  Figures are
rendered next to the text file: `<stem>_bytes.png` compares ledgered bytes
per arm, `<stem>_items.png` compares items transferred.
"""

from __future__ import annotations

from pathlib import Path

from .bench import BenchReport

_ARM_LABELS = ["host-side filter", "pushed-down filter"]


def report_text(report: BenchReport) -> str:
    """Deterministic key=value body; excludes wall times on purpose."""
    lines = [
        f"n={report.n}",
        f"selectivity={report.selectivity!r}",
        f"item_bytes={report.item_bytes}",
        f"seed={report.seed}",
        f"match_count={report.match_count}",
        f"classic_bytes={report.classic_bytes}",
        f"dc_bytes={report.dc_bytes}",
        f"ratio={report.ratio:.6f}",
    ]
    return "\n".join(lines) + "\n"


def write_report(report: BenchReport, path, *, figures: bool = True) -> list[Path]:
    """Write the text report; render figure files alongside it.

    Returns every path written, text file first.
    """
    out = Path(path)
    out.write_text(report_text(report), encoding="utf-8")
    written = [out]
    if figures:
        written += render_figures(report, out)
    return written


def render_figures(report: BenchReport, text_path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stem = Path(text_path).with_suffix("")
    written = []

    def bar_chart(values, ylabel, title, suffix):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        bars = ax.bar(_ARM_LABELS, values, color=["#888888", "#3465a4"])
        ax.bar_label(bars, fmt="%d")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        path = Path(f"{stem}{suffix}")
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)

    bar_chart([report.classic_bytes, report.dc_bytes],
              "bytes over the host boundary",
              f"N={report.n}, selectivity={report.selectivity:g} "
              f"(ratio {report.ratio:.1f}x)",
              "_bytes.png")
    bar_chart([report.n, report.match_count],
              "items transferred",
              f"{report.item_bytes}-byte items",
              "_items.png")
    return written
