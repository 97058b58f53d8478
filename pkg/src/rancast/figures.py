"""Matplotlib rendering of report figures.

Kept separate from report assembly: the report stage emits JSON/CSV and this
module turns the plot-source data into PNG files next to them. Output bytes
are deterministic for identical inputs (fixed metadata, no timestamps).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_PNG_METADATA = {"Software": "rancast"}
_FIGSIZE = (9.0, 4.5)
_DPI = 110


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def overlay_figure(path, timestamps, actual, predictions: dict, title: str,
                   max_hours: int = 168) -> Path:
    """Actual vs predicted traffic overlay for the tail of the test window."""
    n = min(len(actual), max_hours)
    ts = timestamps[-n:]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(ts, actual[-n:], color="black", linewidth=1.6, label="actual")
    for variant, pred in predictions.items():
        ax.plot(ts, pred[-n:], linewidth=1.0, alpha=0.85, label=variant)
    ax.set_title(title)
    ax.set_xlabel("time")
    ax.set_ylabel("DL traffic volume")
    ax.legend(loc="upper right", fontsize=8, ncol=2)
    fig.autofmt_xdate()
    fig.tight_layout()
    return _save(fig, Path(path))


def horizon_loss_figure(path, horizons, losses_by_variant: dict, title: str) -> Path:
    """Test loss as a function of the prediction horizon, one line per variant."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for variant, losses in losses_by_variant.items():
        ax.plot(horizons, losses, marker="o", linewidth=1.2, label=variant)
    ax.set_title(title)
    ax.set_xlabel("prediction horizon (hours)")
    ax.set_ylabel("test loss (normalized)")
    ax.set_xticks(list(horizons))
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def calibration_figure(path, traces: dict, title: str) -> Path:
    """Violation rate vs loss weight for each calibration line search."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for label, (ws, rates, target) in traces.items():
        order = sorted(range(len(ws)), key=lambda i: ws[i])
        line, = ax.plot([ws[i] for i in order], [100 * rates[i] for i in order],
                        marker="o", linewidth=1.0, label=label)
        ax.axhline(100 * target, color=line.get_color(), linestyle=":", alpha=0.5)
    ax.set_xscale("log", base=2)
    ax.set_title(title)
    ax.set_xlabel("loss weight")
    ax.set_ylabel("validation violation rate (%)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))
