"""Figures for study and importance reports, rendered next to their CSVs.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing here
touches pyplot's global state or needs a display.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .evaluation import ExperimentReport, final_loss_gaps
from .importance import ImportanceReport


def _figure(width=4.5, height=3.0):
    fig = Figure(figsize=(width, height), dpi=120)
    fig.set_layout_engine("tight")
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    return path


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(labelsize=8)


def plot_prediction_length(report: ExperimentReport, path) -> Path:
    """Mean accuracy per decoded step, one line per training horizon."""
    acc = defaultdict(lambda: defaultdict(list))
    for seed, n, step, a, _ in report.rows:
        acc[n][step].append(a)
    fig = _figure()
    ax = fig.add_subplot()
    for n in sorted(acc):
        steps = sorted(acc[n])
        ax.plot(steps, [np.mean(acc[n][s]) for s in steps], marker="o", label=f"N={n}")
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    _style(ax)
    return _save(fig, path)


def plot_beam_width(report: ExperimentReport, path) -> Path:
    """Mean cumulative beam probability against beam width, one line per horizon."""
    cov = defaultdict(lambda: defaultdict(list))
    for seed, n, k, p, _ in report.rows:
        cov[n][k].append(p)
    fig = _figure()
    ax = fig.add_subplot()
    for n in sorted(cov):
        ks = sorted(cov[n])
        ax.plot(ks, [np.mean(cov[n][k]) for k in ks], marker="o", label=f"N={n}")
    ax.set_xlabel("#beams")
    ax.set_ylabel("cumulative probability")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    _style(ax)
    return _save(fig, path)


def plot_context_dim(report: ExperimentReport, path) -> Path:
    """Validation loss over iterations per context width (left) and final gaps (right)."""
    fig = _figure(8.0, 3.0)
    ax, ax_gap = fig.add_subplot(1, 2, 1), fig.add_subplot(1, 2, 2)
    curves = defaultdict(lambda: defaultdict(list))
    for seed, dim, it, tr, va in report.rows:
        curves[dim][it].append(va)
    for dim in sorted(curves):
        its = sorted(curves[dim])
        ax.plot(its, [np.mean(curves[dim][i]) for i in its], label=f"#C={dim}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation loss")
    ax.legend(frameon=False)
    gaps = final_loss_gaps(report)
    for seed, by_dim in gaps.items():
        dims = sorted(by_dim)
        ax_gap.plot(dims, [by_dim[d] for d in dims], marker="o", alpha=0.7, label=f"seed {seed}")
    ax_gap.set_xscale("log")
    ax_gap.set_xlabel("context dimension")
    ax_gap.set_ylabel("validation - training loss")
    ax_gap.legend(frameon=False)
    _style(ax)
    _style(ax_gap)
    return _save(fig, path)


def plot_importance(report: ImportanceReport, path) -> Path:
    """Held-out accuracy against frame index for each feature subset."""
    fig = _figure()
    ax = fig.add_subplot()
    for s in report.subsets:
        ax.plot(np.arange(len(s.accuracy)), s.accuracy, label=s.name)
    ax.set_xlabel("frame")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    _style(ax)
    return _save(fig, path)


def plot_distribution(probs: np.ndarray, labels, path, title=None) -> Path:
    """Per-frame intention probabilities of one sequence."""
    fig = _figure()
    ax = fig.add_subplot()
    for j, lab in enumerate(labels):
        ax.plot(np.arange(len(probs)), probs[:, j], label=str(lab))
    ax.set_xlabel("frame")
    ax.set_ylabel("probability")
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, ncol=2)
    _style(ax)
    return _save(fig, path)


STUDY_PLOTS = {
    "prediction_length": plot_prediction_length,
    "beam_width": plot_beam_width,
    "context_dim": plot_context_dim,
}
