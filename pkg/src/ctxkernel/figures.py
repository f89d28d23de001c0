"""Figure rendering for training runs and evaluation reports.

Everything draws through the Agg backend straight to PNG files placed next
to the text outputs; nothing ever opens a window.  PNG metadata omits the
date chunk so repeated runs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .context import ClasswiseContext, ContextParams
from .data import DIRECTIONS
from .metrics import CorelReport, ImageclefReport
from .trainer import TrainState

_SAVE_KW = {"dpi": 110, "metadata": {"Date": None}}


def _finite(values: list[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.where(np.isfinite(arr), arr, np.nan)


def render_training_figure(state: TrainState, path: str | Path) -> Path:
    """Loss, probe relative error, and parameter/weight change per alternation."""
    path = Path(path)
    alts = np.arange(1, state.alternations + 1)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(alts, _finite(state.loss_history), marker=".", color="tab:blue")
    axes[0].set_xlabel("alternation")
    axes[0].set_ylabel("hinge objective")
    axes[1].plot(alts, _finite(state.re_history), marker=".", color="tab:orange")
    axes[1].set_xlabel("alternation")
    axes[1].set_ylabel("probe relative error")
    axes[2].semilogy(alts, _finite(state.dp_history), marker=".", label="dP")
    axes[2].semilogy(alts, _finite(state.dw_history), marker=".", label="dW")
    if state.stopped_at is not None:
        axes[2].axvline(state.stopped_at, color="gray", linestyle=":", linewidth=1)
    axes[2].set_xlabel("alternation")
    axes[2].set_ylabel("relative change")
    axes[2].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def _context_axes(ax, block: np.ndarray, title: str) -> None:
    vmax = max(float(np.abs(block).max()), 1e-12)
    ax.imshow(block, cmap="coolwarm", vmin=-vmax, vmax=vmax, interpolation="nearest")
    ax.set_title(title, fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])


def render_context_figure(
    params: ContextParams | ClasswiseContext, path: str | Path, max_stacks: int = 4
) -> Path:
    """Heat maps of the learned direction matrices, one row per layer.

    Classwise contexts tile the first ``max_stacks`` class stacks; the class
    index joins the panel title.
    """
    path = Path(path)
    if isinstance(params, ClasswiseContext):
        stacks = [(f"k={k} ", s) for k, s in enumerate(params.stacks[:max_stacks])]
    else:
        stacks = [("", params)]
    panels = []
    for prefix, stack in stacks:
        layers = [("shared", stack.tensors)] if stack.variant == "stationary" else [
            (f"t={t}", stack.tensors[t]) for t in range(stack.depth)
        ]
        for layer_name, block in layers:
            for c, name in enumerate(DIRECTIONS):
                panels.append((f"{prefix}{layer_name} {name}", block[c]))
    cols = len(DIRECTIONS)
    rows = max(1, len(panels) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
    for i, (title, block) in enumerate(panels):
        _context_axes(axes[i // cols][i % cols], block, title)
    for i in range(len(panels), rows * cols):
        axes[i // cols][i % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def render_metric_figure(report: ImageclefReport | CorelReport, path: str | Path) -> Path:
    """Bar chart of the protocol's headline rates."""
    path = Path(path)
    if isinstance(report, ImageclefReport):
        names = ["MF-S", "MF-C", "mAP"]
        values = [report.mf_s, report.mf_c, report.map]
    else:
        names = ["R", "P", "F"]
        values = [report.recall, report.precision, report.f_score]
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    ax.bar(names, values, color=["tab:blue", "tab:orange", "tab:green"])
    ax.set_ylim(0, 100)
    ax.set_ylabel("percent")
    for i, v in enumerate(values):
        ax.text(i, v + 1.5, f"{v:.1f}", ha="center", fontsize=9)
    if isinstance(report, CorelReport):
        ax.set_title(f"N+ = {report.n_plus}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
