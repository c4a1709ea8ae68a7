"""Report figures rendered to files (headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_pretrain_curve(history: Sequence[Mapping], path: str | Path) -> Path:
    """Per-epoch language model losses (total, masked-token, is-next)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    for key, style in (("total_loss", "o-"), ("mlm_loss", "s--"),
                       ("nsp_loss", "d:")):
        ax.plot(epochs, [h[key] for h in history], style,
                label=key.replace("_", " "))
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("language model pretraining")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_contrastive_curve(step_history: Sequence[Mapping],
                           epoch_history: Sequence[Mapping],
                           path: str | Path) -> Path:
    """Contrastive loss per step (warm-up greyed out) and per epoch."""
    fig, ax = plt.subplots(figsize=(6, 4))
    warm = [s for s in step_history if not s["warmed"]]
    live = [s for s in step_history if s["warmed"]]
    if warm:
        ax.plot([s["step"] for s in warm], [s["loss"] for s in warm],
                ".", color="0.7", label="queue warm-up")
    if live:
        ax.plot([s["step"] for s in live], [s["loss"] for s in live],
                ".", color="C0", alpha=0.5, label="step loss")
    if epoch_history:
        last_steps = []
        for rec in epoch_history:
            epoch_steps = [s["step"] for s in step_history
                           if s["epoch"] == rec["epoch"]]
            last_steps.append(epoch_steps[-1])
        ax.plot(last_steps, [rec["mean_loss"] for rec in epoch_history],
                "o-", color="C1", label="epoch mean")
    ax.set_xlabel("step")
    ax.set_ylabel("contrastive loss")
    ax.set_title("momentum-contrast training")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_recall_bars(reports: Sequence[Mapping], path: str | Path) -> Path:
    """Grouped recall@k bars per task, MRR overlaid as markers."""
    import numpy as np

    fig, ax = plt.subplots(figsize=(7, 4))
    tasks = [r["task"] for r in reports]
    ks = sorted(next(iter(reports))["recall"], key=int) if reports else []
    x = np.arange(len(tasks))
    width = 0.8 / max(1, len(ks))
    for i, k in enumerate(ks):
        ax.bar(x + i * width, [r["recall"][k] for r in reports], width,
               label=f"recall@{k}")
    ax.plot(x + 0.4 - width / 2, [r["mrr"] for r in reports], "k*",
            markersize=10, label="MRR")
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(tasks, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fraction")
    ax.set_title("one-to-many retrieval")
    ax.legend(ncol=2, fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)
