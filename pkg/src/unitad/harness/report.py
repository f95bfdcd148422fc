"""Static figures: per-component loss curves and precision-recall curves."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import DataError  # noqa: E402

LOSS_KEYS = ("total", "tem_bcls", "pem_bcls", "pem_loc", "r_loc", "r_cls", "l2_reg")


def read_metrics(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read metric log {path}: {exc}") from exc
    return [json.loads(line) for line in lines if line.strip()]


def _smooth(values, window):
    if len(values) < window or window < 2:
        return np.asarray(values, dtype=float)
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def plot_losses(entries, out_path, window=10):
    if not entries:
        raise DataError("metric log is empty")
    fig, axes = plt.subplots(2, 4, figsize=(14, 6))
    steps = np.array([e["step"] for e in entries])
    for ax, key in zip(axes.flat, LOSS_KEYS):
        vals = np.array([e[key] for e in entries], dtype=float)
        ax.plot(steps, vals, color="0.8", lw=0.8)
        sm = _smooth(vals, window)
        ax.plot(steps[len(steps) - len(sm):], sm, lw=1.5)
        ax.set_title(key)
        ax.set_xlabel("step")
        if np.all(vals > 0):
            ax.set_yscale("log")
    lr_ax = axes.flat[-1]
    lr_ax.plot(steps, [e["lr"] for e in entries])
    lr_ax.set_yscale("log")
    lr_ax.set_title("learning rate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)


def plot_pr_curves(eval_doc, out_path):
    curves = eval_doc.get("pr_curves")
    if not curves:
        raise DataError("evaluation JSON has no pr_curves (re-run eval with --out)")
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, c in sorted(curves.items()):
        ax.plot(c["recall"], c["precision"], lw=1, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"tIoU 0.5, average mAP {eval_doc['average_mAP']:.3f}")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)


def render(out_dir, metrics_path=None, eval_path=None):
    """Write ``losses.png`` and/or ``pr_curves.png`` into ``out_dir``; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if metrics_path:
        path = out_dir / "losses.png"
        plot_losses(read_metrics(metrics_path), path)
        written.append(path)
    if eval_path:
        try:
            doc = json.loads(Path(eval_path).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read evaluation {eval_path}: {exc}") from exc
        path = out_dir / "pr_curves.png"
        plot_pr_curves(doc, path)
        written.append(path)
    return written
