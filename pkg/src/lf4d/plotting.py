"""Report figures written next to the CSV outputs."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fileio import atomic_write_bytes  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    buf = io.BytesIO()
    # no Software/date metadata so reruns are byte-identical
    fig.savefig(buf, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_summary(summary, path):
    """Bar chart of mean accuracy per variant with +-1 sample std error bars."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.7 * len(summary) + 1.5), 3.0))
        names = [s["variant"] for s in summary]
        means = np.array([float(s["mean"]) for s in summary]) * 100
        stds = np.sqrt(np.array([float(s["variance"]) for s in summary])) * 100
        ax.bar(range(len(names)), means, yerr=stds, color="0.6", edgecolor="0.2", capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("accuracy (%)")
        ax.set_ylim(0, 100)
        ax.set_title(summary[0]["preset"] if summary else "")
        _save(fig, path)


def plot_confusion(cm, path, title="", class_names=None):
    counts = np.asarray(cm.counts, dtype=np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    norm = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    k = counts.shape[0]
    names = class_names or [str(i) for i in range(k)]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(0.45 * k + 1.8, 0.45 * k + 1.5))
        ax.imshow(norm, vmin=0, vmax=1, cmap="Greys")
        for i in range(k):
            for j in range(k):
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if norm[i, j] > 0.5 else "black")
        ax.set_xticks(range(k))
        ax.set_yticks(range(k))
        ax.set_xticklabels(names)
        ax.set_yticklabels(names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        _save(fig, path)


def plot_history(history, path):
    its = [h[1] for h in history]
    loss = [h[2] for h in history]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(its, loss, lw=0.8, color="0.2")
        ax.set_xlabel("iteration")
        ax.set_ylabel("softmax loss")
        _save(fig, path)
