"""Figures written next to the CSV outputs of ``train`` and ``attend``."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data import atomic_write  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path):
    buf = io.BytesIO()
    # no timestamp in the PNG so reruns are byte-identical
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_profile(profile, path, title=None):
    """Bar-and-line plot of per-frame attention; masked frames are greyed out."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        frames = range(len(profile.scores))
        colors = ["tab:blue" if m else "0.8" for m in profile.mask]
        ax.bar(frames, profile.scores, color=colors, width=0.9)
        ax.plot(frames, profile.scores, color="tab:red", lw=1)
        ax.set_xlabel("frame")
        ax.set_ylabel("mean attention received")
        ax.set_title(title or f"attention profile {profile.clip_id}".strip())
        _save(fig, path)


def plot_history(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [r.epoch for r in history.records]
        ax.plot(epochs, [r.train_loss for r in history.records], label="train loss", color="tab:blue")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.val_wer for r in history.records], label="val WER", color="tab:orange")
        ax2.set_ylabel("val WER")
        ax2.set_ylim(0, 1.05)
        ax.axvline(history.best_epoch, color="0.5", ls="--", lw=0.8)
        ax.set_title(f"best epoch {history.best_epoch}, stopped: {history.stopped_reason}")
        _save(fig, path)
