"""Mean attention over layers and heads, reduced to a per-frame profile."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import atomic_write
from .errors import DataError


@dataclass
class FrameAttentionProfile:
    clip_id: str
    scores: np.ndarray  # (T,)
    mask: np.ndarray  # (T,) bool


def mean_attention(att: np.ndarray) -> np.ndarray:
    """Entry-wise mean of an (L, H, T, T) attention tensor over all layers and heads."""
    att = np.asarray(att, dtype=np.float64)
    if att.ndim != 4 or att.shape[2] != att.shape[3]:
        raise DataError(f"attention tensor must be (L, H, T, T), got {att.shape}")
    L, H = att.shape[:2]
    return att.sum(axis=(0, 1)) / (L * H)


def per_frame_scores(mean: np.ndarray, mask: Optional[np.ndarray] = None, clip_id: str = "") -> FrameAttentionProfile:
    """Attention received by each frame: column mean over the valid query rows."""
    mean = np.asarray(mean, dtype=np.float64)
    T = mean.shape[0]
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("profile needs at least one unmasked frame")
    scores = mean[mask].mean(axis=0)
    scores = np.where(mask, scores, 0.0)
    return FrameAttentionProfile(clip_id, scores, mask)


def middle_share(profile: FrameAttentionProfile) -> float:
    """Fraction of the total score that falls on the middle half of the unmasked frames."""
    valid = np.flatnonzero(profile.mask)
    n = len(valid)
    lo, hi = n // 4, n - n // 4
    return float(profile.scores[valid[lo:hi]].sum() / profile.scores[valid].sum())


def profile_to_csv(profile: FrameAttentionProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_index", "score"])
    for t, s in enumerate(profile.scores):
        w.writerow([t, repr(float(s))])
    return buf.getvalue()


def export_profile(profile: FrameAttentionProfile, path) -> None:
    try:
        atomic_write(path, profile_to_csv(profile).encode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot write attention profile to {path}: {exc}") from exc


def read_profile(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["frame_index", "score"]:
        raise DataError(f"{path}: not an attention profile CSV")
    return np.array([float(r[1]) for r in rows[1:]])
