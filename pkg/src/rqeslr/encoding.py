"""Relative Quantization Encoding of landmark clips.

Pipeline for ``rqe``/``rqe_sf``: optional dominance flip, physiological
anchoring (every landmark becomes an offset from its parent joint, with the
chain rooted at the reference-frame mid-shoulder), scaling by the reference
shoulder width (x, d) and torso length (y), per-axis uniform quantization to
bin centres, and flattening to the 224-channel layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .data import (
    CHANNEL_AXIS,
    CHANNEL_LANDMARK,
    FEATURE_DIM,
    LEFT_HAND_OFFSET,
    N_HAND,
    N_LANDMARKS,
    N_POSE,
    RIGHT_HAND_OFFSET,
    Clip,
    ClipMetadata,
    LandmarkFrame,
    channels_of,
    flatten_clip,
)
from .errors import ConfigError, DataError, DegenerateReference, NoReferenceFrame, NoWristMotion

MODES = ("raw", "rqe", "rqe_sf")
FLIP_POLICIES = ("off", "auto", "force")

L_SHOULDER, R_SHOULDER = 11, 12
L_ELBOW, R_ELBOW = 13, 14
L_WRIST, R_WRIST = 15, 16
L_HIP, R_HIP = 23, 24

REF = -1  # anchor code: reference mid-shoulder


def _build_anchor_map():
    anchor = np.full(N_LANDMARKS, REF, dtype=np.intp)
    anchor[0:11] = REF  # face
    anchor[[L_SHOULDER, R_SHOULDER]] = REF
    anchor[L_ELBOW], anchor[R_ELBOW] = L_SHOULDER, R_SHOULDER
    anchor[L_WRIST], anchor[R_WRIST] = L_ELBOW, R_ELBOW
    anchor[[17, 19, 21]] = L_WRIST  # pinky, index, thumb points of the pose model
    anchor[[18, 20, 22]] = R_WRIST
    anchor[[L_HIP, R_HIP]] = REF
    anchor[25], anchor[26] = L_HIP, R_HIP  # knees
    anchor[27], anchor[28] = 25, 26  # ankles
    anchor[[29, 31]] = 27  # heel, foot index
    anchor[[30, 32]] = 28
    anchor[LEFT_HAND_OFFSET] = L_WRIST
    anchor[LEFT_HAND_OFFSET + 1:RIGHT_HAND_OFFSET] = LEFT_HAND_OFFSET
    anchor[RIGHT_HAND_OFFSET] = R_WRIST
    anchor[RIGHT_HAND_OFFSET + 1:] = RIGHT_HAND_OFFSET
    return anchor


#: Parent landmark of every landmark in the anchoring chain (``REF`` = mid-shoulder).
ANCHOR = _build_anchor_map()

LOWER_BODY = tuple(range(23, 33))
SHOULDERS = (L_SHOULDER, R_SHOULDER)
LOWER_BODY_CHANNELS = channels_of(LOWER_BODY)
SHOULDER_CHANNELS = channels_of(SHOULDERS)


def _mirror_permutation():
    perm = np.arange(N_LANDMARKS)
    pairs = [(1, 4), (2, 5), (3, 6), (7, 8), (9, 10)] + [(a, a + 1) for a in range(11, 33, 2)]
    for a, b in pairs:
        perm[a], perm[b] = b, a
    hand = np.arange(N_HAND)
    perm[LEFT_HAND_OFFSET:RIGHT_HAND_OFFSET] = RIGHT_HAND_OFFSET + hand
    perm[RIGHT_HAND_OFFSET:] = LEFT_HAND_OFFSET + hand
    return perm


MIRROR = _mirror_permutation()


@dataclass(frozen=True)
class EncodingConfig:
    mode: str = "rqe"
    levels: Tuple[int, int, int] = (10, 10, 10)
    clamp_range: float = 1.0
    flip_policy: str = "off"
    lower_body_fixed: bool = True

    def __post_init__(self):
        mode = self.mode.replace("-", "_")
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        levels = np.atleast_1d(self.levels)
        if levels.shape not in ((1,), (3,)):
            raise ConfigError(f"levels must be one integer or one per axis (x, y, d), got {self.levels!r}")
        levels = tuple(int(q) for q in np.broadcast_to(levels, (3,)))
        object.__setattr__(self, "levels", levels)
        if any(q < 2 for q in levels):
            raise ConfigError(f"quantization levels must be >= 2, got {levels}")
        if not self.clamp_range > 0:
            raise ConfigError(f"clamp range must be positive, got {self.clamp_range}")
        if self.flip_policy not in FLIP_POLICIES:
            raise ConfigError(f"flip policy must be one of {FLIP_POLICIES}, got {self.flip_policy!r}")

    def to_dict(self):
        return {
            "mode": self.mode,
            "levels": list(self.levels),
            "clamp_range": self.clamp_range,
            "flip_policy": self.flip_policy,
            "lower_body_fixed": self.lower_body_fixed,
        }


@dataclass(frozen=True)
class ReferenceFrame:
    mid_shoulder: np.ndarray
    shoulder_width: float
    torso_length: float
    reference_index: int


@dataclass(frozen=True)
class RelativeFrame:
    """Scaled offsets (75, 3) with the presence mask of each offset."""

    offsets: np.ndarray
    present: np.ndarray


@dataclass(eq=False)
class EncodedClip:
    meta: ClipMetadata
    matrix: np.ndarray
    config: EncodingConfig = field(default_factory=EncodingConfig)
    flipped: bool = False


# ---------------------------------------------------------------------------
# reference and anchoring


def compute_reference(clip: Clip) -> ReferenceFrame:
    """Reference geometry from the first frame with both shoulders and hips present."""
    ok = clip.present[:, [L_SHOULDER, R_SHOULDER, L_HIP, R_HIP]].all(axis=1)
    if not ok.any():
        raise NoReferenceFrame(
            f"clip {clip.meta.signer_id}/{clip.meta.word_id}: no frame with both shoulders and hips present"
        )
    t = int(np.argmax(ok))
    c = clip.coords[t]
    mid_shoulder = (c[L_SHOULDER] + c[R_SHOULDER]) / 2
    mid_hip = (c[L_HIP] + c[R_HIP]) / 2
    width = float(np.hypot(*(c[L_SHOULDER, :2] - c[R_SHOULDER, :2])))
    torso = float(np.hypot(*(mid_shoulder[:2] - mid_hip[:2])))
    if width == 0 or torso == 0:
        raise DegenerateReference(
            f"clip {clip.meta.signer_id}/{clip.meta.word_id}: frame {t} has "
            f"shoulder width {width} and torso length {torso}"
        )
    return ReferenceFrame(mid_shoulder, width, torso, t)


def _anchor(coords, present, ref: ReferenceFrame):
    # coords (..., 75, 3), present (..., 75)
    has_parent = ANCHOR != REF
    parent = np.where(has_parent, ANCHOR, 0)
    origin = np.where(has_parent[:, None], coords[..., parent, :], ref.mid_shoulder)
    ok = present & np.where(has_parent, present[..., parent], True)
    scale = np.array([ref.shoulder_width, ref.torso_length, ref.shoulder_width])
    offsets = np.where(ok[..., None], (coords - origin) / scale, 0.0)
    return offsets, ok


def anchor_frame(frame: LandmarkFrame, ref: ReferenceFrame) -> RelativeFrame:
    offsets, ok = _anchor(frame.coords, frame.present, ref)
    return RelativeFrame(offsets, ok)


def anchor_clip(clip: Clip, ref: Optional[ReferenceFrame] = None):
    """Offsets (T, 75, 3) and their presence (T, 75) for a whole clip."""
    if ref is None:
        ref = compute_reference(clip)
    return _anchor(clip.coords, clip.present, ref)


# ---------------------------------------------------------------------------
# quantization


def quantize_array(v, levels: int, clamp_range: float = 1.0):
    """Uniform quantizer over [-R, R] with ``levels`` bins.

    Returns ``(bins, encoded)``. Exact zeros map to encoded 0.0 (the neutral
    code for missing or at-anchor landmarks) and to the bin containing zero.
    Bin centres are computed as ``k * R / Q`` with integer ``k = 2*bin + 1 - Q``
    so the encoding is exactly sign-symmetric.
    """
    v = np.asarray(v, dtype=np.float64)
    Q, R = int(levels), float(clamp_range)
    clipped = np.clip(v, -R, R)
    bins = np.minimum(Q - 1, np.floor((clipped + R) * Q / (2 * R))).astype(np.int64)
    encoded = (2 * bins + 1 - Q) * R / Q
    zero = v == 0
    encoded = np.where(zero, 0.0, encoded)
    return bins, encoded


def quantize(v: float, levels: int, clamp_range: float = 1.0):
    bins, encoded = quantize_array(v, levels, clamp_range)
    return int(bins), float(encoded)


# ---------------------------------------------------------------------------
# hand dominance


def _wrist_path(clip: Clip, index: int):
    seen = clip.present[:, index]
    if seen.sum() < 2:
        return None
    xy = clip.coords[seen, index, :2]
    return float(np.hypot(*np.diff(xy, axis=0).T).sum())


def detect_dominant_hand(clip: Clip) -> str:
    """``"left"`` if the left pose wrist travels strictly further than the right."""
    left, right = _wrist_path(clip, L_WRIST), _wrist_path(clip, R_WRIST)
    if left is None and right is None:
        raise NoWristMotion(f"clip {clip.meta.signer_id}/{clip.meta.word_id}: no wrist seen in two frames")
    return "left" if (left or 0.0) > (right or 0.0) else "right"


def flip_clip(clip: Clip) -> Clip:
    """Mirror horizontally (x -> 1 - x) and swap left/right landmarks."""
    coords = clip.coords[:, MIRROR].copy()
    present = clip.present[:, MIRROR]
    coords[..., 0] = np.where(present, 1.0 - coords[..., 0], 0.0)
    return Clip(clip.meta, coords, present)


# ---------------------------------------------------------------------------
# clip encoding


def encode_clip(clip: Clip, config: EncodingConfig = EncodingConfig()) -> EncodedClip:
    flipped = config.flip_policy == "force" or (
        config.flip_policy == "auto" and detect_dominant_hand(clip) == "left"
    )
    if flipped:
        clip = flip_clip(clip)

    if config.mode == "raw":
        matrix = flatten_clip(clip.coords, clip.present)
    else:
        offsets, _ = anchor_clip(clip)
        encoded = np.empty_like(offsets)
        for axis in range(3):
            _, encoded[..., axis] = quantize_array(offsets[..., axis], config.levels[axis], config.clamp_range)
        matrix = flatten_clip(encoded)
        if config.mode == "rqe_sf":
            matrix[:, SHOULDER_CHANNELS] = 0.0
    if config.lower_body_fixed:
        matrix[:, LOWER_BODY_CHANNELS] = 0.0
    return EncodedClip(clip.meta, matrix, config, flipped)


# ---------------------------------------------------------------------------
# .rqe binary format

MAGIC = b"RQE1"


def encoded_to_bytes(matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != FEATURE_DIM:
        raise DataError(f"encoded matrix must be (T, {FEATURE_DIM}), got {matrix.shape}")
    T, D = matrix.shape
    return MAGIC + struct.pack("<II", T, D) + matrix.astype("<f4").tobytes()


def encoded_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError("not an RQE1 encoded clip (bad magic)")
    T, D = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * T * D
    if len(data) != expected:
        raise DataError(f"encoded clip truncated or oversized: {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(T, D).astype(np.float32)


__all__ = [
    "ANCHOR",
    "CHANNEL_AXIS",
    "CHANNEL_LANDMARK",
    "EncodedClip",
    "EncodingConfig",
    "ReferenceFrame",
    "RelativeFrame",
    "anchor_clip",
    "anchor_frame",
    "compute_reference",
    "detect_dominant_hand",
    "encode_clip",
    "encoded_from_bytes",
    "encoded_to_bytes",
    "flip_clip",
    "quantize",
    "quantize_array",
]
