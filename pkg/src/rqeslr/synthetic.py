"""Synthetic multi-signer gesture corpus.

Every class is a parametric right-hand gesture: the wrist traces a
class-specific elliptical arc in front of the torso while the hand holds a
class-specific finger configuration. A clip starts and ends at rest, so the
informative frames sit in the middle of the sequence. Each signer applies its
own similarity transform (isotropic scale about the image centre plus a
translation) and per-frame Gaussian jitter; left-handed signers produce the
exact mirror image of the right-handed rendering.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .data import LEFT_HAND_OFFSET, N_LANDMARKS, RIGHT_HAND_OFFSET, Clip, ClipMetadata, Manifest, ManifestEntry
from .encoding import flip_clip
from .errors import ConfigError

CENTER = np.array([0.5, 0.5, 0.0])


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 20
    n_signers: int = 3
    trials: int = 10
    min_frames: int = 16
    max_frames: int = 28
    scale_range: Tuple[float, float] = (0.7, 1.4)
    translation: float = 0.1
    jitter: float = 0.005
    missing_prob: float = 0.1
    left_handed_prob: float = 0.0
    view: str = "front"

    def __post_init__(self):
        if self.n_classes < 1 or self.n_signers < 1 or self.trials < 1:
            raise ConfigError("classes, signers and trials must all be >= 1")
        if not 2 <= self.min_frames <= self.max_frames:
            raise ConfigError(f"frame range must satisfy 2 <= min <= max, got {self.min_frames}..{self.max_frames}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"scale range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.translation < 0 or self.jitter < 0:
            raise ConfigError("translation and jitter must be non-negative")
        for name in ("missing_prob", "left_handed_prob"):
            p = getattr(self, name)
            if not 0 <= p < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {p}")
        if self.view not in ("front", "lateral"):
            raise ConfigError(f"unknown view {self.view!r}")

    def to_dict(self):
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        return d


@dataclass(frozen=True)
class SignerParams:
    signer_id: str
    scale: float = 1.0
    shift: Tuple[float, float] = (0.0, 0.0)
    left_handed: bool = False


@dataclass(frozen=True)
class GestureClass:
    word_id: str
    center: np.ndarray  # arc centre relative to the right shoulder, (x, y)
    radii: np.ndarray  # (rx, ry)
    phase: float
    turns: float
    depth_amp: float
    curl: np.ndarray  # per finger, thumb..pinky, in [0, 1]
    spread: float
    roll: float  # hand rotation in the image plane


# --- resting skeleton, image coordinates with y pointing down ---------------

_BODY = {
    0: (0.50, 0.25, -0.30),
    1: (0.52, 0.23, -0.28), 2: (0.53, 0.23, -0.28), 3: (0.54, 0.23, -0.28),
    4: (0.48, 0.23, -0.28), 5: (0.47, 0.23, -0.28), 6: (0.46, 0.23, -0.28),
    7: (0.56, 0.24, -0.20), 8: (0.44, 0.24, -0.20),
    9: (0.52, 0.28, -0.27), 10: (0.48, 0.28, -0.27),
    11: (0.60, 0.40, -0.10), 12: (0.40, 0.40, -0.10),
    13: (0.64, 0.56, -0.08), 15: (0.62, 0.70, -0.10),
    23: (0.57, 0.80, 0.00), 24: (0.43, 0.80, 0.00),
    25: (0.57, 1.02, 0.05), 26: (0.43, 1.02, 0.05),
    27: (0.57, 1.24, 0.10), 28: (0.43, 1.24, 0.10),
    29: (0.58, 1.27, 0.12), 30: (0.42, 1.27, 0.12),
    31: (0.56, 1.29, 0.05), 32: (0.44, 1.29, 0.05),
}
_R_SHOULDER = np.array(_BODY[12])
_R_REST_WRIST = np.array([0.38, 0.70, -0.10])

# finger base directions (radians from "up"), thumb..pinky, and segment lengths
_FINGER_DIR = np.array([-1.1, -0.35, -0.05, 0.22, 0.48])
_FINGER_SEG = np.array(
    [
        [0.018, 0.016, 0.013, 0.011],
        [0.040, 0.022, 0.014, 0.012],
        [0.040, 0.025, 0.016, 0.013],
        [0.038, 0.023, 0.015, 0.012],
        [0.035, 0.018, 0.012, 0.011],
    ]
)


def hand_shape(curl, spread=0.0, roll=0.0, mirror=False):
    """Hand landmarks (21, 3) relative to the wrist for a finger configuration."""
    pts = np.zeros((21, 3))
    sign = -1.0 if mirror else 1.0
    for f in range(5):
        angle = (_FINGER_DIR[f] * (1 + spread)) + roll
        pos = np.zeros(2)
        for j in range(4):
            bend = curl[f] * (0.0 if j == 0 else 1.1 * j)
            a = angle + sign * bend
            pos = pos + _FINGER_SEG[f, j] * np.array([sign * np.sin(a), -np.cos(a)])
            pts[1 + 4 * f + j, :2] = pos
            pts[1 + 4 * f + j, 2] = -0.01 * (j + 1) * (1 - curl[f])
    return pts


def make_classes(n_classes: int, rng: np.random.Generator) -> List[GestureClass]:
    classes = []
    for c in range(n_classes):
        classes.append(
            GestureClass(
                word_id=f"W{c + 1:03d}",
                center=np.array([rng.uniform(-0.02, 0.16), rng.uniform(-0.14, 0.12)]),
                radii=rng.uniform(0.02, 0.09, size=2),
                phase=rng.uniform(0, 2 * np.pi),
                turns=rng.choice([0.5, 1.0, 1.5, 2.0]) * rng.choice([-1, 1]),
                depth_amp=rng.uniform(-0.08, 0.08),
                curl=rng.choice([0.0, 0.5, 1.0], size=5),
                spread=rng.uniform(-0.3, 0.3),
                roll=rng.uniform(-0.8, 0.8),
            )
        )
    return classes


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def render_gesture(gesture: GestureClass, n_frames: int) -> np.ndarray:
    """Noise-free right-handed rendering, coordinates (T, 75, 3) for the canonical signer."""
    T = n_frames
    coords = np.zeros((T, N_LANDMARKS, 3))
    for i, p in _BODY.items():
        coords[:, i] = p
    s = np.linspace(0.0, 1.0, T)
    # rest -> raise -> gesture -> lower -> rest
    lift = _smoothstep((s - 0.12) / 0.18) * (1 - _smoothstep((s - 0.70) / 0.18))
    u = np.clip((s - 0.25) / 0.5, 0.0, 1.0)
    theta = gesture.phase + 2 * np.pi * gesture.turns * u
    start = _R_SHOULDER[:2] + gesture.center
    path = np.stack(
        [start[0] + gesture.radii[0] * np.cos(theta), start[1] + gesture.radii[1] * np.sin(theta)], axis=1
    )
    active = np.concatenate([path, (-0.15 + gesture.depth_amp * np.sin(np.pi * u))[:, None]], axis=1)
    wrist = _R_REST_WRIST + lift[:, None] * (active - _R_REST_WRIST)
    elbow = (_R_SHOULDER + wrist) / 2 + np.array([-0.06, 0.07, 0.02])

    coords[:, 16] = wrist
    coords[:, 14] = elbow
    curl_rest = np.full(5, 0.4)
    right = np.empty((T, 21, 3))
    for t in range(T):
        w = lift[t]
        shape = hand_shape(w * gesture.curl + (1 - w) * curl_rest, w * gesture.spread, w * gesture.roll)
        right[t] = wrist[t] + shape
    coords[:, RIGHT_HAND_OFFSET:] = right
    coords[:, 18] = right[:, 17]
    coords[:, 20] = right[:, 5]
    coords[:, 22] = right[:, 2]

    left = coords[0, 15] + hand_shape(curl_rest, mirror=True)
    coords[:, LEFT_HAND_OFFSET:RIGHT_HAND_OFFSET] = left
    coords[:, 17] = left[17]
    coords[:, 19] = left[5]
    coords[:, 21] = left[2]
    return coords


def apply_signer(coords: np.ndarray, signer: SignerParams) -> np.ndarray:
    """Isotropic scale about the image centre, then translate in the image plane."""
    shift = np.array([signer.shift[0], signer.shift[1], 0.0])
    return CENTER + signer.scale * (coords - CENTER) + shift


def render_clip(
    gesture: GestureClass,
    n_frames: int,
    signer: SignerParams,
    rng: np.random.Generator,
    jitter: float = 0.0,
    missing_prob: float = 0.0,
    view: str = "front",
) -> Clip:
    coords = apply_signer(render_gesture(gesture, n_frames), signer)
    coords = coords + jitter * rng.standard_normal(coords.shape)
    # landmark extractors emit float32
    coords = coords.astype(np.float32).astype(np.float64)
    present = rng.random(coords.shape[:2]) >= missing_prob
    clip = Clip(ClipMetadata(signer.signer_id, gesture.word_id, view), coords, present)
    if signer.left_handed:
        clip = flip_clip(clip)
    return clip


def make_signers(config: SynthConfig, rng: np.random.Generator) -> List[SignerParams]:
    signers = []
    for k in range(config.n_signers):
        scale = rng.uniform(*config.scale_range)
        shift = tuple(rng.uniform(-config.translation, config.translation, size=2))
        left = bool(rng.random() < config.left_handed_prob)
        signers.append(SignerParams(f"S{k + 1:02d}", float(scale), shift, left))
    return signers


def generate_synthetic(config: SynthConfig, seed: int):
    """Generate ``(clips, manifest)``; manifest paths are ``clips/<signer>_<word>_T<k>.json``."""
    rng = np.random.default_rng(seed)
    classes = make_classes(config.n_classes, rng)
    signers = make_signers(config, rng)
    clips, entries = [], []
    for signer in signers:
        for gesture in classes:
            for trial in range(config.trials):
                n_frames = int(rng.integers(config.min_frames, config.max_frames + 1))
                clip = render_clip(
                    gesture, n_frames, signer, rng, config.jitter, config.missing_prob, config.view
                )
                path = f"clips/{signer.signer_id}_{gesture.word_id}_T{trial + 1:02d}.json"
                clips.append(clip)
                entries.append(ManifestEntry(path, signer.signer_id, gesture.word_id, config.view))
    return clips, Manifest(entries)
