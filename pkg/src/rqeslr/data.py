"""Clip data model, clip/manifest file formats and the 224-channel frame layout.

A clip is stored as two arrays rather than a tree of landmark objects:
``coords`` with shape (T, 75, 3) holding (x, y, d) and ``present`` with shape
(T, 75). Landmark order inside a frame is pose 0-32, left hand 0-20, right
hand 0-20. Coordinates of absent landmarks are always stored as zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ClipParseError, ManifestError

N_POSE = 33
N_HAND = 21
N_LANDMARKS = N_POSE + 2 * N_HAND
LEFT_HAND_OFFSET = N_POSE
RIGHT_HAND_OFFSET = N_POSE + N_HAND
FEATURE_DIM = 3 * N_LANDMARKS - 1

VIEWS = ("front", "lateral")
SPLITS = ("train", "val", "test")


def _build_channel_map():
    landmark, axis = [], []
    for i in range(N_LANDMARKS):
        for a in range(3):
            if i == N_POSE - 1 and a == 2:
                continue  # depth of the last pose landmark is not part of the layout
            landmark.append(i)
            axis.append(a)
    return np.array(landmark, dtype=np.intp), np.array(axis, dtype=np.intp)


#: For every feature channel, the landmark index and axis (0=x, 1=y, 2=d) it reads.
CHANNEL_LANDMARK, CHANNEL_AXIS = _build_channel_map()
assert len(CHANNEL_LANDMARK) == FEATURE_DIM == 224


def channels_of(landmarks: Sequence[int]) -> np.ndarray:
    """Feature channel indices that carry any of the given landmark indices."""
    return np.flatnonzero(np.isin(CHANNEL_LANDMARK, list(landmarks)))


@dataclass(frozen=True)
class ClipMetadata:
    signer_id: str
    word_id: str
    view: str = "front"
    source_fps: Optional[float] = None

    def __post_init__(self):
        for name in ("signer_id", "word_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value or any(c.isspace() for c in value):
                raise ClipParseError(f"{name} must be a non-empty token without whitespace, got {value!r}")
        if self.view not in VIEWS:
            raise ClipParseError(f"view must be one of {VIEWS}, got {self.view!r}")
        if self.source_fps is not None and not (math.isfinite(self.source_fps) and self.source_fps > 0):
            raise ClipParseError(f"fps must be a positive number, got {self.source_fps!r}")


@dataclass(frozen=True)
class LandmarkFrame:
    """One frame: ``coords`` (75, 3) and ``present`` (75,)."""

    coords: np.ndarray
    present: np.ndarray

    @property
    def pose(self):
        return self.coords[:N_POSE], self.present[:N_POSE]

    @property
    def left_hand(self):
        return self.coords[LEFT_HAND_OFFSET:RIGHT_HAND_OFFSET], self.present[LEFT_HAND_OFFSET:RIGHT_HAND_OFFSET]

    @property
    def right_hand(self):
        return self.coords[RIGHT_HAND_OFFSET:], self.present[RIGHT_HAND_OFFSET:]


@dataclass(eq=False)
class Clip:
    meta: ClipMetadata
    coords: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.coords.ndim != 3 or self.coords.shape[1:] != (N_LANDMARKS, 3):
            raise ClipParseError(f"coords must have shape (T, {N_LANDMARKS}, 3), got {self.coords.shape}")
        if self.present.shape != self.coords.shape[:2]:
            raise ClipParseError(f"present must have shape {self.coords.shape[:2]}, got {self.present.shape}")
        if self.coords.shape[0] < 1:
            raise ClipParseError("clip must contain at least one frame")
        # absent landmarks carry no coordinates
        self.coords = np.where(self.present[..., None], self.coords, 0.0)
        if not np.all(np.isfinite(self.coords)):
            t, i = np.argwhere(~np.isfinite(self.coords).all(axis=-1))[0]
            raise ClipParseError("non-finite coordinate", frame=int(t), landmark=int(i))

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    def frame(self, t: int) -> LandmarkFrame:
        return LandmarkFrame(self.coords[t], self.present[t])

    @property
    def frames(self) -> Iterator[LandmarkFrame]:
        for t in range(self.n_frames):
            yield self.frame(t)

    def __eq__(self, other):
        if not isinstance(other, Clip):
            return NotImplemented
        return (
            self.meta == other.meta
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.coords, other.coords)
        )


# ---------------------------------------------------------------------------
# clip file format


def _parse_number(value, t, i):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ClipParseError(f"coordinate must be a number, got {value!r}", frame=t, landmark=i)
    value = float(value)
    if not math.isfinite(value):
        raise ClipParseError("non-finite coordinate", frame=t, landmark=i)
    return value


def parse_clip(data) -> Clip:
    """Parse a clip JSON document (bytes or str).

    Raises:
        ClipParseError: malformed JSON, wrong landmark counts or non-finite
            coordinates; the message names the frame and landmark index.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ClipParseError(f"clip is not valid UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ClipParseError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ClipParseError("clip document must be a JSON object")
    unknown = set(doc) - {"signer", "word", "view", "fps", "frames"}
    if unknown:
        raise ClipParseError(f"unknown clip keys: {sorted(unknown)}")
    for key in ("signer", "word", "frames"):
        if key not in doc:
            raise ClipParseError(f"missing key {key!r}")
    meta = ClipMetadata(doc["signer"], doc["word"], doc.get("view", "front"), doc.get("fps"))

    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise ClipParseError("'frames' must be a non-empty array")
    T = len(frames)
    coords = np.zeros((T, N_LANDMARKS, 3))
    present = np.zeros((T, N_LANDMARKS), dtype=bool)
    for t, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != N_LANDMARKS:
            n = len(frame) if isinstance(frame, list) else type(frame).__name__
            raise ClipParseError(f"expected {N_LANDMARKS} landmarks, got {n}", frame=t)
        for i, lm in enumerate(frame):
            if lm is None:
                continue
            if not isinstance(lm, list) or len(lm) != 3:
                raise ClipParseError("landmark must be null or [x, y, d]", frame=t, landmark=i)
            coords[t, i] = [_parse_number(v, t, i) for v in lm]
            present[t, i] = True
    return Clip(meta, coords, present)


def clip_to_dict(clip: Clip) -> dict:
    doc = {"signer": clip.meta.signer_id, "word": clip.meta.word_id, "view": clip.meta.view}
    if clip.meta.source_fps is not None:
        doc["fps"] = clip.meta.source_fps
    coords = clip.coords.tolist()
    present = clip.present.tolist()
    doc["frames"] = [
        [xyd if p else None for xyd, p in zip(frame, frame_present)]
        for frame, frame_present in zip(coords, present)
    ]
    return doc


def serialize_clip(clip: Clip) -> bytes:
    """Canonical compact JSON; floats use the shortest round-tripping repr."""
    return json.dumps(clip_to_dict(clip), separators=(",", ":"), allow_nan=False).encode("utf-8")


def load_clip(path) -> Clip:
    return parse_clip(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# feature layout


def flatten_frame(frame: LandmarkFrame) -> np.ndarray:
    """Map one frame to its 224-value feature vector (missing landmarks are 0)."""
    values = np.where(frame.present[:, None], frame.coords, 0.0)
    return values[CHANNEL_LANDMARK, CHANNEL_AXIS]


def flatten_clip(values: np.ndarray, present: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorised :func:`flatten_frame` over a (T, 75, 3) array."""
    if present is not None:
        values = np.where(present[..., None], values, 0.0)
    return values[:, CHANNEL_LANDMARK, CHANNEL_AXIS]


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: str
    signer: str
    word: str
    view: str = "front"
    split: Optional[str] = None


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.clip_path in seen:
                raise ManifestError(f"duplicate clip_path {e.clip_path!r}")
            seen.add(e.clip_path)
            if e.split is not None and e.split not in SPLITS:
                raise ManifestError(f"{e.clip_path}: unknown split {e.split!r}")
            if e.view not in VIEWS:
                raise ManifestError(f"{e.clip_path}: unknown view {e.view!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return (self.root or Path(".")) / entry.clip_path

    def select(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    @property
    def has_splits(self) -> bool:
        return any(e.split is not None for e in self.entries)


MANIFEST_COLUMNS = ["clip_path", "signer", "word", "view"]


def manifest_to_csv(manifest: Manifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    with_split = manifest.has_splits
    writer.writerow(MANIFEST_COLUMNS + (["split"] if with_split else []))
    for e in manifest.entries:
        row = [e.clip_path, e.signer, e.word, e.view]
        if with_split:
            row.append(e.split or "")
        writer.writerow(row)
    return buf.getvalue()


def read_manifest(path, check_files: bool = True) -> Manifest:
    """Read a manifest CSV; clip paths are resolved against its directory."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header not in (MANIFEST_COLUMNS, MANIFEST_COLUMNS + ["split"]):
            raise ManifestError(f"{path}: unexpected header {header}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            split = row[4] or None if len(row) == 5 else None
            entries.append(ManifestEntry(row[0], row[1], row[2], row[3], split))
    manifest = Manifest(entries, root=path.parent)
    if check_files:
        missing = [e.clip_path for e in entries if not manifest.resolve(e).is_file()]
        if missing:
            raise ManifestError(f"{path}: {len(missing)} referenced clip(s) missing, first: {missing[0]}")
    return manifest


def write_manifest(manifest: Manifest, path) -> None:
    atomic_write(path, manifest_to_csv(manifest).encode("utf-8"))


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
