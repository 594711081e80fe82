import numpy as np
import pytest

from rqeslr.data import flatten_clip, serialize_clip
from rqeslr.encoding import EncodingConfig, anchor_clip, detect_dominant_hand, encode_clip
from rqeslr.errors import ConfigError
from rqeslr.synthetic import (
    SignerParams,
    SynthConfig,
    generate_synthetic,
    make_classes,
    render_clip,
)


def test_same_seed_byte_identical():
    cfg = SynthConfig(n_classes=3, n_signers=2, trials=2)
    a, ma = generate_synthetic(cfg, 7)
    b, mb = generate_synthetic(cfg, 7)
    assert [serialize_clip(c) for c in a] == [serialize_clip(c) for c in b]
    assert ma.entries == mb.entries
    c, _ = generate_synthetic(cfg, 8)
    assert [serialize_clip(x) for x in a] != [serialize_clip(x) for x in c]


def test_counts_and_paths():
    clips, manifest = generate_synthetic(SynthConfig(n_classes=2, n_signers=2, trials=3), 0)
    assert len(clips) == len(manifest) == 12
    assert manifest.entries[0].clip_path == "clips/S01_W001_T01.json"
    assert {e.signer for e in manifest} == {"S01", "S02"}
    lengths = {c.n_frames for c in clips}
    assert min(lengths) >= 16 and max(lengths) <= 28


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n_classes=0)
    with pytest.raises(ConfigError):
        SynthConfig(min_frames=10, max_frames=5)


def _pair(scale_b, shift_b, left_b=False):
    rng = np.random.default_rng(3)
    gesture = make_classes(4, rng)[2]
    a = SignerParams("S01", 1.0, (0.0, 0.0), False)
    b = SignerParams("S02", scale_b, shift_b, left_b)
    ca = render_clip(gesture, 20, a, np.random.default_rng(5))
    cb = render_clip(gesture, 20, b, np.random.default_rng(5))
    return ca, cb


def _near_boundary(offsets, levels=10, R=1.0, eps=1e-3):
    t = (np.clip(offsets, -R, R) + R) * levels / (2 * R)
    return np.abs(t - np.round(t)) * 2 * R / levels < eps


def test_two_signers_encode_alike():
    ca, cb = _pair(1.3, (0.07, -0.03))
    offsets, _ = anchor_clip(ca)
    unsafe = flatten_clip(_near_boundary(offsets)).astype(bool)
    # the nose sits exactly above mid-shoulder, among others: excluded as on-boundary
    assert unsafe.mean() < 0.2
    ea = encode_clip(ca, EncodingConfig(lower_body_fixed=False)).matrix
    eb = encode_clip(cb, EncodingConfig(lower_body_fixed=False)).matrix
    np.testing.assert_array_equal(ea[~unsafe], eb[~unsafe])


def test_left_handed_signer_is_mirror():
    ca, cb = _pair(1.0, (0.0, 0.0), left_b=True)
    assert detect_dominant_hand(ca) == "right"
    assert detect_dominant_hand(cb) == "left"
    ea = encode_clip(ca, EncodingConfig(flip_policy="auto"))
    eb = encode_clip(cb, EncodingConfig(flip_policy="auto"))
    assert eb.flipped and not ea.flipped
    np.testing.assert_array_equal(ea.matrix, eb.matrix)


def test_gesture_has_rest_and_motion():
    clips, _ = generate_synthetic(SynthConfig(n_classes=1, n_signers=1, trials=1, jitter=0, missing_prob=0), 0)
    wrist = clips[0].coords[:, 16, :2]
    speed = np.hypot(*np.diff(wrist, axis=0).T)
    n = len(speed)
    assert speed[n // 4: n - n // 4].sum() > speed[: n // 4].sum() + speed[n - n // 4:].sum()
