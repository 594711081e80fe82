"""One test per acceptance criterion; tolerances and time budgets are pinned below.

``pytest tests/test_acceptance.py`` prints a "criterion N: PASS/FAIL" line for
each at the end of the run.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from clipgen import boundary_safe_clip, random_clip, similarity
from rqeslr.attention import export_profile, mean_attention, middle_share, per_frame_scores, read_profile
from rqeslr.data import CHANNEL_LANDMARK, FEATURE_DIM
from rqeslr.encoding import (
    LOWER_BODY_CHANNELS,
    SHOULDER_CHANNELS,
    EncodingConfig,
    anchor_clip,
    encode_clip,
    flip_clip,
    quantize_array,
)
from rqeslr.errors import DataError
from rqeslr.experiment import DESK_SYNTH, run
from rqeslr.metrics import WerReport, wer
from rqeslr.model import ModelConfig, forward, init_params, loss_and_gradients, make_batch, param_shapes
from rqeslr.synthetic import SignerParams, SynthConfig, generate_synthetic, make_classes, render_clip
from wer_oracle import min_edit, optimal_triples, sequences

ROOT = Path(__file__).resolve().parents[1]

# pinned tolerances and budgets
EPS_BOUNDARY = 1e-3
SCALE_RANGE = (0.5, 2.0)
N_INVARIANCE_CLIPS = 200
QUANT_LEVELS = (2, 3, 10, 255)
QUANT_RANGES = (0.5, 1.0, 2.0)
N_QUANT_VALUES = 100_000
N_FLIP_CLIPS = 1000
FD_STEP = 1e-4
FD_REL_TOL = 1e-4
ROW_SUM_TOL = 1e-6
WER_MAX_LEN = 4
WER_VOCAB = "ABC"
DESK_SEEDS = (0, 1, 2, 3, 4)
DESK_RQE_MAX_WER = 0.10
MEAN_ATT_TOL = 1e-9
PROFILE_SUM_TOL = 1e-6
MIDDLE_SHARE = 0.60
MIDDLE_MIN_CLIPS = 4
BUDGET = {1: 30, 2: 10, 3: 30, 4: 120, 5: 60, 6: 600}


def _detail(record_property, text):
    record_property("detail", text)


# --- 1 ----------------------------------------------------------------------

def _min_boundary_distance(clip, levels=10, R=1.0):
    offsets, ok = anchor_clip(clip)
    v = offsets[ok].ravel()
    v = v[(v != 0) & (np.abs(v) < R + EPS_BOUNDARY)]
    t = (v + R) * levels / (2 * R)
    return float((np.abs(t - np.round(t)) * 2 * R / levels).min()) if len(v) else np.inf


@pytest.mark.criterion(1)
def test_criterion_1_encoding_invariance(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    configs = [EncodingConfig(mode=m, lower_body_fixed=f) for m in ("rqe", "rqe_sf") for f in (True, False)]
    checked = 0
    for _ in range(N_INVARIANCE_CLIPS):
        clip = boundary_safe_clip(rng)
        assert _min_boundary_distance(clip) >= EPS_BOUNDARY
        s = rng.uniform(*SCALE_RANGE)
        shift = rng.uniform(-1, 1, size=3)
        pivot = rng.uniform(-1, 2, size=3)
        moved = similarity(clip, s, shift, pivot)
        for cfg in configs:
            a = encode_clip(clip, cfg).matrix
            b = encode_clip(moved, cfg).matrix
            assert np.array_equal(a, b)
            checked += a.size
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{N_INVARIANCE_CLIPS} clips, {checked} values bit-identical, {elapsed:.1f}s")
    assert elapsed < BUDGET[1]


# --- 2 ----------------------------------------------------------------------

def _edge_search(v, Q, R):
    edges = -R + np.arange(Q + 1) * (2 * R / Q)
    return np.clip(np.searchsorted(edges, np.clip(v, -R, R), side="right") - 1, 0, Q - 1)


@pytest.mark.criterion(2)
def test_criterion_2_quantizer(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    for Q in QUANT_LEVELS:
        for R in QUANT_RANGES:
            v = rng.uniform(-3 * R, 3 * R, N_QUANT_VALUES)
            v[:50] = 0.0
            v[50:60] = [R, -R, 2 * R, -2 * R, np.nextafter(R, 0), -np.nextafter(R, 0), 1e-300, -1e-300, 5e-324, -5e-324]
            bins, enc = quantize_array(v, Q, R)
            t = (np.clip(v, -R, R) + R) * Q / (2 * R)
            on_edge = (np.abs(t - np.round(t)) < 1e-9) & (np.round(t) > 0) & (np.round(t) < Q)

            # agrees with a search over explicit bin edges (away from rounding-ambiguous edges)
            assert np.array_equal(bins[~on_edge], _edge_search(v, Q, R)[~on_edge])
            # codes are bin centres, within the range
            nz = v != 0
            np.testing.assert_allclose(enc[nz], -R + (bins[nz] + 0.5) * 2 * R / Q, rtol=0, atol=1e-12)
            assert np.all(np.abs(enc) <= (Q - 1) * R / Q)
            # idempotence
            b2, e2 = quantize_array(enc, Q, R)
            assert np.array_equal(e2, enc)
            assert np.array_equal(b2[nz], bins[nz])
            # symmetry
            nb, ne = quantize_array(-v, Q, R)
            assert np.array_equal(ne[~on_edge], -enc[~on_edge])
            assert np.array_equal(nb[~on_edge & nz], (Q - 1 - bins)[~on_edge & nz])
            # clamp
            hi, lo = v >= R, v <= -R
            assert np.all(bins[hi] == Q - 1) and np.all(bins[lo] == 0)
            assert np.all(enc[hi] == (Q - 1) * R / Q) and np.all(enc[lo] == -(Q - 1) * R / Q)
            # zero neutrality
            assert np.all(enc[v == 0] == 0.0) and np.all(bins[v == 0] == Q // 2)
    # missing landmarks are neutral in every mode
    clip = random_clip(rng, n_frames=20, missing=0.5)
    absent = ~clip.present[:, CHANNEL_LANDMARK]
    for mode in ("raw", "rqe", "rqe_sf"):
        m = encode_clip(clip, EncodingConfig(mode=mode, lower_body_fixed=False)).matrix
        assert np.all(m[absent] == 0)
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{len(QUANT_LEVELS) * len(QUANT_RANGES)} (Q, R) grids x {N_QUANT_VALUES} values, "
                             f"{elapsed:.1f}s")
    assert elapsed < BUDGET[2]


# --- 3 ----------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_criterion_3_flip(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(N_FLIP_CLIPS):
        clip = random_clip(rng, missing=0.15)
        assert flip_clip(flip_clip(clip)) == clip

    classes = make_classes(20, rng)
    pairs = 0
    for k, gesture in enumerate(classes):
        scale, shift = rng.uniform(0.7, 1.4), tuple(rng.uniform(-0.1, 0.1, 2))
        right = SignerParams("S01", scale, shift, False)
        left = SignerParams("S02", scale, shift, True)
        n = int(rng.integers(12, 30))
        a = render_clip(gesture, n, right, np.random.default_rng(k), jitter=0.0, missing_prob=0.1)
        b = render_clip(gesture, n, left, np.random.default_rng(k), jitter=0.0, missing_prob=0.1)
        for mode in ("rqe", "rqe_sf"):
            cfg = EncodingConfig(mode=mode, lower_body_fixed=False)
            assert np.array_equal(encode_clip(flip_clip(b), cfg).matrix, encode_clip(a, cfg).matrix)
            auto = EncodingConfig(mode=mode, flip_policy="auto")
            eb = encode_clip(b, auto)
            assert eb.flipped and np.array_equal(eb.matrix, encode_clip(a, auto).matrix)
        pairs += 1
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{N_FLIP_CLIPS} involutions, {pairs} mirrored pairs exact, {elapsed:.1f}s")
    assert elapsed < BUDGET[3]


# --- 4 ----------------------------------------------------------------------

TINY = ModelConfig(n_classes=3, input_dim=FEATURE_DIM, d_model=8, n_layers=1, n_heads=2, dropout=0.1)


def _central_difference_errors(config, batch, params, seed, train_mode):
    _, grads = loss_and_gradients(batch, params, config, seed=seed, train_mode=train_mode)
    worst = {}
    for name, _ in param_shapes(config):
        p = params[name]
        errs = []
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + FD_STEP
            lp, _ = loss_and_gradients(batch, params, config, seed=seed, train_mode=train_mode)
            p[idx] = old - FD_STEP
            lm, _ = loss_and_gradients(batch, params, config, seed=seed, train_mode=train_mode)
            p[idx] = old
            num = (lp - lm) / (2 * FD_STEP)
            ana = grads[name][idx]
            # floor: exactly-zero gradients (the key bias) leave only ~1e-16/step rounding noise
            errs.append(abs(ana - num) / max(abs(ana), abs(num), 1e-7))
        worst[name] = max(errs)
    return worst


@pytest.mark.criterion(4)
def test_criterion_4_model_numerics(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    batch = make_batch([rng.standard_normal((3, FEATURE_DIM)), rng.standard_normal((2, FEATURE_DIM))], [0, 2])
    assert batch.inputs.shape == (2, 3, FEATURE_DIM)
    params = init_params(TINY, 0)
    for k in params:
        params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    worst = {}
    for train_mode in (False, True):
        errs = _central_difference_errors(TINY, batch, params, seed=11, train_mode=train_mode)
        for k, e in errs.items():
            worst[k] = max(worst.get(k, 0.0), e)
    assert len(worst) == len(param_shapes(TINY))
    bad = {k: e for k, e in worst.items() if not e < FD_REL_TOL}
    assert not bad, bad

    desk = ModelConfig(n_classes=20, d_model=64, n_layers=2, n_heads=4)
    desk_params = init_params(desk, 1)
    lengths = (17, 9, 1, 24)
    mats = [rng.standard_normal((n, FEATURE_DIM)) for n in lengths]
    worst_row = 0.0
    for dtype in (np.float64, np.float32):
        b = make_batch(mats)
        logits, att = forward(b, desk_params, desk, return_attention=True, dtype=dtype)
        for i, n in enumerate(lengths):
            worst_row = max(worst_row, float(np.abs(att[i, :, :, :n].sum(-1) - 1).max()))
            assert np.all(att[i, :, :, :, n:] == 0)
        b.inputs[~b.mask] = rng.standard_normal(b.inputs[~b.mask].shape) * 1e3
        again, _ = forward(b, desk_params, desk, dtype=dtype)
        assert np.array_equal(logits, again)
    assert worst_row <= ROW_SUM_TOL
    elapsed = time.perf_counter() - start
    _detail(record_property, f"max FD rel err {max(worst.values()):.1e} over {len(worst)} groups, "
                             f"max |row sum - 1| {worst_row:.1e}, {elapsed:.1f}s")
    assert elapsed < BUDGET[4]


# --- 5 ----------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_criterion_5_wer_oracle(record_property):
    start = time.perf_counter()
    pairs = 0
    for ref in sequences(WER_VOCAB, WER_MAX_LEN, min_len=1):
        for hyp in sequences(WER_VOCAB, WER_MAX_LEN):
            r = wer([ref], [hyp])
            assert r.errors == min_edit(ref, hyp)
            assert (r.S, r.D, r.I) in optimal_triples(ref, hyp)
            assert r.N == len(ref)
            pairs += 1
    with pytest.raises(DataError):
        wer([()], [("A",)])
    assert WerReport(S=1, D=1, I=1, N=4).wer == 0.75
    assert wer([list("ABCD")], [list("AXCDE")]).wer == 0.5
    assert wer([list("ABC")], [list("AC")]).wer == pytest.approx(1 / 3)
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{pairs} pairs exhaustive, {elapsed:.1f}s")
    assert elapsed < BUDGET[5]


# --- 6 and 8 share the desk-scale runs ------------------------------------

@pytest.fixture(scope="module")
def desk_runs():
    start = time.perf_counter()
    results = run(list(DESK_SEEDS), modes=("rqe", "raw"))
    return results, time.perf_counter() - start


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_criterion_6_desk_experiment(desk_runs, record_property):
    results, elapsed = desk_runs
    assert DESK_SYNTH == SynthConfig(n_classes=20, n_signers=3, trials=10, min_frames=12, max_frames=24,
                                     scale_range=(0.7, 1.4), translation=0.1, jitter=0.005, missing_prob=0.1)
    rqe = [r.val_wer for r in results if r.mode == "rqe"]
    raw = [r.val_wer for r in results if r.mode == "raw"]
    assert len(rqe) == len(raw) == len(DESK_SEEDS)
    assert all(len(r.history.records) <= 200 for r in results)
    med_rqe, med_raw = float(np.median(rqe)), float(np.median(raw))
    table = " ".join(f"s{r.seed}:{r.mode}={r.val_wer:.3f}" for r in results)
    print(table)
    _detail(record_property, f"median val WER rqe {med_rqe:.3f} vs raw {med_raw:.3f}, {elapsed:.0f}s")
    assert med_rqe <= DESK_RQE_MAX_WER
    assert med_rqe <= med_raw
    assert elapsed <= BUDGET[6]


# --- 7 ----------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_criterion_7_channel_check(record_property):
    clips, _ = generate_synthetic(DESK_SYNTH, 0)
    rng = np.random.default_rng(7)
    clips += [random_clip(rng, missing=0.1) for _ in range(200)]
    frames = 0
    for clip in clips:
        for lower in (True, False):
            m = encode_clip(clip, EncodingConfig(mode="rqe_sf", lower_body_fixed=lower)).matrix
            assert np.all(m[:, SHOULDER_CHANNELS] == 0)
            if lower:
                assert np.all(m[:, LOWER_BODY_CHANNELS] == 0)
        for mode in ("raw", "rqe"):
            m = encode_clip(clip, EncodingConfig(mode=mode)).matrix
            assert np.all(m[:, LOWER_BODY_CHANNELS] == 0)
        frames += clip.n_frames
    _detail(record_property, f"{len(clips)} clips, {frames} frames")


# --- 8 ----------------------------------------------------------------------

@pytest.mark.criterion(8)
@pytest.mark.slow
def test_criterion_8_attention(desk_runs, tmp_path, record_property):
    rng = np.random.default_rng(8)
    for _ in range(50):
        L, H, T = (int(x) for x in rng.integers(1, 5, size=3))
        att = rng.random((L, H, T, T))
        att /= att.sum(-1, keepdims=True)
        brute = np.zeros((T, T))
        for i in range(T):
            for j in range(T):
                total = 0.0
                for l_ in range(L):
                    for h in range(H):
                        total += att[l_, h, i, j]
                brute[i, j] = total / (L * H)
        assert np.abs(mean_attention(att) - brute).max() <= MEAN_ATT_TOL

    results, _ = desk_runs
    best = next(r for r in results if r.mode == "rqe" and r.seed == DESK_SEEDS[0])
    picks = rng.choice(len(best.val_data), size=5, replace=False)
    shares = []
    for k, idx in enumerate(picks):
        matrix = best.val_data.inputs[idx]
        pad = 8 if k % 2 else 0  # exercise masked tail frames too
        batch = make_batch([np.vstack([matrix, np.zeros((pad, matrix.shape[1]))])])
        batch.mask[0, len(matrix):] = False
        _, att = forward(batch, best.params, best.model_config, return_attention=True)
        profile = per_frame_scores(mean_attention(att[0]), batch.mask[0], clip_id=best.val_data.ids[idx])
        path = tmp_path / f"profile_{k}.csv"
        export_profile(profile, path)
        scores = read_profile(path)
        assert abs(scores.sum() - 1) <= PROFILE_SUM_TOL
        assert np.all(scores[~batch.mask[0]] == 0)
        shares.append(middle_share(profile))
    hits = sum(s >= MIDDLE_SHARE for s in shares)
    _detail(record_property, "middle-half shares " + ", ".join(f"{s:.2f}" for s in shares))
    assert hits >= MIDDLE_MIN_CLIPS


# --- 9 ----------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_criterion_9_reproducibility(tmp_path, record_property):
    env = {**os.environ, "RQESLR": f"{sys.executable} -m rqeslr"}
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run(["bash", str(ROOT / "scripts" / "pipeline.sh"), str(out), "5"], check=True, env=env,
                       capture_output=True)
        outputs.append(out / "run")
    compared = ["history.csv", "model.ckpt", "wer.json", "attention.csv", "history.png", "attention.png"]
    for name in compared:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name
    _detail(record_property, "identical " + ", ".join(compared))
