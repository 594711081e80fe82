"""Command-line entry point: ``rqeslr synth|encode|split|train|eval|attend``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
4 data validation failure, 5 internal invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path, PurePosixPath

import numpy as np

from . import __version__
from .attention import export_profile, mean_attention, per_frame_scores
from .config import MODEL_DEFAULTS, RunConfig, build_encoding, load_run_config
from .data import Manifest, ManifestEntry, atomic_write, load_clip, read_manifest, serialize_clip, write_manifest
from .encoding import EncodingConfig, encode_clip, encoded_from_bytes, encoded_to_bytes
from .errors import ConfigError, DataError, RQEError
from .model import ModelConfig, checkpoint_from_bytes, checkpoint_to_bytes, forward, make_batch
from .splits import SplitSpec, make_splits
from .synthetic import SynthConfig, generate_synthetic
from .training import Dataset, TrainConfig, evaluate, train

log = logging.getLogger("rqeslr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _csv_list(text, cast=str):
    return [cast(t) for t in text.split(",") if t.strip()]


def _float_pair(text):
    vals = _csv_list(text, float)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return tuple(vals)


def _levels(text):
    try:
        vals = _csv_list(text, int)
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be integers, got {text!r}") from None
    if len(vals) not in (1, 3):
        raise argparse.ArgumentTypeError("levels takes one value or three (x,y,d)")
    return vals


def _run_config(args) -> RunConfig:
    return load_run_config(args.config) if getattr(args, "config", None) else RunConfig()


def _threads():
    value = os.environ.get("SLR_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SLR_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"SLR_THREADS must be a positive integer, got {value!r}")
    return n


def _encoding_from_args(args, run: RunConfig) -> EncodingConfig:
    overrides = {
        "mode": args.mode,
        "levels": args.levels,
        "clamp_range": args.range,
        "flip_policy": args.flip,
        "lower_body_fixed": False if args.keep_lower_body else None,
    }
    return build_encoding(run.section("encoding", overrides))


def _add_encoding_flags(p, required_mode=False):
    p.add_argument("--mode", choices=["raw", "rqe", "rqe-sf", "rqe_sf"], required=required_mode,
                   help="encoding mode (default rqe)")
    p.add_argument("--levels", type=_levels, help="quantization levels, one value or x,y,d (default 10)")
    p.add_argument("--range", type=float, help="offset clamp range R (default 1.0)")
    p.add_argument("--flip", choices=["off", "auto", "force"], help="hand-dominance flipping (default off)")
    p.add_argument("--keep-lower-body", action="store_true",
                   help="do not force lower-body channels (pose 23-32) to zero")


def encoded_relpath(clip_path: str) -> str:
    """Relative .rqe path for a clip path, with ``..`` and anchors dropped so it stays inside the output."""
    parts = [p for p in PurePosixPath(clip_path).parts if p not in ("..", ".", "/")]
    return str(PurePosixPath(*parts).with_suffix(".rqe"))


def _encoded_path(manifest: Manifest, entry: ManifestEntry, encoded_dir) -> Path:
    if encoded_dir is None:
        return manifest.resolve(entry)
    return Path(encoded_dir) / encoded_relpath(entry.clip_path)


def _find_encoding_echo(manifest: Manifest, encoded_dir):
    first = _encoded_path(manifest, manifest.entries[0], encoded_dir).resolve()
    candidates = ([Path(encoded_dir)] if encoded_dir else []) + [manifest.root] + list(first.parents)[:4]
    for d in candidates:
        f = Path(d) / "encoding.json"
        if f.is_file():
            return json.loads(f.read_text(encoding="utf-8"))["encoding"]
    return None


def _load_split(manifest: Manifest, split, encoded_dir, class_names):
    entries = manifest.select(split) if split else list(manifest)
    inputs, labels, ids = [], [], []
    for e in entries:
        if e.word not in class_names:
            raise DataError(f"{e.clip_path}: word {e.word!r} is not a known class")
        path = _encoded_path(manifest, e, encoded_dir)
        inputs.append(encoded_from_bytes(path.read_bytes()))
        labels.append(class_names.index(e.word))
        ids.append(e.clip_path)
    return Dataset(inputs, labels, ids)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_classes=args.classes, n_signers=args.signers, trials=args.trials,
        min_frames=args.min_frames, max_frames=args.max_frames, scale_range=args.scale_range,
        translation=args.translation, jitter=args.jitter, missing_prob=args.missing,
        left_handed_prob=args.left_handed, view=args.view,
    )
    clips, manifest = generate_synthetic(config, args.seed)
    out = Path(args.out)
    for clip, entry in zip(clips, manifest):
        atomic_write(out / entry.clip_path, serialize_clip(clip))
    write_manifest(manifest, out / "manifest.csv")
    atomic_write(out / "synth_config.json", _dump_json({"seed": args.seed, "synth": config.to_dict()}))
    print(f"wrote {len(clips)} clips ({config.n_classes} classes x {config.n_signers} signers x "
          f"{config.trials} trials) and manifest.csv to {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    run = _run_config(args)
    config = _encoding_from_args(args, run)
    manifest = read_manifest(args.manifest)

    def work(entry):
        try:
            return encode_clip(load_clip(manifest.resolve(entry)), config), None
        except DataError as exc:
            return None, f"{entry.clip_path}: {exc}"

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(work, manifest.entries))
    failures = [msg for _, msg in results if msg]
    if failures:
        raise DataError(f"{len(failures)} clip(s) could not be encoded:\n  " + "\n  ".join(failures))

    out = Path(args.out)
    encoded_manifest = Manifest([
        ManifestEntry(encoded_relpath(e.clip_path), e.signer, e.word, e.view, e.split) for e in manifest
    ])
    for entry, (encoded, _) in zip(encoded_manifest, results):
        atomic_write(out / entry.clip_path, encoded_to_bytes(encoded.matrix))
    write_manifest(encoded_manifest, out / "manifest.csv")
    flipped = sum(e.flipped for e, _ in results)
    atomic_write(out / "encoding.json", _dump_json({"encoding": config.to_dict(), "flipped_clips": flipped}))
    print(f"encoded {len(encoded_manifest)} clips with mode {config.mode} ({flipped} flipped) to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    run = _run_config(args)
    overrides = {
        "strategy": args.strategy,
        "test_signers": _csv_list(args.test_signers) if args.test_signers else None,
        "val_trials_per_pair": args.val_per_pair,
        "held_out_user": args.held_out,
    }
    try:
        spec = SplitSpec(**run.section("split", overrides))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    seed = args.seed if args.seed is not None else run.seed
    manifest = read_manifest(args.manifest)
    labelled = make_splits(manifest, spec, seed)
    out = Path(args.out)
    # clip paths stay valid relative to the new manifest location
    rebase = Path(os.path.relpath(manifest.root.resolve(), out.parent.resolve()))
    entries = [
        ManifestEntry((rebase / e.clip_path).as_posix(), e.signer, e.word, e.view, e.split)
        for e in labelled
    ]
    write_manifest(Manifest(entries), out)
    counts = {s: len(labelled.select(s)) for s in ("train", "val", "test")}
    print("split " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args)
    model_values = {**MODEL_DEFAULTS, **run.section("model", {
        "d_model": args.d_model, "n_layers": args.layers, "n_heads": args.heads,
        "d_ff": args.d_ff, "dropout": args.dropout, "max_frames": args.max_frames,
    })}
    seed = args.seed if args.seed is not None else run.seed
    train_values = run.section("train", {
        "batch_size": args.batch_size, "lr": args.lr, "min_lr": args.min_lr,
        "patience_epochs": args.patience, "lr_patience": args.lr_patience,
        "lr_decay_factor": args.lr_decay, "max_epochs": args.max_epochs,
        "compute_dtype": args.compute_dtype,
    })
    train_values["seed"] = seed
    try:
        train_cfg = TrainConfig(**train_values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    manifest_path = args.manifest or run.paths.get("manifest")
    out_dir = args.out or run.paths.get("output_dir")
    encoded_dir = args.encoded or run.paths.get("encoded_dir")
    if not manifest_path or not out_dir:
        raise UsageError("train needs --manifest and --out (or paths in --config)")
    manifest = read_manifest(manifest_path, check_files=encoded_dir is None)
    if not manifest.has_splits:
        raise DataError(f"{manifest_path}: manifest has no split column; run `split` first")
    class_names = sorted({e.word for e in manifest})
    try:
        model_cfg = ModelConfig(n_classes=len(class_names), **model_values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    train_set = _load_split(manifest, "train", encoded_dir, class_names)
    val_set = _load_split(manifest, "val", encoded_dir, class_names)

    params, history = train(train_set, val_set, model_cfg, train_cfg, class_names=class_names)

    out = Path(out_dir)
    effective = {
        "seed": seed,
        "encoding": _find_encoding_echo(manifest, encoded_dir),
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "paths": {"manifest": str(manifest_path), "encoded_dir": encoded_dir, "output_dir": str(out)},
        "class_names": class_names,
    }
    atomic_write(out / "model.ckpt", checkpoint_to_bytes(params, model_cfg, class_names))
    atomic_write(out / "history.csv", history.to_csv().encode("utf-8"))
    atomic_write(out / "effective_config.json", _dump_json(effective))
    if not args.no_plot:
        from .reporting import plot_history

        plot_history(history, out / "history.png")
    print(f"trained {len(history.records)} epochs (stopped: {history.stopped_reason}); "
          f"best epoch {history.best_epoch} val wer {history.best_val_wer:.4f}")
    return EXIT_OK


def _read_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())


def cmd_eval(args) -> int:
    params, model_cfg, class_names = _read_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest, check_files=args.encoded is None)
    split = None if args.split == "all" else args.split
    data = _load_split(manifest, split, args.encoded, class_names)
    if not len(data):
        raise DataError(f"split {args.split!r} is empty in {args.manifest}")
    report = evaluate(params, model_cfg, data, class_names)
    if args.out:
        atomic_write(args.out, _dump_json(report.to_dict()))
    print(f"wer {report.wer:.4f}")
    return EXIT_OK


def cmd_attend(args) -> int:
    params, model_cfg, _ = _read_checkpoint(args.checkpoint)
    run = _run_config(args)
    config = _encoding_from_args(args, run)
    clip = load_clip(args.clip)
    matrix = encode_clip(clip, config).matrix
    T = len(matrix)
    pad_to = args.pad_to or T
    if pad_to < T:
        raise UsageError(f"--pad-to {pad_to} is shorter than the clip ({T} frames)")
    if pad_to > model_cfg.max_frames:
        raise DataError(f"{pad_to} frames exceed the model's max_frames={model_cfg.max_frames}")
    batch = make_batch([matrix])
    if pad_to > T:
        batch.inputs = np.concatenate([batch.inputs, np.zeros((1, pad_to - T, matrix.shape[1]))], axis=1)
        batch.mask = np.concatenate([batch.mask, np.zeros((1, pad_to - T), dtype=bool)], axis=1)
    _, att = forward(batch, params, model_cfg, return_attention=True)
    profile = per_frame_scores(mean_attention(att[0]), batch.mask[0], clip_id=Path(args.clip).stem)
    export_profile(profile, args.out)
    if not args.no_plot:
        from .reporting import plot_profile

        plot_profile(profile, Path(args.out).with_suffix(".png"))
    peak = int(np.argmax(profile.scores))
    print(f"wrote attention profile for {T} frames to {args.out} (peak frame {peak})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqeslr", description="Relative Quantization Encoding for pose-based sign recognition")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-signer corpus")
    p.add_argument("--classes", type=int, default=20, help="number of gesture classes (default 20)")
    p.add_argument("--signers", type=int, default=3, help="number of signers (default 3)")
    p.add_argument("--trials", type=int, default=10, help="trials per signer and word (default 10)")
    p.add_argument("--min-frames", type=int, default=16, help="shortest clip length (default 16)")
    p.add_argument("--max-frames", type=int, default=28, help="longest clip length (default 28)")
    p.add_argument("--scale-range", type=_float_pair, default=(0.7, 1.4), help="signer scale LO,HI (default 0.7,1.4)")
    p.add_argument("--translation", type=float, default=0.1, help="max signer translation (default 0.1)")
    p.add_argument("--jitter", type=float, default=0.005, help="per-frame jitter std (default 0.005)")
    p.add_argument("--missing", type=float, default=0.1, help="missing-landmark probability (default 0.1)")
    p.add_argument("--left-handed", type=float, default=0.0, help="probability a signer is left-handed (default 0)")
    p.add_argument("--view", choices=["front", "lateral"], default="front", help="view label (default front)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode every clip of a manifest to .rqe files")
    p.add_argument("--manifest", required=True, help="input manifest CSV")
    _add_encoding_flags(p)
    p.add_argument("--config", help="run config (YAML/JSON); flags override its encoding section")
    p.add_argument("--out", required=True, help="output directory (gets .rqe files and manifest.csv)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("split", help="assign train/val/test splits")
    p.add_argument("--manifest", required=True, help="input manifest CSV")
    p.add_argument("--strategy", choices=["fixed_test_signers", "stratified", "leave_one_user_out"],
                   help="split strategy (default fixed_test_signers)")
    p.add_argument("--test-signers", help="comma-separated test signer ids (default S04,S08)")
    p.add_argument("--val-per-pair", type=int, help="validation clips per signer-word pair (default 1)")
    p.add_argument("--held-out", help="held-out signer for leave_one_user_out")
    p.add_argument("--seed", type=int, help="random seed (default: config seed or 0)")
    p.add_argument("--config", help="run config (YAML/JSON); flags override its split section")
    p.add_argument("--out", required=True, help="output manifest CSV with split column")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the transformer classifier")
    p.add_argument("--manifest", help="manifest with split column")
    p.add_argument("--encoded", help="directory of .rqe files mirroring the manifest paths")
    p.add_argument("--config", help="run config (YAML/JSON); flags override it")
    p.add_argument("--out", help="output directory for model.ckpt, history.csv, effective_config.json")
    p.add_argument("--d-model", type=int, help="model width (default 224)")
    p.add_argument("--layers", type=int, help="encoder layers (default 3)")
    p.add_argument("--heads", type=int, help="attention heads (default 8)")
    p.add_argument("--d-ff", type=int, help="feed-forward width (default 4*d_model)")
    p.add_argument("--dropout", type=float, help="dropout probability (default 0.1)")
    p.add_argument("--max-frames", type=int, help="longest accepted clip (default 247)")
    p.add_argument("--batch-size", type=int, help="batch size (default 32)")
    p.add_argument("--lr", type=float, help="initial learning rate (default 1e-3)")
    p.add_argument("--min-lr", type=float, help="learning-rate floor (default 1e-7)")
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs (default 30)")
    p.add_argument("--lr-patience", type=int, help="epochs without improvement before decay (default patience/4)")
    p.add_argument("--lr-decay", type=float, help="learning-rate decay factor (default 0.5)")
    p.add_argument("--max-epochs", type=int, help="epoch cap (default 200)")
    p.add_argument("--compute-dtype", choices=["float32", "float64"], help="arithmetic precision (default float32)")
    p.add_argument("--seed", type=int, help="random seed (default: config seed or 0)")
    p.add_argument("--no-plot", action="store_true", help="skip history.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute WER of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--manifest", required=True, help="manifest with split column")
    p.add_argument("--encoded", help="directory of .rqe files mirroring the manifest paths")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"], help="split to score (default test)")
    p.add_argument("--out", help="write the WER report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attend", help="export the per-frame mean-attention profile of one clip")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--clip", required=True, help="clip JSON file")
    _add_encoding_flags(p)
    p.add_argument("--config", help="run config (YAML/JSON); flags override its encoding section")
    p.add_argument("--pad-to", type=int, help="pad with masked frames up to this length")
    p.add_argument("--out", required=True, help="profile CSV (a PNG plot is written next to it)")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG plot")
    p.set_defaults(func=cmd_attend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rqeslr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"rqeslr {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RQEError as exc:
        print(f"rqeslr {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"rqeslr {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
