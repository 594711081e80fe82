"""Train/validation/test assignment of manifest entries."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .data import Manifest
from .errors import ConfigError, ManifestError

log = logging.getLogger(__name__)

STRATEGIES = ("fixed_test_signers", "stratified", "leave_one_user_out")


@dataclass(frozen=True)
class SplitSpec:
    strategy: str = "fixed_test_signers"
    test_signers: List[str] = field(default_factory=lambda: ["S04", "S08"])
    val_trials_per_pair: int = 1
    held_out_user: Optional[str] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "fixed_test_signers" and not self.test_signers:
            raise ConfigError("fixed_test_signers needs at least one test signer")
        if self.strategy == "leave_one_user_out" and not self.held_out_user:
            raise ConfigError("leave_one_user_out needs held_out_user")
        if self.val_trials_per_pair < 0:
            raise ConfigError("val_trials_per_pair must be >= 0")

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "test_signers": list(self.test_signers),
            "val_trials_per_pair": self.val_trials_per_pair,
            "held_out_user": self.held_out_user,
        }


def make_splits(manifest: Manifest, spec: SplitSpec, seed: int) -> Manifest:
    """Return a copy of ``manifest`` with every entry's ``split`` assigned."""
    if not len(manifest):
        raise ManifestError("cannot split an empty manifest")
    signers = {e.signer for e in manifest}
    named = list(spec.test_signers) if spec.strategy == "fixed_test_signers" else []
    if spec.strategy == "leave_one_user_out":
        named = [spec.held_out_user]
    unknown = sorted(set(named) - signers)
    if unknown:
        raise ManifestError(f"signer id(s) not in manifest: {', '.join(unknown)}")

    split = {}
    if spec.strategy == "leave_one_user_out":
        for e in manifest:
            split[e.clip_path] = "val" if e.signer == spec.held_out_user else "train"
    else:
        test = set(spec.test_signers) if spec.strategy == "fixed_test_signers" else set()
        pairs = defaultdict(list)
        for e in manifest:
            if e.signer in test:
                split[e.clip_path] = "test"
            else:
                pairs[(e.signer, e.word)].append(e.clip_path)
        rng = np.random.default_rng(seed)
        for key in sorted(pairs):
            paths = sorted(pairs[key])
            k = min(spec.val_trials_per_pair, len(paths))
            if k < spec.val_trials_per_pair:
                log.warning("pair %s/%s has only %d clip(s); %d go to val", key[0], key[1], len(paths), k)
            chosen = set(rng.choice(len(paths), size=k, replace=False).tolist()) if k else set()
            for i, path in enumerate(paths):
                split[path] = "val" if i in chosen else "train"

    return Manifest([replace(e, split=split[e.clip_path]) for e in manifest], root=manifest.root)
