"""Training loop with Adam, reduce-on-plateau learning rate and early stopping on validation WER."""

from __future__ import annotations

import io
import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .metrics import WerReport, wer
from .model import ModelConfig, Params, init_params, loss_and_gradients, make_batch, predict, to_f32_grid

log = logging.getLogger(__name__)

COMPUTE_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    min_lr: float = 1e-7
    patience_epochs: int = 30
    lr_decay_factor: float = 0.5
    lr_patience: Optional[int] = None
    max_epochs: int = 200
    seed: int = 0
    compute_dtype: str = "float32"

    def __post_init__(self):
        if self.lr_patience is None:
            object.__setattr__(self, "lr_patience", max(1, self.patience_epochs // 4))
        if not 0 < self.min_lr <= self.lr:
            raise ConfigError(f"need 0 < min_lr <= lr, got min_lr={self.min_lr}, lr={self.lr}")
        if self.patience_epochs < 1 or self.lr_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if self.compute_dtype not in COMPUTE_DTYPES:
            raise ConfigError(f"compute_dtype must be one of {sorted(COMPUTE_DTYPES)}")

    @classmethod
    def small(cls, **kw):
        """Defaults for vocabularies of at most 200 signs."""
        return cls(**kw)

    @classmethod
    def large(cls, **kw):
        """Defaults for vocabularies above 200 signs."""
        return cls(**{"lr": 1e-4, "min_lr": 1e-9, "patience_epochs": 60, **kw})

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    """Encoded clips with integer labels; ``ids`` are used for reporting only."""

    inputs: List[np.ndarray]
    labels: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataError("inputs and labels differ in length")

    def __len__(self):
        return len(self.inputs)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_wer: float
    lr: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_reason: str = "max_epochs"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_wer", "lr"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_wer), repr(r.lr)])
        return buf.getvalue()

    @property
    def best_val_wer(self) -> float:
        return self.records[self.best_epoch - 1].val_wer


class Adam:
    def __init__(self, params: Params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            g = g.astype(np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            # keep parameters on the float32 grid so checkpoints round-trip exactly
            params[k] = to_f32_grid(params[k] - update)


def evaluate(params: Params, config: ModelConfig, data: Dataset, class_names: Optional[Sequence[str]] = None,
             dtype=np.float32) -> WerReport:
    """WER of argmax predictions (dropout off) over single-word references."""
    if data.inputs and data.inputs[0].shape[1] != config.input_dim:
        raise DataError(f"encoded width {data.inputs[0].shape[1]} does not match model input {config.input_dim}")
    if not len(data):
        raise DataError("cannot evaluate an empty split")
    names = list(class_names) if class_names else [str(i) for i in range(config.n_classes)]
    preds = predict(params, config, data.inputs, dtype=dtype)
    return wer([[names[y]] for y in data.labels], [[names[p]] for p in preds])


def train(train_data: Dataset, val_data: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          params: Optional[Params] = None, class_names=None, on_epoch=None):
    """Train from ``train_config.seed``; returns ``(best_params, history)``."""
    if not len(train_data) or not len(val_data):
        raise DataError("train and validation splits must both be non-empty")
    for d in (train_data, val_data):
        longest = max(len(m) for m in d.inputs)
        if longest > model_config.max_frames:
            raise DataError(f"clip with {longest} frames exceeds max_frames={model_config.max_frames}")
        if d.labels.max() >= model_config.n_classes or d.labels.min() < 0:
            raise DataError("label outside the model's class range")

    cfg = train_config
    dtype = COMPUTE_DTYPES[cfg.compute_dtype]
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(model_config, int(rng.integers(2**31)))
    params = {k: v.copy() for k, v in params.items()}
    opt = Adam(params)
    history = TrainHistory()
    best_params = {k: v.copy() for k, v in params.items()}
    best_wer = np.inf
    lr = cfg.lr
    since_best = since_decay = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = make_batch([train_data.inputs[i] for i in idx], train_data.labels[idx])
            loss, grads = loss_and_gradients(batch, params, model_config, seed=int(rng.integers(2**31)), dtype=dtype)
            opt.step(params, grads, lr)
            total += loss * len(idx)
        val = evaluate(params, model_config, val_data, class_names, dtype=dtype).wer
        history.records.append(EpochRecord(epoch, total / len(order), val, lr))
        if on_epoch is not None:
            on_epoch(history.records[-1])
        log.debug("epoch %d loss %.4f val_wer %.4f lr %.3g", epoch, total / len(order), val, lr)

        if val < best_wer:
            best_wer, history.best_epoch = val, epoch
            best_params = {k: v.copy() for k, v in params.items()}
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_best >= cfg.patience_epochs:
                history.stopped_reason = "patience"
                break
            if since_decay >= cfg.lr_patience:
                lr = max(lr * cfg.lr_decay_factor, cfg.min_lr)
                since_decay = 0
    return best_params, history
