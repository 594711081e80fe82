"""Transformer-encoder word classifier over encoded clips, written in numpy.

Architecture: linear input embedding, sinusoidal positional encoding, a
stack of pre-norm encoder layers (masked multi-head self-attention and a ReLU
feed-forward block, each wrapped in a residual connection), a final layer
norm, masked mean pooling over valid frames and a linear classifier.

Parameters live in a plain ``dict`` of float64 arrays whose values are kept
exactly representable in float32, so checkpoints (stored as f32) round-trip
bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import FEATURE_DIM
from .errors import ConfigError, DataError, ShapeError

Params = Dict[str, np.ndarray]

MASK_VALUE = -1e9
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    input_dim: int = FEATURE_DIM
    d_model: int = 224
    n_layers: int = 3
    n_heads: int = 8
    d_ff: Optional[int] = None
    dropout: float = 0.1
    max_frames: int = 247

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name in ("n_classes", "input_dim", "d_model", "n_layers", "n_heads", "d_ff", "max_frames"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the sinusoidal positional encoding")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    inputs: np.ndarray  # (B, T, input_dim), zeros at padding
    mask: np.ndarray  # (B, T) bool, True = real frame
    labels: Optional[np.ndarray] = None  # (B,) class indices


def make_batch(matrices: Sequence[np.ndarray], labels=None, max_frames: Optional[int] = None) -> Batch:
    """Pad variable-length (T_i, D) matrices to the longest one."""
    lengths = [len(m) for m in matrices]
    if not lengths or min(lengths) < 1:
        raise DataError("every sample needs at least one frame")
    T = max(lengths)
    if max_frames is not None and T > max_frames:
        raise DataError(f"clip with {T} frames exceeds max_frames={max_frames}")
    D = matrices[0].shape[1]
    inputs = np.zeros((len(matrices), T, D))
    mask = np.zeros((len(matrices), T), dtype=bool)
    for b, m in enumerate(matrices):
        inputs[b, : len(m)] = m
        mask[b, : len(m)] = True
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return Batch(inputs, mask, labels)


def sinusoidal_pe(T: int, d: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d % 2:
        raise ConfigError(f"positional encoding dimension must be even, got {d}")
    if T < 1:
        raise ConfigError("positional encoding needs T >= 1")
    pos = np.arange(T)[:, None]
    angle = pos / np.power(10000.0, np.arange(0, d, 2) / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# ---------------------------------------------------------------------------
# parameters


def param_shapes(config: ModelConfig):
    """Parameter names and shapes in declaration (checkpoint) order."""
    d, f = config.d_model, config.d_ff
    shapes = [("embed.W", (config.input_dim, d)), ("embed.b", (d,))]
    for layer in range(config.n_layers):
        p = f"layer{layer}."
        shapes += [
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "Wq", (d, d)), (p + "bq", (d,)),
            (p + "Wk", (d, d)), (p + "bk", (d,)),
            (p + "Wv", (d, d)), (p + "bv", (d,)),
            (p + "Wo", (d, d)), (p + "bo", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
            (p + "W1", (d, f)), (p + "b1", (f,)),
            (p + "W2", (f, d)), (p + "b2", (d,)),
        ]
    shapes += [("final_ln.g", (d,)), ("final_ln.b", (d,))]
    shapes += [("head.W", (d, config.n_classes)), ("head.b", (config.n_classes,))]
    return shapes


def to_f32_grid(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def init_params(config: ModelConfig, seed: int) -> Params:
    """Zero-mean uniform weights with variance 1/fan_in; biases 0, layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config):
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(3.0 / shape[0])
            params[name] = to_f32_grid(rng.uniform(-bound, bound, size=shape))
    return params


def check_params(params: Params, config: ModelConfig) -> None:
    for name, shape in param_shapes(config):
        if name not in params:
            raise ShapeError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ShapeError(f"parameter {name} is not finite")


# ---------------------------------------------------------------------------
# forward / backward


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


class _Dropout:
    def __init__(self, rate, train_mode, seed):
        self.rate = rate if train_mode else 0.0
        self.rng = np.random.default_rng(seed) if self.rate > 0 else None

    def __call__(self, x):
        if self.rng is None:
            return x, None
        keep = ((self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)).astype(x.dtype)
        return x * keep, keep


def _validate(batch: Batch, params: Params, config: ModelConfig):
    x, mask = batch.inputs, batch.mask
    if x.ndim != 3 or x.shape[2] != config.input_dim:
        raise ShapeError(f"inputs must be (B, T, {config.input_dim}), got {x.shape}")
    if mask.shape != x.shape[:2]:
        raise ShapeError(f"mask must be {x.shape[:2]}, got {mask.shape}")
    if x.shape[1] > config.max_frames:
        raise ShapeError(f"{x.shape[1]} frames exceed max_frames={config.max_frames}")
    if not mask.any(axis=1).all():
        raise ShapeError("every sample needs at least one unmasked frame")
    if params["embed.W"].shape != (config.input_dim, config.d_model):
        raise ShapeError("parameters do not match the model configuration")


def _forward(batch, params, config, train_mode, seed, keep_cache, dtype=np.float64):
    _validate(batch, params, config)
    x = np.asarray(batch.inputs, dtype=dtype)
    if dtype != np.float64:
        params = {k: v.astype(dtype) for k, v in params.items()}
    mask = np.asarray(batch.mask, dtype=bool)
    B, T, _ = x.shape
    H, dk = config.n_heads, config.head_dim
    drop = _Dropout(config.dropout, train_mode, seed)
    key_ok = mask[:, None, None, :]
    scale = dtype(1.0 / np.sqrt(dk))

    h = x @ params["embed.W"] + params["embed.b"] + sinusoidal_pe(T, config.d_model).astype(dtype)
    h, keep0 = drop(h)
    caches = {"x": x, "mask": mask, "keep0": keep0, "layers": []}
    attention = []

    def heads(a):
        return a.reshape(B, T, H, dk).transpose(0, 2, 1, 3)

    for layer in range(config.n_layers):
        p = f"layer{layer}."
        a, ln1 = _layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"])
        q = heads(a @ params[p + "Wq"] + params[p + "bq"])
        k = heads(a @ params[p + "Wk"] + params[p + "bk"])
        v = heads(a @ params[p + "Wv"] + params[p + "bv"])
        s = np.where(key_ok, (q @ k.transpose(0, 1, 3, 2)) * scale, MASK_VALUE)
        s = s - s.max(-1, keepdims=True)
        e = np.exp(s)
        att = e / e.sum(-1, keepdims=True)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, -1)
        o, keep1 = drop(ctx @ params[p + "Wo"] + params[p + "bo"])
        h1 = h + o
        a2, ln2 = _layer_norm(h1, params[p + "ln2.g"], params[p + "ln2.b"])
        u = a2 @ params[p + "W1"] + params[p + "b1"]
        r = np.maximum(u, 0)
        f, keep2 = drop(r @ params[p + "W2"] + params[p + "b2"])
        h = h1 + f
        attention.append(att)
        if keep_cache:
            caches["layers"].append(
                dict(a=a, ln1=ln1, q=q, k=k, v=v, att=att, ctx=ctx, keep1=keep1, a2=a2, ln2=ln2, u=u, r=r, keep2=keep2)
            )

    z, lnf = _layer_norm(h, params["final_ln.g"], params["final_ln.b"])
    w = (mask / mask.sum(1, keepdims=True)).astype(dtype)
    pooled = np.einsum("bt,btd->bd", w, z)
    logits = pooled @ params["head.W"] + params["head.b"]
    caches.update(lnf=lnf, w=w, pooled=pooled, params=params)
    return logits, attention, caches


def forward(
    batch: Batch,
    params: Params,
    config: ModelConfig,
    train_mode: bool = False,
    seed: int = 0,
    return_attention: bool = False,
    dtype=np.float64,
):
    """Logits (B, n_classes) and, on request, attention (B, L, H, T, T).

    ``dtype`` selects the arithmetic precision; float32 is roughly twice as
    fast and is what training uses.
    """
    logits, attention, _ = _forward(batch, params, config, train_mode, seed, False, dtype)
    if return_attention:
        return logits, np.stack(attention, axis=1)
    return logits, None


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    B = len(labels)
    loss = -logp[np.arange(B), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    return float(loss), dlogits / B


def loss_and_gradients(
    batch: Batch, params: Params, config: ModelConfig, seed: int = 0, train_mode: bool = True, dtype=np.float64
):
    """Mean cross-entropy over the batch and its exact gradient for every parameter.

    Dropout masks are drawn from ``seed``, so for fixed arguments the loss is
    a deterministic, piecewise-smooth function of the parameters.
    """
    if batch.labels is None:
        raise DataError("batch has no labels")
    logits, _, c = _forward(batch, params, config, train_mode, seed, True, dtype)
    params = c["params"]
    loss, dlogits = cross_entropy(logits, batch.labels)
    B, T = c["mask"].shape
    H, dk = config.n_heads, config.head_dim
    scale = dtype(1.0 / np.sqrt(dk))
    grads = {}

    grads["head.W"] = c["pooled"].T @ dlogits
    grads["head.b"] = dlogits.sum(0)
    dz = c["w"][:, :, None] * (dlogits @ params["head.W"].T)[:, None, :]
    dh, grads["final_ln.g"], grads["final_ln.b"] = _layer_norm_back(dz, params["final_ln.g"], c["lnf"])

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(B, T, -1)

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    for layer in reversed(range(config.n_layers)):
        p = f"layer{layer}."
        lc = c["layers"][layer]
        # feed-forward block
        df = dh if lc["keep2"] is None else dh * lc["keep2"]
        grads[p + "W2"] = flat(lc["r"]).T @ flat(df)
        grads[p + "b2"] = flat(df).sum(0)
        du = (df @ params[p + "W2"].T) * (lc["u"] > 0)
        grads[p + "W1"] = flat(lc["a2"]).T @ flat(du)
        grads[p + "b1"] = flat(du).sum(0)
        da2 = du @ params[p + "W1"].T
        dx, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_back(da2, params[p + "ln2.g"], lc["ln2"])
        dh1 = dh + dx
        # attention block
        do = dh1 if lc["keep1"] is None else dh1 * lc["keep1"]
        grads[p + "Wo"] = flat(lc["ctx"]).T @ flat(do)
        grads[p + "bo"] = flat(do).sum(0)
        dctx = (do @ params[p + "Wo"].T).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
        att = lc["att"]
        datt = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ lc["k"]
        dk_ = ds.transpose(0, 1, 3, 2) @ lc["q"]
        a = flat(lc["a"])
        da = 0.0
        for name, g in (("q", dq), ("k", dk_), ("v", dv)):
            g = merge(g)
            grads[p + "W" + name] = a.T @ flat(g)
            grads[p + "b" + name] = flat(g).sum(0)
            da = da + g @ params[p + "W" + name].T
        dx, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_back(da, params[p + "ln1.g"], lc["ln1"])
        dh = dh1 + dx

    if c["keep0"] is not None:
        dh = dh * c["keep0"]
    grads["embed.W"] = flat(c["x"]).T @ flat(dh)
    grads["embed.b"] = flat(dh).sum(0)
    return loss, grads


def predict(params: Params, config: ModelConfig, matrices: Sequence[np.ndarray], batch_size: int = 64, dtype=np.float64):
    """Argmax class per clip with dropout off; ties resolve to the lowest index."""
    order = np.argsort([len(m) for m in matrices], kind="stable")
    preds = np.empty(len(matrices), dtype=np.int64)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        logits, _ = forward(make_batch([matrices[i] for i in idx]), params, config, dtype=dtype)
        preds[idx] = np.argmax(logits, axis=1)
    return preds


# ---------------------------------------------------------------------------
# checkpoint format

CKPT_MAGIC = b"SLRTCKPT"
CKPT_VERSION = 1


def checkpoint_to_bytes(params: Params, config: ModelConfig, class_names: Optional[List[str]] = None) -> bytes:
    check_params(params, config)
    header = json.dumps(
        {"config": config.to_dict(), "class_names": list(class_names or [])}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header]
    shapes = param_shapes(config)
    out.append(struct.pack("<I", len(shapes)))
    for name, shape in shapes:
        out.append(struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        out.append(params[name].astype("<f4").tobytes())
    return b"".join(out)


def checkpoint_from_bytes(data: bytes):
    """Returns ``(params, config, class_names)``."""
    if data[:8] != CKPT_MAGIC:
        raise DataError("not a model checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    config = ModelConfig(**header["config"])
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shapes = param_shapes(config)
    if n != len(shapes):
        raise DataError(f"checkpoint holds {n} tensors, configuration expects {len(shapes)}")
    params = {}
    for name, shape in shapes:
        (ndim,) = struct.unpack_from("<I", data, pos)
        stored = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        if tuple(stored) != shape:
            raise DataError(f"tensor {name}: stored shape {stored}, expected {shape}")
        size = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * size
    if pos != len(data):
        raise DataError("trailing bytes after checkpoint tensors")
    return params, config, header["class_names"]
