"""Relative Quantization Encoding (RQE) for pose-landmark sign language recognition."""

__version__ = "0.1.0"

from .data import Clip, ClipMetadata, Manifest, ManifestEntry, flatten_frame, parse_clip, serialize_clip
from .encoding import EncodingConfig, encode_clip, flip_clip, quantize
from .metrics import WerReport, wer
from .model import ModelConfig, forward, init_params, loss_and_gradients

__all__ = [
    "Clip",
    "ClipMetadata",
    "EncodingConfig",
    "Manifest",
    "ManifestEntry",
    "ModelConfig",
    "WerReport",
    "encode_clip",
    "flatten_frame",
    "flip_clip",
    "forward",
    "init_params",
    "loss_and_gradients",
    "parse_clip",
    "quantize",
    "serialize_clip",
    "wer",
]
