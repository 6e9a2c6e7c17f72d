"""The tiny CNN shared by the MMG model and the inertial model.

Topology: conv1d (valid, stride 1, ReLU) -> layer norm over the filter axis
per time step -> batch norm per filter -> max-pool over time -> dropout ->
flatten -> dense+ReLU -> dense -> softmax.  Forward inference here always
uses the stored batch-norm moving statistics; the training engine keeps its
own batched forward with batch statistics (see train.py).

Weights serialize to a little-endian binary file: magic ``MECW``, format
version, spec header, tensors as float32 in canonical order, and a trailing
CRC32.  The format is a bit-exact contract.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAYER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-3

WEIGHT_MAGIC = b"MECW"
WEIGHT_VERSION = 1

# Serialization and update order. Moving statistics are not trainable.
TENSOR_ORDER = (
    "conv_w", "conv_b",
    "ln_gain", "ln_bias",
    "bn_gain", "bn_bias", "bn_mean", "bn_var",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
)
TRAINABLE_TENSORS = tuple(t for t in TENSOR_ORDER if t not in ("bn_mean", "bn_var"))


class ModelSpecError(ValueError):
    """Spec fields violate the architecture constraints."""


class ShapeMismatchError(ValueError):
    """Input or weight tensor shape disagrees with the owning spec."""


class NonFiniteWeightsError(ValueError):
    """A weight tensor holds NaN/Inf (or negative moving variance)."""


class WeightFileError(ValueError):
    """Base for weight-file parsing failures."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class ChecksumMismatchError(WeightFileError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Layer topology of one tiny CNN."""

    in_channels: int
    n_classes: int
    input_len: int = 100
    conv_filters: int = 3
    conv_kernel: int = 10
    pool: int = 5
    fc_hidden: int = 10
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.in_channels < 1:
            raise ModelSpecError("in_channels must be >= 1")
        if self.n_classes < 2:
            raise ModelSpecError("n_classes must be >= 2")
        if self.conv_filters < 1 or self.conv_kernel < 1:
            raise ModelSpecError("conv layer must have >= 1 filter and kernel")
        if self.fc_hidden < 1:
            raise ModelSpecError("fc_hidden must be >= 1")
        if self.pool < 1:
            raise ModelSpecError("pool must be >= 1")
        if self.input_len < self.conv_kernel:
            raise ModelSpecError("input_len must be >= conv_kernel")
        if self.conv_out_len < self.pool:
            raise ModelSpecError("conv output shorter than one pool step")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelSpecError("dropout_rate must be in [0, 1)")

    @property
    def conv_out_len(self) -> int:
        return self.input_len - self.conv_kernel + 1

    @property
    def pool_out_len(self) -> int:
        return self.conv_out_len // self.pool

    @property
    def flatten_len(self) -> int:
        return self.pool_out_len * self.conv_filters

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        f = self.conv_filters
        return {
            "conv_w": (self.conv_kernel, self.in_channels, f),
            "conv_b": (f,),
            "ln_gain": (f,),
            "ln_bias": (f,),
            "bn_gain": (f,),
            "bn_bias": (f,),
            "bn_mean": (f,),
            "bn_var": (f,),
            "fc1_w": (self.flatten_len, self.fc_hidden),
            "fc1_b": (self.fc_hidden,),
            "fc2_w": (self.fc_hidden, self.n_classes),
            "fc2_b": (self.n_classes,),
        }


def mmg_spec(input_len: int = 100) -> ModelSpec:
    """Stage-1 spec: 4 MMG channels, binary null/activity output."""
    return ModelSpec(in_channels=4, n_classes=2, input_len=input_len)


def inertial_spec(n_classes: int, input_len: int = 100) -> ModelSpec:
    """Stage-2 spec: 7 inertial channels, n_classes activity outputs."""
    return ModelSpec(in_channels=7, n_classes=n_classes, input_len=input_len)


def param_count(spec: ModelSpec) -> int:
    """Exact count of trainable scalars (moving statistics excluded)."""
    shapes = spec.tensor_shapes()
    return sum(int(np.prod(shapes[name])) for name in TRAINABLE_TENSORS)


@dataclass
class ModelWeights:
    """Per-layer tensors, float64 in memory, float32 on disk."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.tensors.items()})

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ModelWeights":
        return cls({k: np.zeros(s) for k, s in spec.tensor_shapes().items()})

    @classmethod
    def initial(cls, spec: ModelSpec, rng: np.random.Generator) -> "ModelWeights":
        """He-style random init; norm gains 1, moving variance 1."""
        shapes = spec.tensor_shapes()
        w = cls.zeros(spec)
        w["conv_w"] = rng.normal(
            0.0, np.sqrt(2.0 / (spec.conv_kernel * spec.in_channels)), shapes["conv_w"]
        )
        w["fc1_w"] = rng.normal(0.0, np.sqrt(2.0 / spec.flatten_len), shapes["fc1_w"])
        w["fc2_w"] = rng.normal(0.0, np.sqrt(2.0 / spec.fc_hidden), shapes["fc2_w"])
        w["ln_gain"] = np.ones(shapes["ln_gain"])
        w["bn_gain"] = np.ones(shapes["bn_gain"])
        w["bn_var"] = np.ones(shapes["bn_var"])
        return w

    def validate(self, spec: ModelSpec) -> None:
        shapes = spec.tensor_shapes()
        for name, shape in shapes.items():
            if name not in self.tensors:
                raise ShapeMismatchError(f"missing tensor {name}")
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(
                    f"{name}: expected {shape}, got {self.tensors[name].shape}"
                )
        for name in shapes:
            if not np.all(np.isfinite(self.tensors[name])):
                raise NonFiniteWeightsError(f"non-finite values in {name}")
        if np.any(self.tensors["bn_var"] < 0):
            raise NonFiniteWeightsError("negative moving variance")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid-padding conv1d; x is (..., T, C), w is (K, C, F)."""
    kernel = w.shape[0]
    xw = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=-2)
    # xw: (..., T-K+1, C, K)
    return np.einsum("...ck,kcf->...f", xw, w) + b


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + LAYER_NORM_EPS) + bias


def _max_pool(x: np.ndarray, pool: int) -> np.ndarray:
    t = x.shape[-2]
    out_t = t // pool
    trimmed = x[..., : out_t * pool, :]
    shaped = trimmed.reshape(*x.shape[:-2], out_t, pool, x.shape[-1])
    return shaped.max(axis=-2)


def forward(spec: ModelSpec, weights: ModelWeights, window: np.ndarray,
            mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Run one window through the network; returns the softmax vector.

    `mode` is "infer" (deterministic) or "train" (inverted dropout with the
    supplied rng).  Batch norm always uses the stored moving statistics
    here.  Output entries are positive and sum to 1 within 1e-12.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.shape != (spec.input_len, spec.in_channels):
        raise ShapeMismatchError(
            f"window shape {x.shape} != {(spec.input_len, spec.in_channels)}"
        )
    weights.validate(spec)
    if mode not in ("infer", "train"):
        raise ValueError(f"unknown mode {mode!r}")

    z = _conv_valid(x, weights["conv_w"], weights["conv_b"])
    z = np.maximum(z, 0.0)
    z = _layer_norm(z, weights["ln_gain"], weights["ln_bias"])
    z = (z - weights["bn_mean"]) / np.sqrt(weights["bn_var"] + BATCH_NORM_EPS)
    z = weights["bn_gain"] * z + weights["bn_bias"]
    z = _max_pool(z, spec.pool)
    if mode == "train" and spec.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        keep = rng.random(z.shape) >= spec.dropout_rate
        z = z * keep / (1.0 - spec.dropout_rate)
    flat = z.reshape(-1)
    h = np.maximum(flat @ weights["fc1_w"] + weights["fc1_b"], 0.0)
    logits = h @ weights["fc2_w"] + weights["fc2_b"]
    return _softmax(logits)


def forward_batch(spec: ModelSpec, weights: ModelWeights, windows: np.ndarray) -> np.ndarray:
    """Inference-mode forward over a (N, input_len, in_channels) batch."""
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (spec.input_len, spec.in_channels):
        raise ShapeMismatchError(
            f"batch shape {x.shape} != (N, {spec.input_len}, {spec.in_channels})"
        )
    weights.validate(spec)
    z = _conv_valid(x, weights["conv_w"], weights["conv_b"])
    z = np.maximum(z, 0.0)
    z = _layer_norm(z, weights["ln_gain"], weights["ln_bias"])
    z = (z - weights["bn_mean"]) / np.sqrt(weights["bn_var"] + BATCH_NORM_EPS)
    z = weights["bn_gain"] * z + weights["bn_bias"]
    z = _max_pool(z, spec.pool)
    flat = z.reshape(z.shape[0], -1)
    h = np.maximum(flat @ weights["fc1_w"] + weights["fc1_b"], 0.0)
    logits = h @ weights["fc2_w"] + weights["fc2_b"]
    return _softmax(logits)


_HEADER_FMT = "<4sI7If"  # magic, version, 7 spec ints, dropout rate


def save_weights(spec: ModelSpec, weights: ModelWeights, path) -> None:
    """Write the bit-exact binary weight file (float32 payload + CRC32)."""
    weights.validate(spec)
    header = struct.pack(
        _HEADER_FMT,
        WEIGHT_MAGIC,
        WEIGHT_VERSION,
        spec.input_len,
        spec.in_channels,
        spec.conv_filters,
        spec.conv_kernel,
        spec.pool,
        spec.fc_hidden,
        spec.n_classes,
        spec.dropout_rate,
    )
    payload = b"".join(
        np.ascontiguousarray(weights[name], dtype="<f4").tobytes()
        for name in TENSOR_ORDER
    )
    body = header + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_weights(path) -> tuple[ModelSpec, ModelWeights]:
    """Parse a weight file back into (spec, weights); weights are float64."""
    data = Path(path).read_bytes()
    header_size = struct.calcsize(_HEADER_FMT)
    if len(data) < 4 or data[:4] != WEIGHT_MAGIC:
        raise BadMagicError("not a weight file (bad magic)")
    if len(data) < header_size + 4:
        raise ChecksumMismatchError("file truncated")
    crc_stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatchError("checksum mismatch (corrupt or truncated file)")
    fields = struct.unpack(_HEADER_FMT, data[:header_size])
    version = fields[1]
    if version != WEIGHT_VERSION:
        raise VersionMismatchError(f"format version {version} != {WEIGHT_VERSION}")
    try:
        spec = ModelSpec(
            input_len=fields[2],
            in_channels=fields[3],
            conv_filters=fields[4],
            conv_kernel=fields[5],
            pool=fields[6],
            fc_hidden=fields[7],
            n_classes=fields[8],
            dropout_rate=round(float(fields[9]), 6),
        )
    except ModelSpecError as exc:
        raise WeightFileError(f"invalid spec in header: {exc}") from exc
    shapes = spec.tensor_shapes()
    expected = sum(int(np.prod(s)) for s in shapes.values()) * 4
    buf = data[header_size:-4]
    if len(buf) != expected:
        raise ShapeMismatchError(
            f"payload is {len(buf)} bytes, spec requires {expected}"
        )
    weights = ModelWeights()
    offset = 0
    for name in TENSOR_ORDER:
        count = int(np.prod(shapes[name]))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
        weights[name] = arr.astype(np.float64).reshape(shapes[name])
        offset += count * 4
    weights.validate(spec)
    return spec, weights


def quantize_like_saved(weights: ModelWeights) -> ModelWeights:
    """Round tensors to float32-representable values (lossless save/load)."""
    return ModelWeights(
        {k: v.astype(np.float32).astype(np.float64) for k, v in weights.tensors.items()}
    )


def inspect_weights(path) -> dict:
    """Summary of a weight file for the CLI inspector."""
    spec, weights = load_weights(path)
    size = Path(path).stat().st_size
    return {
        "path": str(path),
        "file_bytes": size,
        "input_len": spec.input_len,
        "in_channels": spec.in_channels,
        "conv_filters": spec.conv_filters,
        "conv_kernel": spec.conv_kernel,
        "pool": spec.pool,
        "fc_hidden": spec.fc_hidden,
        "n_classes": spec.n_classes,
        "dropout_rate": spec.dropout_rate,
        "param_count": param_count(spec),
        "tensors": {
            name: {
                "shape": list(weights[name].shape),
                "min": float(weights[name].min()),
                "max": float(weights[name].max()),
            }
            for name in TENSOR_ORDER
        },
    }
