"""FCN encoder, projection head, AE decoder and classifier head.

Parameters live in flat ``dict[str, Tensor]`` collections with dotted
names (``encoder.conv1.weight``, ``head.fc2.bias`` ...).  Linear weights
are stored as ``(in, out)`` so a layer is ``x @ W + b``; conv weights are
``(out, in, kernel)``.  Batch-norm running statistics are ordinary
non-trainable tensors in the same dict, which keeps serialization trivial.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from mixcl import autodiff as ad
from mixcl.autodiff import RunningStats, ShapeError, Tensor
from mixcl.rng import Rng, normal_sample

__all__ = [
    "FILTERS",
    "KERNELS",
    "REPR_DIM",
    "init_encoder",
    "init_projection_head",
    "init_decoder",
    "init_classifier",
    "he_normal_init",
    "fcn_encode",
    "project",
    "decode",
    "classify",
    "trainable",
    "select",
    "assign_weights",
    "save_weights",
    "load_weights",
    "WeightFormatError",
]

FILTERS = (128, 256, 128)
KERNELS = (8, 5, 3)
REPR_DIM = 128
HEAD_DIM = 128
DECODER_HIDDEN = 256

_STAT_SUFFIXES = (".running_mean", ".running_var", ".num_batches")

Params = dict[str, Tensor]


def _same_padding(k: int) -> tuple[int, int]:
    # even kernels put the extra zero on the right
    return ((k - 1) // 2, k // 2)


def _is_stat(name: str) -> bool:
    return name.endswith(_STAT_SUFFIXES)


def init_encoder(rng: Rng, in_channels: int) -> Params:
    """He-initialized three-block FCN encoder for ``in_channels`` inputs."""
    params: Params = {}
    cin = in_channels
    for i, (cout, k) in enumerate(zip(FILTERS, KERNELS), start=1):
        params[f"encoder.conv{i}.weight"] = Tensor(np.zeros((cout, cin, k)), requires_grad=True)
        params[f"encoder.conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        params[f"encoder.bn{i}.gamma"] = Tensor(np.ones(cout), requires_grad=True)
        params[f"encoder.bn{i}.beta"] = Tensor(np.zeros(cout), requires_grad=True)
        params[f"encoder.bn{i}.running_mean"] = Tensor(np.zeros(cout))
        params[f"encoder.bn{i}.running_var"] = Tensor(np.ones(cout))
        params[f"encoder.bn{i}.num_batches"] = Tensor(np.zeros(1))
        cin = cout
    return he_normal_init(rng, params)


def _linear(params: Params, prefix: str, fan_in: int, fan_out: int) -> None:
    params[f"{prefix}.weight"] = Tensor(np.zeros((fan_in, fan_out)), requires_grad=True)
    params[f"{prefix}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)


def init_projection_head(rng: Rng, dim: int = REPR_DIM) -> Params:
    params: Params = {}
    _linear(params, "head.fc1", dim, HEAD_DIM)
    _linear(params, "head.fc2", HEAD_DIM, HEAD_DIM)
    return he_normal_init(rng, params)


def init_decoder(rng: Rng, channels: int, length: int, dim: int = REPR_DIM) -> Params:
    params: Params = {}
    _linear(params, "decoder.fc1", dim, DECODER_HIDDEN)
    _linear(params, "decoder.fc2", DECODER_HIDDEN, channels * length)
    return he_normal_init(rng, params)


def init_classifier(rng: Rng, num_classes: int, dim: int = REPR_DIM) -> Params:
    params: Params = {}
    _linear(params, "classifier", dim, num_classes)
    return he_normal_init(rng, params)


def he_normal_init(rng: Rng, params: Params) -> Params:
    """Re-initialize every tensor of ``params`` in place and return it.

    Weights get N(0, 2/fan_in) with fan_in = Cin*K for conv kernels and
    the input width for linear layers.  Biases and BN shifts are zeroed,
    BN scales set to one and running statistics reset.
    """
    for name, p in params.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            fan_in = int(np.prod(p.shape[1:])) if p.ndim == 3 else p.shape[0]
            p.data[...] = normal_sample(rng, 0.0, np.sqrt(2.0 / fan_in), p.shape)
        elif leaf in ("gamma", "running_var"):
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0
        p.grad = None
    return params


def _stats(params: Params, block: int) -> RunningStats:
    prefix = f"encoder.bn{block}"
    return RunningStats(
        params[f"{prefix}.running_mean"].data,
        params[f"{prefix}.running_var"].data,
        params[f"{prefix}.num_batches"].data,
    )


def is_calibrated(params: Params) -> bool:
    """Whether every encoder batch-norm layer has running statistics."""
    return all(_stats(params, i).initialized for i in range(1, len(KERNELS) + 1))


def encoder_channels(params: Params) -> int:
    return params["encoder.conv1.weight"].shape[1]


def fcn_encode(params: Params, x, train: bool = True, update_stats: bool = True) -> Tensor:
    """Map an (N, C, T) batch to (N, 128) representations.

    conv -> batch norm -> ReLU three times, then global average pooling.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"encoder expects (N, C, T) input, got shape {x.shape}")
    cin = encoder_channels(params)
    if x.shape[1] != cin:
        raise ShapeError(f"encoder built for {cin} channels, input has {x.shape[1]}")
    if x.shape[2] < max(KERNELS):
        raise ShapeError(f"series length {x.shape[2]} is shorter than the largest kernel ({max(KERNELS)})")
    h = x
    for i, k in enumerate(KERNELS, start=1):
        h = ad.conv1d(h, params[f"encoder.conv{i}.weight"], params[f"encoder.conv{i}.bias"], padding=_same_padding(k))
        h = ad.batchnorm1d(
            h,
            params[f"encoder.bn{i}.gamma"],
            params[f"encoder.bn{i}.beta"],
            _stats(params, i),
            train=train,
            update_stats=update_stats,
        )
        h = ad.relu(h)
    return ad.global_avg_pool(h)


def _dense(params: Params, prefix: str, h: Tensor) -> Tensor:
    w = params[f"{prefix}.weight"]
    if h.ndim != 2 or h.shape[1] != w.shape[0]:
        raise ShapeError(f"{prefix} expects (N, {w.shape[0]}) input, got {h.shape}")
    return ad.matmul(h, w) + params[f"{prefix}.bias"]


def project(params: Params, h: Tensor) -> Tensor:
    """Projection head: linear -> ReLU -> linear."""
    return _dense(params, "head.fc2", ad.relu(_dense(params, "head.fc1", h)))


def decode(params: Params, h: Tensor, target_shape: tuple[int, int]) -> Tensor:
    c, t = target_shape
    out_dim = params["decoder.fc2.weight"].shape[1]
    if out_dim != c * t:
        raise ShapeError(f"decoder produces {out_dim} values per sample, target shape {target_shape} needs {c * t}")
    flat = _dense(params, "decoder.fc2", ad.relu(_dense(params, "decoder.fc1", h)))
    return flat.reshape(h.shape[0], c, t)


def classify(params: Params, h: Tensor) -> Tensor:
    return _dense(params, "classifier", h)


def trainable(params: Params) -> Params:
    return {name: p for name, p in params.items() if not _is_stat(name)}


def select(params: Params, prefix: str) -> Params:
    return {name: p for name, p in params.items() if name.startswith(prefix)}


def assign_weights(target: Params, source: Params, prefix: str = "encoder.") -> Params:
    """Copy every ``prefix`` tensor of ``source`` into ``target`` in place."""
    wanted = select(target, prefix)
    missing = sorted(set(wanted) - set(source))
    if missing:
        raise KeyError(f"weights lack tensors: {', '.join(missing)}")
    for name, p in wanted.items():
        if source[name].shape != p.shape:
            raise ShapeError(f"shape mismatch for {name}: model has {p.shape}, weights have {source[name].shape}")
    for name, p in wanted.items():
        p.data[...] = source[name].data
    return target


# ---------------------------------------------------------------------------
# weight files

MAGIC = b"MCLW"
FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    """A weight file is malformed."""


def save_weights(params: Params, path) -> None:
    """Write ``params`` in the little-endian MCLW container format."""
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, p in params.items():
        raw = name.encode("utf-8")
        data = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> Params:
    buf = Path(path).read_bytes()
    pos = 0

    def read(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFormatError(f"{path}: truncated while reading {what} at byte {pos}")
        out = buf[pos : pos + n]
        pos += n
        return out

    if read(4, "magic") != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, expected {MAGIC!r}")
    version, count = struct.unpack("<II", read(8, "header"))
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    params: Params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", read(2, "name length"))
        try:
            name = read(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"{path}: tensor name is not UTF-8") from exc
        (ndim,) = struct.unpack("<B", read(1, f"ndim of {name}"))
        dims = struct.unpack(f"<{ndim}I", read(4 * ndim, f"dims of {name}"))
        n = int(np.prod(dims)) if ndim else 1
        values = np.frombuffer(read(8 * n, f"values of {name}"), dtype="<f8").astype(np.float64)
        params[name] = Tensor(values.reshape(dims), requires_grad=not _is_stat(name), name=name)
    if pos != len(buf):
        raise WeightFormatError(f"{path}: {len(buf) - pos} trailing bytes after {count} tensors")
    return params
