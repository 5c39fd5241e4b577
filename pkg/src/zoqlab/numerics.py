"""Deterministic float64 tensor arithmetic and counter-based Gaussian streams.

Tensors are plain C-contiguous ``numpy.ndarray`` objects with dtype float64;
every public operation in the package preserves that representation. Random
draws come from Philox counter streams keyed by ``(seed, stream_id)``, so any
slice of a stream can be regenerated from ``(seed, stream_id, position)``
without storing the values. That regenerability is what keeps the
zeroth-order optimizer state O(1) in the model size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .errors import DataError, DimensionError

Tensor = np.ndarray

# Philox advance() moves in blocks of four 64-bit draws; _PHILOX_BLOCK converts
# a single-draw position into (block, offset-within-block).
_PHILOX_BLOCK = 4

_TENSOR_MAGIC = b"ZQLB-TNS"  # 8 bytes, followed by u32 version + u32 reserved
_TENSOR_VERSION = 1


def as_tensor(x) -> Tensor:
    """Coerce input to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def require_finite(x: Tensor, context: str) -> Tensor:
    if not np.all(np.isfinite(x)):
        from .errors import NumericError

        raise NumericError(f"non-finite values in {context}")
    return x


# ---------------------------------------------------------------------------
# Matrix product
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors.

    Delegates to numpy's GEMM, which is run-to-run deterministic on a fixed
    platform; the test suite pins its output against a naive triple-loop
    oracle.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


# ---------------------------------------------------------------------------
# Counter-based Gaussian streams
# ---------------------------------------------------------------------------

@dataclass
class RngStream:
    """A replayable Gaussian stream addressed by (seed, stream_id, position).

    Identical (seed, stream_id) pairs produce identical sequences on every
    platform; distinct stream_ids are statistically independent Philox
    counter streams. ``position`` counts individual draws.
    """

    seed: int
    stream_id: int = 0
    position: int = 0

    def gaussian(self, n: int) -> Tensor:
        out = normals_at(self.seed, self.stream_id, self.position, n)
        self.position += int(n)
        return out

    def uniform(self, n: int) -> Tensor:
        out = uniforms_at(self.seed, self.stream_id, self.position, n)
        self.position += int(n)
        return out

    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream_id, self.position)


def gaussian(stream: RngStream, n: int) -> Tensor:
    """Draw n i.i.d. standard normals, advancing the stream by n."""
    if n < 1:
        raise DataError(f"gaussian draw count must be >= 1, got {n}")
    return stream.gaussian(n)


def raw_draws_at(seed: int, stream_id: int, position: int, n: int) -> np.ndarray:
    """Uint64 draws [position, position + n) of the given Philox stream."""
    block, offset = divmod(int(position), _PHILOX_BLOCK)
    bg = Philox(key=np.array([seed, stream_id], dtype=np.uint64))
    if block:
        bg.advance(block)
    vals = Generator(bg).integers(0, 2**64, size=offset + int(n), dtype=np.uint64, endpoint=False)
    return vals[offset:]


def uniforms_at(seed: int, stream_id: int, position: int, n: int) -> Tensor:
    """Uniform(0, 1) draws; one 64-bit draw per value, endpoints excluded."""
    raw = raw_draws_at(seed, stream_id, position, n)
    # top 53 bits, centered into the open interval so ndtri stays finite
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals_at(seed: int, stream_id: int, position: int, n: int) -> Tensor:
    """Standard normal draws [position, position + n) via inverse CDF.

    The inverse-CDF map consumes exactly one 64-bit draw per normal, which
    keeps position accounting exact under chunked regeneration.
    """
    return ndtri(uniforms_at(seed, stream_id, position, n))


# ---------------------------------------------------------------------------
# Granularity and grouped reductions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Granularity:
    """Describes how a tensor is tiled into quantization groups.

    kind:
      per_tensor  -- one group covering everything
      per_channel -- one group per index of ``axis``
      per_token   -- one group per row, features on the last axis
      per_group   -- contiguous chunks of ``group_size`` along ``axis``
    """

    kind: str
    axis: int = 0
    group_size: int = 0

    _KINDS = ("per_tensor", "per_channel", "per_token", "per_group")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise DataError(f"unknown granularity kind {self.kind!r}")
        if self.kind == "per_group" and self.group_size < 1:
            raise DataError("per_group granularity requires group_size >= 1")


def per_tensor() -> Granularity:
    return Granularity("per_tensor")


def per_channel(axis: int) -> Granularity:
    return Granularity("per_channel", axis=axis)


def per_token() -> Granularity:
    return Granularity("per_token")


def per_group(axis: int, group_size: int) -> Granularity:
    return Granularity("per_group", axis=axis, group_size=group_size)


def _check_axis(shape: tuple[int, ...], axis: int) -> int:
    if not -len(shape) <= axis < len(shape):
        raise DimensionError(f"axis {axis} out of range for shape {shape}")
    return axis % len(shape)


def to_groups(x: Tensor, gran: Granularity) -> Tensor:
    """Reshape x into a (n_groups, elems_per_group) matrix.

    Groups tile the tensor exactly; ``from_groups`` is the inverse.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot group an empty tensor")
    if gran.kind == "per_tensor":
        return x.reshape(1, -1)
    if gran.kind == "per_token":
        if x.ndim < 2:
            raise DimensionError(f"per_token needs >= 2-D input, got shape {x.shape}")
        return x.reshape(-1, x.shape[-1])
    if gran.kind == "per_channel":
        ax = _check_axis(x.shape, gran.axis)
        return np.moveaxis(x, ax, 0).reshape(x.shape[ax], -1)
    # per_group
    ax = _check_axis(x.shape, gran.axis)
    if x.shape[ax] % gran.group_size != 0:
        raise DimensionError(
            f"group size {gran.group_size} does not divide axis length {x.shape[ax]}"
        )
    return np.moveaxis(x, ax, -1).reshape(-1, gran.group_size)


def from_groups(g: Tensor, shape: tuple[int, ...], gran: Granularity) -> Tensor:
    """Inverse of ``to_groups`` for a tensor of the given shape."""
    if gran.kind in ("per_tensor", "per_token"):
        return g.reshape(shape)
    ax = _check_axis(shape, gran.axis)
    if gran.kind == "per_channel":
        moved = tuple(np.moveaxis(np.empty(shape), ax, 0).shape)
        return np.moveaxis(g.reshape(moved), 0, ax)
    moved = tuple(np.moveaxis(np.empty(shape), ax, -1).shape)
    return np.ascontiguousarray(np.moveaxis(g.reshape(moved), -1, ax))


def group_count(shape: tuple[int, ...], gran: Granularity) -> int:
    if gran.kind == "per_tensor":
        return 1
    if gran.kind == "per_token":
        return int(np.prod(shape[:-1]))
    ax = _check_axis(shape, gran.axis)
    if gran.kind == "per_channel":
        return shape[ax]
    if shape[ax] % gran.group_size != 0:
        raise DimensionError(
            f"group size {gran.group_size} does not divide axis length {shape[ax]}"
        )
    return int(np.prod(shape)) // gran.group_size


@dataclass
class GroupStats:
    """(min, max, absmax) per group, ordered the way to_groups orders them."""

    mins: Tensor
    maxs: Tensor
    absmaxs: Tensor

    def __iter__(self):
        return iter(zip(self.mins, self.maxs, self.absmaxs))


def reduce_stats(x: Tensor, gran: Granularity) -> GroupStats:
    """Per-group (min, max, absmax) under the given granularity."""
    g = to_groups(x, gran)
    mins = g.min(axis=1)
    maxs = g.max(axis=1)
    return GroupStats(mins=mins, maxs=maxs, absmaxs=np.maximum(np.abs(mins), np.abs(maxs)))


# ---------------------------------------------------------------------------
# Tensor container serialization
# ---------------------------------------------------------------------------

def write_tensor(f, x: Tensor) -> None:
    """Write one tensor container: 16-byte header, u64 rank, u64 dims, f64 data.

    All integers and reals are little-endian.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    f.write(_TENSOR_MAGIC)
    f.write(struct.pack("<II", _TENSOR_VERSION, 0))
    f.write(struct.pack("<Q", x.ndim))
    for d in x.shape:
        f.write(struct.pack("<Q", d))
    f.write(x.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(f) -> Tensor:
    header = f.read(16)
    if len(header) != 16 or header[:8] != _TENSOR_MAGIC:
        raise DataError("not a tensor container (bad magic)")
    version, _ = struct.unpack("<II", header[8:])
    if version != _TENSOR_VERSION:
        raise DataError(f"unsupported tensor container version {version}")
    (rank,) = struct.unpack("<Q", f.read(8))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8", count=count)
    return np.ascontiguousarray(data.reshape(shape))


def save_tensor(path, x: Tensor) -> None:
    with open(path, "wb") as f:
        write_tensor(f, x)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return read_tensor(f)
