"""Group-wise symmetric uniform quantization.

Each group of ``group_size`` consecutive values along one axis gets its own
scale ``s = max|x| / c_max`` (stored as float32) and integers
``clamp(round_half_even(x / s), -c_max, c_max)``.  ``c_max`` is 127 for
8-bit and 7 for 4-bit; there is no zero point.  An all-zero group gets
``s = 1``.  The grouped axis is zero-padded up to a multiple of the group
size; padding quantizes to zero.

``x / s`` is evaluated in float64 with the float32 scale, and dequantized
values ``q * s`` are formed in float64, where they are exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import ComputeError, FormatError, InvalidShape, InvalidSpec, UndefinedMetric
from .tensor import Tensor

ALLOWED_GROUP_SIZES = (32, 64, 128, 256)
C_MAX = {8: 127, 4: 7}
SQNR_CAP_DB = 300.0
QMAGIC = b"WINOQQ01"


def c_max(bits: int) -> int:
    try:
        return C_MAX[bits]
    except KeyError:
        raise InvalidSpec(f"bits must be 8 or 4, got {bits}") from None


@dataclass(frozen=True)
class GroupSpec:
    group_size: int
    axis: int = -1

    def validate(self, reduction_extent: int) -> None:
        """Group sizes must be vector-friendly, or cover the whole reduction axis."""
        if self.group_size in ALLOWED_GROUP_SIZES or self.group_size == reduction_extent:
            return
        raise InvalidSpec(
            f"group_size {self.group_size} not in {ALLOWED_GROUP_SIZES} "
            f"and != reduction extent {reduction_extent}"
        )


@dataclass(frozen=True, eq=False)
class GroupQuantized:
    """Integer payload plus one float32 scale per group.

    ``ints`` has the source shape with ``spec.axis`` padded to a multiple of
    ``spec.group_size``; ``scales`` has the same shape except that axis holds
    one entry per group.  ``dims`` is the unpadded source shape.
    """

    ints: np.ndarray
    scales: np.ndarray
    spec: GroupSpec
    bits: int
    dims: tuple

    @property
    def axis(self) -> int:
        return self.spec.axis % self.ints.ndim

    @property
    def n_groups(self) -> int:
        return self.scales.shape[self.axis]


def _check_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise ComputeError("NaN or Inf in quantizer input")


def quantize_last(x: np.ndarray, bits: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Quantize along the last axis with one group per trailing vector.

    Returns ``(ints, scales)`` with ``scales`` shaped ``x.shape[:-1] + (1,)``.
    This is the core of every other entry point.
    """
    cm = c_max(bits)
    x = np.asarray(x)
    _check_finite(x)
    amax = np.max(np.abs(x), axis=-1, keepdims=True).astype(np.float64)
    scale = (amax / cm).astype(np.float32)
    scale[amax == 0] = 1.0
    # a float32 scale can underflow to 0 for subnormal inputs
    scale[scale == 0] = np.float32(np.finfo(np.float32).smallest_subnormal)
    q = np.rint(x.astype(np.float64) / scale.astype(np.float64))
    np.clip(q, -cm, cm, out=q)
    return q.astype(np.int8), scale


def quantize_group(x, bits: int = 8) -> Tuple[np.ndarray, np.float32]:
    """Quantize one group; returns ``(ints, scale)``."""
    q, s = quantize_last(np.asarray(x, dtype=np.float64).ravel(), bits)
    return q, s[0]


def quantize_array(x: np.ndarray, axis: int, group_size: int, bits: int = 8) -> GroupQuantized:
    """Group-quantize ``x`` along ``axis`` without checking the group-size menu."""
    x = np.asarray(x)
    if group_size < 1:
        raise InvalidSpec("group_size must be positive")
    axis = axis % x.ndim
    moved = np.moveaxis(x, axis, -1)
    extent = moved.shape[-1]
    pad = (-extent) % group_size
    if pad:
        moved = np.concatenate([moved, np.zeros(moved.shape[:-1] + (pad,), moved.dtype)], axis=-1)
    grouped = moved.reshape(moved.shape[:-1] + (-1, group_size))
    q, s = quantize_last(grouped, bits)
    q = np.moveaxis(q.reshape(moved.shape), -1, axis)
    s = np.moveaxis(s[..., 0], -1, axis)
    return GroupQuantized(
        ints=np.ascontiguousarray(q), scales=np.ascontiguousarray(s),
        spec=GroupSpec(group_size, axis), bits=bits, dims=tuple(x.shape),
    )


def quantize_tensor(t, spec: GroupSpec, bits: int = 8) -> GroupQuantized:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    axis = spec.axis % arr.ndim
    spec.validate(arr.shape[axis])
    return quantize_array(arr, axis, spec.group_size, bits)


def expand_scales(q: GroupQuantized) -> np.ndarray:
    """Per-element float64 scales, aligned with ``q.ints``."""
    return np.repeat(q.scales.astype(np.float64), q.spec.group_size, axis=q.axis)


def dequantize_array(q: GroupQuantized) -> np.ndarray:
    """Exact float64 dequantization with padding stripped."""
    full = q.ints.astype(np.float64) * expand_scales(q)
    index = [slice(None)] * full.ndim
    index[q.axis] = slice(0, q.dims[q.axis])
    return full[tuple(index)]


def dequantize(q: GroupQuantized) -> Tensor:
    return Tensor(dequantize_array(q))


def fake_quant(x: np.ndarray, axis: int, group_size: int, bits: int = 8) -> np.ndarray:
    """Quantize-dequantize round trip (float64 result)."""
    return dequantize_array(quantize_array(x, axis, group_size, bits))


def _as_array(t) -> np.ndarray:
    return (t.data if isinstance(t, Tensor) else np.asarray(t)).astype(np.float64)


def sqnr(reference, test) -> float:
    """Signal-to-quantization-noise ratio in dB, capped at ``SQNR_CAP_DB``."""
    ref = _as_array(reference)
    tst = _as_array(test)
    if ref.shape != tst.shape:
        raise InvalidShape(f"sqnr shapes differ: {ref.shape} vs {tst.shape}")
    signal = float(np.sum(ref * ref))
    if signal == 0.0:
        raise UndefinedMetric("reference is all zeros")
    noise = float(np.sum((ref - tst) ** 2))
    if not np.isfinite(noise):
        raise UndefinedMetric("test contains non-finite values")
    if noise == 0.0:
        return SQNR_CAP_DB
    return min(SQNR_CAP_DB, 10.0 * np.log10(signal / noise))


# Serialized layout (little-endian): magic, u32 bits, u32 group_size,
# u32 axis, u32 rank, rank*u64 source dims, int8 payload (padded shape),
# f32 scales.
def qtensor_to_bytes(q: GroupQuantized) -> bytes:
    head = QMAGIC + struct.pack("<4I", q.bits, q.spec.group_size, q.axis, len(q.dims))
    head += struct.pack(f"<{len(q.dims)}Q", *q.dims)
    return head + q.ints.astype(np.int8).tobytes() + q.scales.astype("<f4").tobytes()


def qtensor_from_bytes(buf: bytes) -> GroupQuantized:
    if len(buf) < 24 or buf[:8] != QMAGIC:
        raise FormatError("not a quantized tensor file")
    bits, gs, axis, rank = struct.unpack_from("<4I", buf, 8)
    if bits not in C_MAX or gs < 1 or not 1 <= rank <= 4 or axis >= rank:
        raise FormatError("bad quantized tensor header")
    off = 24 + 8 * rank
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 24)
    if any(d < 1 for d in dims):
        raise FormatError("zero extent")
    padded = list(dims)
    padded[axis] += (-dims[axis]) % gs
    sdims = list(padded)
    sdims[axis] = padded[axis] // gs
    n_int = int(np.prod(padded, dtype=object))
    n_sc = int(np.prod(sdims, dtype=object))
    if len(buf) != off + n_int + 4 * n_sc:
        raise FormatError("payload size does not match header")
    ints = np.frombuffer(buf, np.int8, n_int, off).reshape(padded).copy()
    scales = np.frombuffer(buf, "<f4", n_sc, off + n_int).astype(np.float32).reshape(sdims)
    cm = C_MAX[bits]
    if np.abs(ints.astype(np.int16)).max(initial=0) > cm or not (np.isfinite(scales) & (scales > 0)).all():
        raise FormatError("payload violates quantization invariants")
    return GroupQuantized(ints, scales, GroupSpec(gs, axis), bits, tuple(dims))


def qtensor_save(q: GroupQuantized, path) -> None:
    Path(path).write_bytes(qtensor_to_bytes(q))


def qtensor_load(path) -> GroupQuantized:
    return qtensor_from_bytes(Path(path).read_bytes())
