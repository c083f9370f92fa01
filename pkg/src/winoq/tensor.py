"""Dense float32 tensors, portable seeded fills and the ``.wqt`` file format.

File layout (all little-endian)::

    offset 0   8 bytes   magic b"WINOQT01"
    offset 8   u32       rank (1..4)
    offset 12  rank*u64  extents, outermost first (N, C, H, W order)
    ...        f32       row-major payload, product(extents) values

Random fills never touch a platform RNG.  The bit source is Philox4x64-10
keyed with the 64-bit seed (high key word zero).  The 256-bit counter
starts at zero and is incremented before each block, so the first block is
computed at counter 1; each block yields four raw 64-bit words in order.
A word ``w`` becomes a double in [0, 1) as ``(w >> 11) * 2**-53``.
Gaussian values use the Box-Muller transform on consecutive word pairs
``(u1, u2)``::

    rho = sqrt(-2 * log(1 - u1))
    z0, z1 = rho * cos(2*pi*u2), rho * sin(2*pi*u2)

and are emitted in the order z0, z1, z0, z1, ...
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ComputeError, FormatError, InvalidShape

MAGIC = b"WINOQT01"
MAX_RANK = 4

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RngSpec:
    """Seeded fill description: ``kind`` is ``"gaussian"`` or ``"uniform"``.

    For gaussian fills ``a``/``b`` are mean and std, for uniform fills they
    are the lower and upper bounds.
    """

    kind: str = "gaussian"
    seed: int = 0
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown rng kind {self.kind!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.kind == "gaussian" and not self.b > 0:
            raise ValueError("gaussian std must be > 0")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform bounds need lo < hi")

    @classmethod
    def gaussian(cls, seed: int, mean: float = 0.0, std: float = 1.0) -> "RngSpec":
        return cls("gaussian", seed, mean, std)

    @classmethod
    def uniform(cls, seed: int, lo: float = -1.0, hi: float = 1.0) -> "RngSpec":
        return cls("uniform", seed, lo, hi)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "seed": int(self.seed), "mean": self.a, "std": self.b}
        return {"kind": "uniform", "seed": int(self.seed), "lo": self.a, "hi": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> "RngSpec":
        kind = d.get("kind", "gaussian")
        if kind == "gaussian":
            return cls("gaussian", int(d.get("seed", 0)), float(d.get("mean", 0.0)), float(d.get("std", 1.0)))
        if kind == "uniform":
            return cls("uniform", int(d.get("seed", 0)), float(d.get("lo", -1.0)), float(d.get("hi", 1.0)))
        raise ValueError(f"unknown rng kind {kind!r}")


def raw_words(seed: int, count: int) -> np.ndarray:
    """First ``count`` raw 64-bit words of the Philox stream for ``seed``."""
    bitgen = np.random.Philox(key=int(seed))
    return bitgen.random_raw(count)


def uniform01(seed: int, count: int) -> np.ndarray:
    return (raw_words(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def sample(spec: RngSpec, count: int) -> np.ndarray:
    """Draw ``count`` float64 values per ``spec``."""
    if spec.kind == "uniform":
        return spec.a + (spec.b - spec.a) * uniform01(spec.seed, count)
    pairs = (count + 1) // 2
    u = uniform01(spec.seed, 2 * pairs)
    rho = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    theta = 2.0 * math.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = rho * np.cos(theta)
    z[1::2] = rho * np.sin(theta)
    return spec.a + spec.b * z[:count]


def _check_dims(dims: Sequence[int]) -> tuple:
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK:
        raise InvalidShape(f"rank must be 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise InvalidShape(f"all extents must be >= 1, got {dims}")
    return dims


class Tensor:
    """Contiguous row-major float32 array with 1 to 4 extents."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        _check_dims(arr.shape)
        self.data = arr

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(dims={list(self.dims)})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.dims == other.dims and self.data.tobytes() == other.data.tobytes()

    __hash__ = None

    def numpy(self) -> np.ndarray:
        return self.data

    def require_finite(self, what: str = "tensor") -> "Tensor":
        if not np.isfinite(self.data).all():
            raise ComputeError(f"{what} contains NaN or Inf")
        return self


def tensor_new(dims: Sequence[int], fill="zeros") -> Tensor:
    """Create a tensor.

    ``fill`` is ``"zeros"``, a number (constant fill) or an :class:`RngSpec`.
    """
    dims = _check_dims(dims)
    count = math.prod(dims)
    if isinstance(fill, RngSpec):
        values = sample(fill, count).astype(np.float32)
    elif isinstance(fill, str):
        if fill != "zeros":
            raise ValueError(f"unknown fill {fill!r}")
        values = np.zeros(count, np.float32)
    else:
        values = np.full(count, fill, np.float32)
    return Tensor(values.reshape(dims))


def tensor_save(t: Tensor, path: PathLike) -> None:
    header = MAGIC + struct.pack("<I", len(t.dims)) + struct.pack(f"<{len(t.dims)}Q", *t.dims)
    payload = t.data.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def tensor_from_bytes(buf: bytes) -> Tensor:
    if len(buf) < 12:
        raise FormatError("file too short for a tensor header")
    if buf[:8] != MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}")
    (rank,) = struct.unpack_from("<I", buf, 8)
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"unsupported rank {rank}")
    head = 12 + 8 * rank
    if len(buf) < head:
        raise FormatError("truncated extent list")
    dims = struct.unpack_from(f"<{rank}Q", buf, 12)
    if any(d < 1 for d in dims):
        raise FormatError(f"zero extent in {dims}")
    count = 1
    for d in dims:
        count *= d
        if count * 4 > len(buf):
            raise FormatError("extents overflow the payload size")
    if len(buf) - head != 4 * count:
        raise FormatError(f"payload is {len(buf) - head} bytes, expected {4 * count}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=head)
    return Tensor(data.astype(np.float32).reshape(dims))


def tensor_load(path: PathLike) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())
