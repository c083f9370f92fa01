"""Group-wise quantized int8 GEMM kernels.

Both kernels compute, for ``a`` (M x K, groups along K) and ``b`` (K x N,
groups along K)::

    out[i, j] = f32( sum_g  f64(acc_g[i, j]) * (f64(sa[i, g]) * f64(sb[g, j])) )
    acc_g[i, j] = sum_{k in group g} int32(a[i, k]) * int32(b[k, j])

with the group sum running g = 0, 1, ... in order, starting from 0.0.  The
integer part is exact (``group_size * 127**2 < 2**31`` for every allowed
group size), and the scale application order is fixed, so the fast kernel
is bit-identical to the scalar one.

Packed weight layout (``PackedWeights.data``, shape ``(NB, G, gs, V)``):
element ``b[k, j]`` with ``g, kk = divmod(k, gs)`` and ``jb, v = divmod(j, V)``
lives at flat offset ``((jb * G + g) * gs + kk) * V + v``.  Each group of
``V`` adjacent lanes holds the same reduction index for ``V`` consecutive
output channels, so the inner loop is a lane-parallel multiply-accumulate
with no horizontal reduction.  Scales sit at ``(jb * G + g) * V + v`` of
``PackedWeights.scales``.  Output channels beyond N are zero-padded with
scale 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import InvalidShape, InvalidSpec
from .quantizer import GroupQuantized, GroupSpec
from .tensor import Tensor

DEFAULT_VECTOR_WIDTH = 16
ROW_BLOCK = 4


def check_no_overflow(group_size: int) -> None:
    if group_size * 127 * 127 >= 2**31:
        raise InvalidSpec(f"group_size {group_size} can overflow an int32 accumulator")


@nb.njit(cache=True)
def _scalar_kernel(a, sa, b, sb, gs):
    M, K = a.shape
    N = b.shape[1]
    G = K // gs
    out = np.empty((M, N), np.float32)
    for i in range(M):
        for j in range(N):
            total = 0.0
            for g in range(G):
                acc = np.int32(0)
                for kk in range(gs):
                    k = g * gs + kk
                    acc += np.int32(a[i, k]) * np.int32(b[k, j])
                total += np.float64(acc) * (np.float64(sa[i, g]) * np.float64(sb[g, j]))
            out[i, j] = np.float32(total)
    return out


@nb.njit(cache=True, parallel=True)
def _fast_kernel(a, sa, bp, sbp, n_out):
    # a: (T, M, K) int8; sa: (T, M, G); bp: (T, NB, G, gs, V); sbp: (T, NB, G, V)
    T, M, K = a.shape
    NB, G, gs, V = bp.shape[1], bp.shape[2], bp.shape[3], bp.shape[4]
    out = np.zeros((T, M, n_out), np.float32)
    for panel in nb.prange(T * NB):
        t = panel // NB
        jb = panel % NB
        acc = np.zeros((4, V), np.int32)
        tot = np.zeros((4, V), np.float64)
        for i0 in range(0, M, 4):
            rb = min(4, M - i0)
            tot[:, :] = 0.0
            for g in range(G):
                acc[:, :] = 0
                for kk in range(gs):
                    k = g * gs + kk
                    for r in range(rb):
                        av = np.int32(a[t, i0 + r, k])
                        for v in range(V):
                            acc[r, v] += av * np.int32(bp[t, jb, g, kk, v])
                for r in range(rb):
                    sar = np.float64(sa[t, i0 + r, g])
                    for v in range(V):
                        tot[r, v] += np.float64(acc[r, v]) * (sar * np.float64(sbp[t, jb, g, v]))
            for r in range(rb):
                for v in range(V):
                    j = jb * V + v
                    if j < n_out:
                        out[t, i0 + r, j] = np.float32(tot[r, v])
    return out


@dataclass(frozen=True, eq=False)
class PackedWeights:
    data: np.ndarray  # (NB, G, gs, V) int8
    scales: np.ndarray  # (NB, G, V) float32
    n: int  # real output channels
    k: int  # padded reduction extent
    group_size: int
    vector_width: int
    bits: int
    dims: tuple  # source dims of the unpacked weights

    def offset(self, k: int, j: int) -> int:
        g, kk = divmod(k, self.group_size)
        jb, v = divmod(j, self.vector_width)
        G = self.k // self.group_size
        return ((jb * G + g) * self.group_size + kk) * self.vector_width + v


def _pack_arrays(ints, scales, gs, V):
    """ints (..., K, N), scales (..., G, N) -> (..., NB, G, gs, V), (..., NB, G, V)."""
    *lead, K, N = ints.shape
    G = K // gs
    NB = -(-N // V)
    pad = NB * V - N
    if pad:
        ints = np.concatenate([ints, np.zeros(tuple(lead) + (K, pad), np.int8)], axis=-1)
        scales = np.concatenate([scales, np.ones(tuple(lead) + (G, pad), np.float32)], axis=-1)
    nl = len(lead)
    data = ints.reshape(tuple(lead) + (G, gs, NB, V))
    data = data.transpose(tuple(range(nl)) + (nl + 2, nl, nl + 1, nl + 3))
    sc = scales.reshape(tuple(lead) + (G, NB, V)).transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2))
    return np.ascontiguousarray(data), np.ascontiguousarray(sc, dtype=np.float32)


def pack_weights(wq: GroupQuantized, vector_width: int = DEFAULT_VECTOR_WIDTH) -> PackedWeights:
    """Reorder a K x N weight matrix (groups along K) into the lane layout."""
    if wq.ints.ndim != 2 or wq.axis != 0:
        raise InvalidSpec("pack_weights expects a 2-D matrix grouped along axis 0")
    if vector_width < 1:
        raise InvalidSpec("vector_width must be positive")
    gs = wq.spec.group_size
    data, sc = _pack_arrays(wq.ints.astype(np.int8), wq.scales, gs, vector_width)
    return PackedWeights(data, sc, wq.ints.shape[1], wq.ints.shape[0], gs, vector_width, wq.bits, wq.dims)


def unpack_weights(p: PackedWeights) -> GroupQuantized:
    NB, G, gs, V = p.data.shape
    ints = p.data.transpose(1, 2, 0, 3).reshape(G * gs, NB * V)[:, : p.n]
    scales = p.scales.transpose(1, 0, 2).reshape(G, NB * V)[:, : p.n]
    return GroupQuantized(
        np.ascontiguousarray(ints), np.ascontiguousarray(scales), GroupSpec(gs, 0), p.bits, p.dims
    )


def _check_pair(a: GroupQuantized, k: int, gs: int) -> None:
    if a.ints.ndim != 2 or a.axis != 1:
        raise InvalidSpec("left operand must be a 2-D matrix grouped along axis 1")
    if a.ints.shape[1] != k:
        raise InvalidShape(f"reduction extents differ: {a.ints.shape[1]} vs {k}")
    if a.spec.group_size != gs:
        raise InvalidSpec(f"group sizes differ: {a.spec.group_size} vs {gs}")
    check_no_overflow(gs)


def gemm_q8_scalar(a: GroupQuantized, b: GroupQuantized) -> Tensor:
    """Reference kernel: plain loops over the unpacked layout."""
    if b.ints.ndim != 2 or b.axis != 0:
        raise InvalidSpec("right operand must be a 2-D matrix grouped along axis 0")
    _check_pair(a, b.ints.shape[0], b.spec.group_size)
    out = _scalar_kernel(a.ints, a.scales, b.ints, b.scales, b.spec.group_size)
    return Tensor(out[: a.dims[0], : b.dims[1]])


def gemm_q8_fast(a: GroupQuantized, b: PackedWeights) -> Tensor:
    _check_pair(a, b.k, b.group_size)
    out = _fast_kernel(a.ints[None], a.scales[None], b.data[None], b.scales[None], b.n)[0]
    return Tensor(out[: a.dims[0], : b.dims[1]])


def pack_batched(ints: np.ndarray, scales: np.ndarray, group_size: int, vector_width: int = DEFAULT_VECTOR_WIDTH):
    """Pack a stack of K x N weight matrices; returns ``(data, scales)``."""
    return _pack_arrays(np.ascontiguousarray(ints, dtype=np.int8), scales, group_size, vector_width)


def gemm_q8_batched(a_ints, a_scales, packed, n_out: int) -> np.ndarray:
    """Independent fast GEMMs over a leading batch axis (one per Winograd tap).

    ``a_ints`` is (T, M, K) int8 grouped along K, ``a_scales`` (T, M, G);
    ``packed`` is the ``(data, scales)`` pair from :func:`pack_batched`.
    """
    data, sc = packed
    check_no_overflow(data.shape[3])
    return _fast_kernel(
        np.ascontiguousarray(a_ints, dtype=np.int8),
        np.ascontiguousarray(a_scales, dtype=np.float32),
        data, sc, n_out,
    )


def set_threads(n) -> int:
    """Set the kernel thread count (``None`` leaves it unchanged); returns the active count."""
    if n is not None:
        nb.set_num_threads(max(1, min(int(n), nb.config.NUMBA_NUM_THREADS)))
    return nb.get_num_threads()
