"""Winograd convolution: float, fake-quant and integer pipelines.

Layouts used between stages (P = N * tiles_h * tiles_w, t = tap index)::

    input tiles      (P, C, n, n)
    X  (input dom.)  (n*n, P, C)      grouped along C for the Hadamard GEMMs
    W  (weight dom.) (n*n, C, K)      grouped along C, packed per tap offline
    Y  (output dom.) (n*n, P, K)
    output tiles     (P, K, m, m)

Quantized stages (8-bit activations, transform matrices per-row 8-bit)::

    T  = B^T x      x grouped per tile column, B^T per row
    X  = T B        T requantized per tile row
    Y  = X (.) W    per tap: (P x C) @ (C x K), groups along C
    U  = A^T Y      Y grouped per tile column
    y  = U A        U requantized per tile row

Every quantization group runs along the reduction dimension of the GEMM
that consumes it, so every stage is an integer GEMM with int32
accumulation.  Stage outputs are rounded to float32 before the next
dynamic min-max quantization.  The integer path and the fake-quant path
share those quantizers and differ only in how each stage's GEMM is
evaluated (int32 accumulation plus scale products, or float64 products of
dequantized operands).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conv_ref import ConvShape, check_operands
from .errors import ComputeError, InvalidShape, InvalidSpec, UndefinedMetric
from .kernels import DEFAULT_VECTOR_WIDTH, gemm_q8_batched, pack_batched
from .quantizer import GroupQuantized, GroupSpec, dequantize_array, quantize_array, quantize_last
from .tensor import Tensor
from .transforms import WinogradTransform

MODES = ("fp", "fake_quant", "int8")


@dataclass(frozen=True)
class WinoPlan:
    transform: WinogradTransform
    shape: ConvShape
    tiles_h: int
    tiles_w: int

    @property
    def m(self) -> int:
        return self.transform.m

    @property
    def n(self) -> int:
        return self.transform.n

    @property
    def tiles(self) -> int:
        return self.shape.n * self.tiles_h * self.tiles_w


def make_plan(t: WinogradTransform, shape: ConvShape) -> WinoPlan:
    if shape.r != t.r:
        raise InvalidShape(f"filter size {shape.r} does not match transform r={t.r}")
    return WinoPlan(t, shape, -(-shape.h_out // t.m), -(-shape.w_out // t.m))


@dataclass(frozen=True, eq=False)
class WinoDomainTensor:
    """Winograd-domain values, one (rows x channels) matrix per tap.

    ``values`` is float, shaped (n*n, rows, channels); ``quant`` (if set)
    holds the same data group-quantized along ``group_axis``.
    """

    n: int
    values: Optional[np.ndarray] = None
    quant: Optional[GroupQuantized] = None

    @property
    def taps(self) -> int:
        return self.n * self.n

    def dense(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        return dequantize_array(self.quant)


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise ComputeError(f"{what} contains NaN or Inf")


def tile_input(x: np.ndarray, plan: WinoPlan) -> np.ndarray:
    """Overlapping (n x n) input tiles with stride m, zero-padded at the edges."""
    s, m, n = plan.shape, plan.m, plan.n
    p = s.padding
    hp = plan.tiles_h * m + n - m
    wp = plan.tiles_w * m + n - m
    xp = np.zeros((s.n, s.c_in, hp, wp), dtype=x.dtype)
    h_copy = min(s.h, hp - p)
    w_copy = min(s.w, wp - p)
    xp[:, :, p:p + h_copy, p:p + w_copy] = x[:, :, :h_copy, :w_copy]
    win = sliding_window_view(xp, (n, n), axis=(2, 3))[:, :, ::m, ::m]  # N,C,th,tw,n,n
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(plan.tiles, s.c_in, n, n)


def untile_output(yt: np.ndarray, plan: WinoPlan) -> np.ndarray:
    """(P, K, m, m) output tiles back to N, K, H', W' with the overhang stripped."""
    s, m = plan.shape, plan.m
    k = yt.shape[1]
    y = yt.reshape(s.n, plan.tiles_h, plan.tiles_w, k, m, m).transpose(0, 3, 1, 4, 2, 5)
    y = y.reshape(s.n, k, plan.tiles_h * m, plan.tiles_w * m)
    return np.ascontiguousarray(y[:, :, : s.h_out, : s.w_out])


def taps_last(a: np.ndarray) -> np.ndarray:
    """(rows, ch, n, n) -> (n*n, rows, ch)."""
    rows, ch, n, _ = a.shape
    return np.ascontiguousarray(a.transpose(2, 3, 0, 1)).reshape(n * n, rows, ch)


def taps_first(a: np.ndarray, n: int) -> np.ndarray:
    """(n*n, rows, ch) -> (rows, ch, n, n)."""
    _, rows, ch = a.shape
    return np.ascontiguousarray(a.reshape(n, n, rows, ch).transpose(2, 3, 0, 1))


# ---------------------------------------------------------------- weights

def weight_transform(w, t: WinogradTransform) -> WinoDomainTensor:
    """``G w G^T`` per (k, c) in float64, stored as float32, shaped (n*n, C, K)."""
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    if w.ndim != 4 or w.shape[2:] != (t.r, t.r):
        raise InvalidShape(f"weights {w.shape} do not match r={t.r}")
    W = np.einsum("ia,kcab,jb->ijck", t.g, w.astype(np.float64), t.g, optimize=True)
    return WinoDomainTensor(t.n, values=W.reshape(t.n * t.n, w.shape[1], w.shape[0]).astype(np.float32))


def quantize_weights(Wd: WinoDomainTensor, group_size: int, bits: int = 8) -> WinoDomainTensor:
    vals = Wd.values
    GroupSpec(group_size, 1).validate(vals.shape[1])
    return WinoDomainTensor(Wd.n, values=vals, quant=quantize_array(vals, 1, group_size, bits))


# ---------------------------------------------------------------- quantized transform GEMMs

def quantize_matrix_rows(mat: np.ndarray):
    """Per-row 8-bit quantization of a small transform matrix: (ints, scales[:, 0])."""
    q, s = quantize_last(np.asarray(mat, dtype=np.float64), 8)
    return q, s[:, 0]


def _left_gemm(mq, ms, z, integer: bool) -> np.ndarray:
    """``M @ Z`` per tile: M (a x b) per-row quantized, Z (..., b, c) quantized per column."""
    zq, zs = quantize_last(np.swapaxes(z, -1, -2), 8)
    zq = np.swapaxes(zq, -1, -2)  # (..., b, c), groups along b
    zs = np.swapaxes(zs, -1, -2).astype(np.float64)  # (..., 1, c)
    ms = ms.astype(np.float64)[:, None]
    if integer:
        acc = np.matmul(mq.astype(np.int32), zq.astype(np.int32))
        out = acc.astype(np.float64) * (ms * zs)
    else:
        out = np.matmul(mq * ms, zq * zs)
    return out.astype(np.float32)


def _right_gemm(z, mq, ms, integer: bool) -> np.ndarray:
    """``Z @ M^T`` per tile: Z (..., a, b) quantized per row, M (c x b) per-row quantized."""
    zq, zs = quantize_last(z, 8)  # (..., a, b), (..., a, 1)
    zs = zs.astype(np.float64)
    ms = ms.astype(np.float64)
    if integer:
        acc = np.matmul(zq.astype(np.int32), mq.T.astype(np.int32))
        out = acc.astype(np.float64) * (zs * ms)
    else:
        out = np.matmul(zq * zs, (mq * ms[:, None]).T)
    return out.astype(np.float32)


def input_transform_fp(tiles: np.ndarray, t: WinogradTransform, dtype=np.float64) -> np.ndarray:
    bt = t.b_t.astype(dtype)
    X = np.matmul(np.matmul(bt, tiles.astype(dtype)), bt.T)
    return taps_last(X)


def input_transform_q(tiles: np.ndarray, t: WinogradTransform, spec: GroupSpec,
                      integer: bool = True) -> WinoDomainTensor:
    """``B^T x B`` with both GEMMs quantized; result grouped along C.

    Returns a tensor shaped (n*n, P, C) whose ``values`` are the float32
    stage output and ``quant`` its grouping for the Hadamard GEMMs.
    """
    _require_finite(tiles, "input")
    bq, bs = quantize_matrix_rows(t.b_t)
    T = _left_gemm(bq, bs, tiles.astype(np.float32), integer)
    X = _right_gemm(T, bq, bs, integer)
    Xt = taps_last(X)
    GroupSpec(spec.group_size, 2).validate(Xt.shape[2])
    return WinoDomainTensor(t.n, values=Xt, quant=quantize_array(Xt, 2, spec.group_size, 8))


class PackedTapWeights:
    """Per-tap (C x K) weight matrices, quantized along C and packed offline."""

    def __init__(self, Wq: WinoDomainTensor, vector_width: int = DEFAULT_VECTOR_WIDTH):
        q = Wq.quant
        self.n = Wq.n
        self.k = q.dims[2]
        self.group_size = q.spec.group_size
        self.quant = q
        self.packed = pack_batched(q.ints, q.scales, self.group_size, vector_width)


def hadamard_q(Xq: WinoDomainTensor, Wq, integer: bool = True) -> WinoDomainTensor:
    """Per-tap ``X_t @ W_t`` with group-wise scales; returns float32 values (n*n, P, K)."""
    packed = Wq if isinstance(Wq, PackedTapWeights) else None
    wquant = packed.quant if packed else Wq.quant
    xquant = Xq.quant
    if xquant.spec.group_size != wquant.spec.group_size or xquant.ints.shape[2] != wquant.ints.shape[1]:
        raise InvalidSpec("activation and weight grouping differ along C")
    if xquant.ints.shape[0] != wquant.ints.shape[0]:
        raise InvalidShape("tap counts differ")
    k = wquant.dims[2]
    if integer:
        if packed is None:
            packed = PackedTapWeights(Wq)
        Y = gemm_q8_batched(xquant.ints, xquant.scales, packed.packed, k)
    else:
        Y = np.matmul(dequantize_array(xquant), dequantize_array(wquant)).astype(np.float32)
    return WinoDomainTensor(Xq.n, values=Y)


def output_transform_q(Yq: WinoDomainTensor, t: WinogradTransform, plan: WinoPlan,
                       integer: bool = True) -> np.ndarray:
    """``A^T Y A`` with both GEMMs quantized, untiled to N, K, H', W'."""
    Y = taps_first(Yq.dense().astype(np.float32), t.n)
    _require_finite(Y, "Winograd-domain output")
    aq, as_ = quantize_matrix_rows(t.a_t)
    U = _left_gemm(aq, as_, Y, integer)
    yt = _right_gemm(U, aq, as_, integer)
    return untile_output(yt, plan)


def output_transform_fp(Y: np.ndarray, t: WinogradTransform, plan: WinoPlan, dtype=np.float64) -> np.ndarray:
    at = t.a_t.astype(dtype)
    yt = np.matmul(np.matmul(at, taps_first(Y.astype(dtype), t.n)), at.T)
    return untile_output(yt, plan)


# ---------------------------------------------------------------- full pipeline

def wino_conv_fp(x, w, t: WinogradTransform, padding: int = 1, dtype=np.float32) -> np.ndarray:
    """Unquantized Winograd convolution evaluated in ``dtype``."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    shape = ConvShape.infer(x, w, padding)
    plan = make_plan(t, shape)
    _require_finite(x, "input")
    g = t.g.astype(np.float64)
    W = np.einsum("ia,kcab,jb->ijck", g, w.astype(np.float64), g, optimize=True)
    W = W.reshape(t.n * t.n, shape.c_in, shape.c_out).astype(dtype)
    X = input_transform_fp(tile_input(x.astype(dtype), plan), t, dtype)
    Y = np.matmul(X, W)
    return output_transform_fp(Y, t, plan, dtype)


class WinoQ8Conv:
    """Fully quantized Winograd convolution with weights transformed and packed once.

    ``integer=False`` selects the fake-quant evaluation of the same pipeline.
    """

    def __init__(self, w, t: WinogradTransform, shape: ConvShape, group_size: int = 64,
                 bits: int = 8, integer: bool = True, vector_width: int = DEFAULT_VECTOR_WIDTH):
        w = w.data if isinstance(w, Tensor) else np.asarray(w)
        check_operands(np.empty((shape.n, shape.c_in, shape.h, shape.w), np.float32), w, shape)
        _require_finite(w, "weights")
        self.t = t
        self.shape = shape
        self.plan = make_plan(t, shape)
        self.spec = GroupSpec(group_size, 2)
        self.integer = integer
        self.Wq = quantize_weights(weight_transform(w, t), group_size, bits)
        self.packed = PackedTapWeights(self.Wq, vector_width) if integer else None
        self.last_Y = None

    def __call__(self, x, keep_domain: bool = False) -> np.ndarray:
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        check_operands(x, np.empty((self.shape.c_out, self.shape.c_in, 3, 3)), self.shape)
        tiles = tile_input(x.astype(np.float32), self.plan)
        Xq = input_transform_q(tiles, self.t, self.spec, self.integer)
        Y = hadamard_q(Xq, self.packed if self.integer else self.Wq, self.integer)
        if keep_domain:
            self.last_Y = Y
        return output_transform_q(Y, self.t, self.plan, self.integer)


def wino_conv(x, w, t: WinogradTransform, mode: str = "fp", group_size: int = 64,
              bits: int = 8, padding: int = 1) -> Tensor:
    """Winograd convolution in the requested fidelity (``fp``, ``fake_quant``, ``int8``)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    xa = x.data if isinstance(x, Tensor) else np.asarray(x)
    wa = w.data if isinstance(w, Tensor) else np.asarray(w)
    if mode == "fp":
        return Tensor(wino_conv_fp(xa, wa, t, padding))
    shape = ConvShape.infer(xa, wa, padding)
    conv = WinoQ8Conv(wa, t, shape, group_size, bits, integer=(mode == "int8"))
    return Tensor(conv(xa))


def winograd_domain_output(x, w, t: WinogradTransform, group_size: int = 64, bits: int = 8,
                           padding: int = 1, quantized: bool = True) -> WinoDomainTensor:
    """The Hadamard-stage output Y (before the output transform)."""
    xa = x.data if isinstance(x, Tensor) else np.asarray(x)
    wa = w.data if isinstance(w, Tensor) else np.asarray(w)
    shape = ConvShape.infer(xa, wa, padding)
    if not quantized:
        plan = make_plan(t, shape)
        X = input_transform_fp(tile_input(xa.astype(np.float64), plan), t)
        W = weight_transform(wa, t).values.astype(np.float64)
        return WinoDomainTensor(t.n, values=np.matmul(X, W))
    conv = WinoQ8Conv(wa, t, shape, group_size, bits, integer=False)
    conv(xa, keep_domain=True)
    return conv.last_Y


def tap_range_stats(Y: WinoDomainTensor) -> np.ndarray:
    """Per-tap std over (tiles x channels), divided by the mean of all tap stds."""
    vals = Y.dense().astype(np.float64)
    taps = vals.reshape(vals.shape[0], -1)
    if taps.shape[1] < 2:
        raise UndefinedMetric("need at least two samples per tap")
    std = taps.std(axis=1)
    mean = std.mean()
    rel = std / mean if mean > 0 else np.zeros_like(std)
    return rel.reshape(Y.n, Y.n)


def range_ratio(rel: np.ndarray) -> float:
    """max/min of a tap relative-std map (inf if some tap is constant)."""
    lo = float(rel.min())
    return float("inf") if lo == 0 else float(rel.max()) / lo
