"""Direct (im2col + GEMM) convolution in float64 and group-quantized int8.

im2col rows are output pixels in (n, i, j) order; columns are the
reduction index in (c, u, v) order, so quantization groups run along input
channels first and then filter taps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidShape, InvalidSpec
from .kernels import DEFAULT_VECTOR_WIDTH, PackedWeights, gemm_q8_fast, pack_weights
from .quantizer import GroupQuantized, GroupSpec, dequantize_array, quantize_array
from .tensor import Tensor


@dataclass(frozen=True)
class ConvShape:
    n: int
    c_in: int
    h: int
    w: int
    c_out: int
    r: int = 3
    padding: int = 1

    def __post_init__(self):
        if min(self.n, self.c_in, self.h, self.w, self.c_out) < 1:
            raise InvalidShape(f"extents must be >= 1: {self}")
        if self.r != 3:
            raise InvalidShape("only 3x3 filters are supported")
        if self.padding < 0:
            raise InvalidShape("padding must be >= 0")
        if self.h_out < 1 or self.w_out < 1:
            raise InvalidShape(f"empty output for {self}")

    @property
    def h_out(self) -> int:
        return self.h + 2 * self.padding - self.r + 1

    @property
    def w_out(self) -> int:
        return self.w + 2 * self.padding - self.r + 1

    @property
    def reduction(self) -> int:
        return self.c_in * self.r * self.r

    @classmethod
    def infer(cls, x, w, padding: int = 1) -> "ConvShape":
        x = _arr(x)
        w = _arr(w)
        if x.ndim != 4 or w.ndim != 4:
            raise InvalidShape("x must be N,C,H,W and w K,C,r,r")
        shape = cls(x.shape[0], x.shape[1], x.shape[2], x.shape[3], w.shape[0], w.shape[2], padding)
        check_operands(x, w, shape)
        return shape

    def to_dict(self) -> dict:
        return {"n": self.n, "c_in": self.c_in, "h": self.h, "w": self.w,
                "c_out": self.c_out, "r": self.r, "padding": self.padding}

    def macs(self) -> int:
        return self.n * self.c_out * self.h_out * self.w_out * self.reduction


def _arr(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def check_operands(x, w, shape: ConvShape) -> None:
    x = _arr(x)
    w = _arr(w)
    if x.shape != (shape.n, shape.c_in, shape.h, shape.w):
        raise InvalidShape(f"input {x.shape} does not match {shape}")
    if w.shape != (shape.c_out, shape.c_in, shape.r, shape.r):
        raise InvalidShape(f"weights {w.shape} do not match {shape}")


def im2col(x: np.ndarray, shape: ConvShape) -> np.ndarray:
    """(N*H'*W') x (C*r*r) patch matrix in the dtype of ``x``."""
    p = shape.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (shape.r, shape.r), axis=(2, 3))  # N,C,H',W',r,r
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        shape.n * shape.h_out * shape.w_out, shape.reduction
    )


def col2out(cols: np.ndarray, shape: ConvShape) -> np.ndarray:
    """(N*H'*W') x K rows back to N,K,H',W'."""
    return cols.reshape(shape.n, shape.h_out, shape.w_out, -1).transpose(0, 3, 1, 2)


def weight_matrix(w: np.ndarray) -> np.ndarray:
    """K,C,r,r filters as the (C*r*r) x K right-hand GEMM operand."""
    return w.reshape(w.shape[0], -1).T


def conv_direct_fp(x, w, shape: ConvShape = None) -> Tensor:
    """Cross-correlation with zero padding, stride 1, float64 accumulation."""
    return Tensor(conv_direct_f64(x, w, shape))


def conv_direct_f64(x, w, shape: ConvShape = None) -> np.ndarray:
    shape = shape or ConvShape.infer(x, w)
    check_operands(x, w, shape)
    x64 = _arr(x).astype(np.float64)
    w64 = _arr(w).astype(np.float64)
    out = im2col(x64, shape) @ weight_matrix(w64)
    return np.ascontiguousarray(col2out(out, shape))


def quantize_input_cols(x, shape: ConvShape, group_size: int) -> GroupQuantized:
    cols = im2col(_arr(x), shape)
    GroupSpec(group_size, 1).validate(cols.shape[1])
    return quantize_array(cols, 1, group_size, 8)


def quantize_weight_cols(w, group_size: int, bits: int = 8) -> GroupQuantized:
    mat = weight_matrix(_arr(w))
    GroupSpec(group_size, 0).validate(mat.shape[0])
    return quantize_array(mat, 0, group_size, bits)


def conv_direct_q8(xq: GroupQuantized, wq, shape: ConvShape) -> Tensor:
    """Integer convolution from quantized im2col operands.

    ``xq`` is the (N*H'*W') x (C*r*r) patch matrix grouped along axis 1;
    ``wq`` is the (C*r*r) x K weight matrix grouped along axis 0, either as a
    GroupQuantized or already packed.
    """
    rows = shape.n * shape.h_out * shape.w_out
    if xq.dims != (rows, shape.reduction):
        raise InvalidShape(f"patch matrix {xq.dims} does not match {shape}")
    packed = wq if isinstance(wq, PackedWeights) else pack_weights(wq)
    if packed.dims != (shape.reduction, shape.c_out):
        raise InvalidShape(f"weight matrix {packed.dims} does not match {shape}")
    if xq.spec.group_size != packed.group_size:
        raise InvalidSpec("activation and weight group sizes differ")
    cols = gemm_q8_fast(xq, packed).data
    return Tensor(np.ascontiguousarray(col2out(cols, shape)))


def conv_fake_quant(xq: GroupQuantized, wq: GroupQuantized, shape: ConvShape) -> np.ndarray:
    """Float64 convolution over the dequantized operands (oracle for the int path)."""
    out = dequantize_array(xq) @ dequantize_array(wq)
    return np.ascontiguousarray(col2out(out, shape))


class DirectQ8Conv:
    """Direct int8 convolution with the weights quantized and packed once."""

    def __init__(self, w, shape: ConvShape, group_size: int = 64, bits: int = 8,
                 vector_width: int = DEFAULT_VECTOR_WIDTH):
        check_operands(np.empty((shape.n, shape.c_in, shape.h, shape.w), np.float32), w, shape)
        self.shape = shape
        self.group_size = group_size
        self.wq = quantize_weight_cols(w, group_size, bits)
        self.packed = pack_weights(self.wq, vector_width)

    def __call__(self, x) -> Tensor:
        check_operands(x, np.empty((self.shape.c_out, self.shape.c_in, 3, 3)), self.shape)
        xq = quantize_input_cols(x, self.shape, self.group_size)
        return conv_direct_q8(xq, self.packed, self.shape)
