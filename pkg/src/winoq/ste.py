"""Differentiable (torch) mirror of the quantized Winograd pipeline.

Quantization is ``s * clamp(round(x / s), -c, c)`` with ``s = max|x| / c``.
Gradients pass straight through ``round`` and through ``clamp`` inside its
range, and flow into ``s`` through the max, so growing a range also grows
its rounding noise in the backward pass.

``StePolicy`` selects how ``round`` behaves:

* ``"ste"``: real rounding, straight-through gradient (training).
* ``"off"``: no quantization at all (pure float pipeline).
* ``"record"`` / ``"frozen"``: ``"record"`` runs like ``"ste"`` and stores each
  call's rounding residual ``round(v) - v``; ``"frozen"`` replays those
  residuals as constants, giving a smooth function of the scales whose exact
  gradient equals the STE gradient at the recording point.
"""

from __future__ import annotations

import numpy as np
import torch

from .quantizer import c_max


class StePolicy:
    def __init__(self, mode: str = "ste"):
        if mode not in ("ste", "off", "record", "frozen"):
            raise ValueError(f"unknown policy {mode!r}")
        self.mode = mode
        self.residuals = []
        self._cursor = 0

    def freeze(self) -> "StePolicy":
        frozen = StePolicy("frozen")
        frozen.residuals = self.residuals
        return frozen

    def quant(self, x: torch.Tensor, dim: int, bits: int = 8) -> torch.Tensor:
        """Fake-quantize with one group per vector along ``dim``."""
        if self.mode == "off":
            return x
        c = c_max(bits)
        s = x.abs().amax(dim=dim, keepdim=True) / c
        s = torch.where(s == 0, torch.ones_like(s), s)
        v = x / s
        if self.mode == "frozen":
            # |v| <= c by construction, so the clamp never changes a value; it is
            # left out here because values that rounded to +-c sit exactly on its
            # boundary and would make the replayed function one-sided.
            res = self.residuals[self._cursor]
            self._cursor += 1
            return (v + res) * s
        else:
            res = (torch.round(v) - v).detach()
            if self.mode == "record":
                self.residuals.append(res)
        return torch.clamp(v + res, -c, c) * s

    def quant_groups(self, x: torch.Tensor, dim: int, group_size: int, bits: int = 8) -> torch.Tensor:
        """Fake-quantize in groups of ``group_size`` along ``dim`` (zero-padded)."""
        if self.mode == "off":
            return x
        x = x.movedim(dim, -1)
        extent = x.shape[-1]
        pad = (-extent) % group_size
        if pad:
            x = torch.cat([x, x.new_zeros(x.shape[:-1] + (pad,))], dim=-1)
        q = self.quant(x.reshape(x.shape[:-1] + (-1, group_size)), -1, bits)
        return q.reshape(x.shape)[..., :extent].movedim(-1, dim)


def tiles_of(x: torch.Tensor, m: int, n: int, padding: int):
    """(N, C, H, W) -> (P, C, n, n) tiles plus the output extents and tile grid."""
    N, C, H, W = x.shape
    ho, wo = H + 2 * padding - (n - m), W + 2 * padding - (n - m)
    th, tw = -(-ho // m), -(-wo // m)
    xp = x.new_zeros((N, C, th * m + n - m, tw * m + n - m))
    hc, wc = min(H, xp.shape[2] - padding), min(W, xp.shape[3] - padding)
    xp[:, :, padding:padding + hc, padding:padding + wc] = x[:, :, :hc, :wc]
    t = xp.unfold(2, n, m).unfold(3, n, m)  # N, C, th, tw, n, n
    t = t.permute(0, 2, 3, 1, 4, 5).reshape(N * th * tw, C, n, n)
    return t, (N, ho, wo, th, tw)


def untile(yt: torch.Tensor, grid, m: int) -> torch.Tensor:
    N, ho, wo, th, tw = grid
    K = yt.shape[1]
    y = yt.reshape(N, th, tw, K, m, m).permute(0, 3, 1, 4, 2, 5).reshape(N, K, th * m, tw * m)
    return y[:, :, :ho, :wo]


def quantized_winograd(x, w, a_t, b_t, g, policy: StePolicy, group_size: int = 64,
                       bits: int = 8, padding: int = 1) -> torch.Tensor:
    """Fake-quant Winograd convolution; same staging and grouping as the numpy engine."""
    m, n = a_t.shape
    tiles, grid = tiles_of(x, m, n, padding)
    P, C = tiles.shape[:2]
    K = w.shape[0]
    q = policy
    Wd = torch.einsum("ia,kcab,jb->ijck", g, w, g).reshape(n * n, C, K)
    Wq = q.quant_groups(Wd, 1, group_size, bits)
    btq = q.quant(b_t, 1)
    atq = q.quant(a_t, 1)
    xq = q.quant(tiles, -2)
    T = q.quant(torch.matmul(btq, xq), -1)
    X = torch.matmul(T, btq.T)
    X = X.permute(2, 3, 0, 1).reshape(n * n, P, C)
    Xq = q.quant_groups(X, 2, group_size)
    Y = torch.matmul(Xq, Wq)  # (n*n, P, K)
    Y = Y.reshape(n, n, P, K).permute(2, 3, 0, 1)
    U = q.quant(torch.matmul(atq, q.quant(Y, -2)), -1)
    yt = torch.matmul(U, atq.T)
    return untile(yt, grid, m)


def sqnr_db(y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    return 10.0 * torch.log10((y * y).sum() / ((y - y_hat) ** 2).sum())


class ScaleParams:
    """``(s_b, s_g)`` as leaf tensors plus the fixed Vandermonde factors."""

    def __init__(self, transform, s_b, s_g, dtype=torch.float32):
        self.dtype = dtype
        self.v_a = torch.tensor(transform.v_a, dtype=torch.float64)
        self.v_b = torch.tensor(transform.v_b, dtype=torch.float64)
        self.v_g = torch.tensor(transform.v_g, dtype=torch.float64)
        self.s_b = torch.tensor(np.asarray(s_b, np.float64), requires_grad=True)
        self.s_g = torch.tensor(np.asarray(s_g, np.float64), requires_grad=True)

    def parameters(self):
        return [self.s_b, self.s_g]

    def matrices(self):
        s_a = 1.0 / (self.s_b * self.s_g)
        a_t = self.v_a * s_a[None, :]
        b_t = self.s_b[:, None] * self.v_b
        g = self.s_g[:, None] * self.v_g
        return a_t.to(self.dtype), b_t.to(self.dtype), g.to(self.dtype)


class MatrixParams:
    """Free ``A^T``, ``B^T`` and ``G`` entries (learned-transforms baseline)."""

    def __init__(self, transform, dtype=torch.float32):
        self.dtype = dtype
        self.a_t = torch.tensor(np.array(transform.a_t), dtype=torch.float64, requires_grad=True)
        self.b_t = torch.tensor(np.array(transform.b_t), dtype=torch.float64, requires_grad=True)
        self.g = torch.tensor(np.array(transform.g), dtype=torch.float64, requires_grad=True)

    def parameters(self):
        return [self.a_t, self.b_t, self.g]

    def matrices(self):
        return self.a_t.to(self.dtype), self.b_t.to(self.dtype), self.g.to(self.dtype)
