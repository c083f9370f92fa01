"""Winograd transform construction from polynomial points and diagonal scales.

For F(m, r) with n = m + r - 1 points ``(f_i, g_i)``::

    A^T = V_{n x m}^T  diag(s_a)        (m x n)
    B^T = diag(s_b)    V_{n x n}^{-T}   (n x n)
    G   = diag(s_g)    V_{n x r}        (n x r)

with ``s_a * s_b * s_g == 1`` elementwise.  ``s_a`` is never stored
independently: it is always derived as ``1 / (s_b * s_g)``.

"Convolution" throughout the package means cross-correlation (no kernel
flip), so ``A^T [(G w G^T) * (B^T x B)] A`` equals the valid correlation of
an n x n tile ``x`` with the r x r filter ``w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .errors import FormatError, InvalidScale, SingularTransform

Point = Tuple[float, float]

# Point at infinity is (1, 0); vandermonde() relies on 0.0 ** 0 == 1.0.
STANDARD_POINTS = {
    "F43": ((0, 1), (1, 1), (-1, 1), (2, 1), (-2, 1), (1, 0)),
    "F63": ((0, 1), (1, 1), (-1, 1), (2, 1), (-2, 1), (0.5, 1), (-0.5, 1), (1, 0)),
}
STANDARD_SB = {
    "F43": (4, -6, -6, 24, 24, 1),
    "F63": (1, Fraction(-9, 2), Fraction(-9, 2), 90, 90, Fraction(45, 32), Fraction(45, 32), 1),
}
STANDARD_SG = {
    "F43": (Fraction(1, 4), Fraction(-1, 6), Fraction(-1, 6), Fraction(1, 24), Fraction(1, 24), 1),
    "F63": (1, Fraction(-2, 9), Fraction(-2, 9), Fraction(1, 90), Fraction(1, 90),
            Fraction(32, 45), Fraction(32, 45), 1),
}
TILE_M = {"F43": 4, "F63": 6}


def tile_name(tile: str) -> str:
    key = str(tile).upper().replace("(", "").replace(")", "").replace(",", "")
    if key not in TILE_M:
        raise ValueError(f"unknown tile {tile!r}; expected F43 or F63")
    return key


def vandermonde(points: Sequence[Point], cols: int) -> np.ndarray:
    """Homogeneous Vandermonde matrix: entry (i, j) = f_i**j * g_i**(cols-1-j)."""
    if cols < 1:
        raise ValueError("cols must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    j = np.arange(cols)
    return pts[:, :1] ** j * pts[:, 1:] ** (cols - 1 - j)


def check_points(points: Sequence[Point]) -> None:
    """Raise SingularTransform unless the points are distinct projective points."""
    pts = [(float(f), float(g)) for f, g in points]
    for i, (fi, gi) in enumerate(pts):
        if fi == 0 and gi == 0:
            raise SingularTransform(f"point {i} is (0, 0)")
        for j in range(i):
            fj, gj = pts[j]
            if fi * gj - fj * gi == 0:
                raise SingularTransform(f"points {j} and {i} coincide projectively")


def _as_scale_vector(values, name: str) -> np.ndarray:
    v = np.array(values, dtype=np.float64).ravel()
    if not np.isfinite(v).all() or (v == 0).any():
        raise InvalidScale(f"{name} must be finite and nonzero: {v.tolist()}")
    return v


@dataclass(frozen=True, eq=False)
class ScaleSet:
    """Diagonal scale vectors; ``s_a`` is derived from ``s_b`` and ``s_g``."""

    s_b: np.ndarray
    s_g: np.ndarray

    def __post_init__(self):
        sb = _as_scale_vector(self.s_b, "s_b")
        sg = _as_scale_vector(self.s_g, "s_g")
        if sb.shape != sg.shape:
            raise InvalidScale("s_b and s_g lengths differ")
        sa = 1.0 / (sb * sg)
        if not np.isfinite(sa).all() or (sa == 0).any():
            raise InvalidScale("derived s_a is not finite")
        for name, arr in (("s_b", sb), ("s_g", sg)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        sa.setflags(write=False)
        object.__setattr__(self, "s_a", sa)

    @property
    def n(self) -> int:
        return self.s_b.size

    def residual(self) -> float:
        """max_i |s_a s_b s_g - 1|."""
        return float(np.max(np.abs(self.s_a * self.s_b * self.s_g - 1.0)))

    def __eq__(self, other):
        if not isinstance(other, ScaleSet):
            return NotImplemented
        return np.array_equal(self.s_b, other.s_b) and np.array_equal(self.s_g, other.s_g)

    __hash__ = None

    def to_json(self, tile: str) -> dict:
        return {"tile": tile_name(tile), "s_b": self.s_b.tolist(), "s_g": self.s_g.tolist()}

    def save(self, path, tile: str) -> None:
        Path(path).write_text(json.dumps(self.to_json(tile), indent=2) + "\n")


def scales_from_json(doc: dict) -> Tuple[str, ScaleSet]:
    """Parse ``{"tile": ..., "s_b": [...], "s_g": [...]}``; any ``s_a`` is ignored."""
    try:
        tile = tile_name(doc["tile"])
        scales = ScaleSet(doc["s_b"], doc["s_g"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScale):
            raise
        raise FormatError(f"bad scale document: {exc}") from exc
    if scales.n != TILE_M[tile] + 2:
        raise FormatError(f"{tile} needs {TILE_M[tile] + 2} scales, got {scales.n}")
    return tile, scales


def load_scales(path) -> Tuple[str, ScaleSet]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return scales_from_json(doc)


@dataclass(frozen=True, eq=False)
class WinogradTransform:
    m: int
    r: int
    points: tuple
    scales: ScaleSet
    a_t: np.ndarray  # m x n
    b_t: np.ndarray  # n x n
    g: np.ndarray  # n x r
    # unscaled factors: V_{n x m}^T, V_{n x n}^{-T}, V_{n x r}
    v_a: np.ndarray
    v_b: np.ndarray
    v_g: np.ndarray

    @property
    def n(self) -> int:
        return self.m + self.r - 1

    @property
    def tile(self) -> str:
        for name, pts in STANDARD_POINTS.items():
            if self.m == TILE_M[name] and self.r == 3 and _same_points(pts, self.points):
                return name
        return f"F({self.m},{self.r})"

    def matrices(self) -> dict:
        return {"a_t": self.a_t, "b_t": self.b_t, "g": self.g}


def _same_points(a, b) -> bool:
    return len(a) == len(b) and all(float(p[0]) == float(q[0]) and float(p[1]) == float(q[1]) for p, q in zip(a, b))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _assemble(m, r, points, v_a, v_b, v_g, scales: ScaleSet) -> WinogradTransform:
    return WinogradTransform(
        m=m, r=r, points=points, scales=scales,
        a_t=_freeze(v_a * scales.s_a[None, :]),
        b_t=_freeze(scales.s_b[:, None] * v_b),
        g=_freeze(scales.s_g[:, None] * v_g),
        v_a=v_a, v_b=v_b, v_g=v_g,
    )


def build_transform(m: int, r: int, points: Sequence[Point], scales: ScaleSet) -> WinogradTransform:
    n = m + r - 1
    points = tuple((float(f), float(g)) for f, g in points)
    if len(points) != n:
        raise ValueError(f"F({m},{r}) needs {n} points, got {len(points)}")
    if scales.n != n:
        raise InvalidScale(f"F({m},{r}) needs {n} scales, got {scales.n}")
    check_points(points)
    v_nn = vandermonde(points, n)
    try:
        v_inv = np.linalg.inv(v_nn)
    except np.linalg.LinAlgError as exc:
        raise SingularTransform(str(exc)) from exc
    return _assemble(
        m, r, points,
        _freeze(vandermonde(points, m).T),
        _freeze(v_inv.T),
        _freeze(vandermonde(points, r)),
        scales,
    )


def standard_scales(tile: str) -> ScaleSet:
    tile = tile_name(tile)
    return ScaleSet([float(v) for v in STANDARD_SB[tile]], [float(v) for v in STANDARD_SG[tile]])


def standard_transform(tile: str) -> WinogradTransform:
    tile = tile_name(tile)
    return build_transform(TILE_M[tile], 3, STANDARD_POINTS[tile], standard_scales(tile))


def rescale_transform(t: WinogradTransform, new_sb, new_sg) -> WinogradTransform:
    """Same points and Vandermonde factors, new ``s_b``/``s_g``; ``s_a`` re-derived."""
    return _assemble(t.m, t.r, t.points, t.v_a, t.v_b, t.v_g, ScaleSet(new_sb, new_sg))


def tile_correlation(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid 2-D cross-correlation of one tile with one filter (oracle helper)."""
    r = w.shape[0]
    m = x.shape[0] - r + 1
    out = np.zeros((m, m), dtype=np.result_type(x, w))
    for u in range(r):
        for v in range(r):
            out += w[u, v] * x[u:u + m, v:v + m]
    return out


def winograd_tile(t: WinogradTransform, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``A^T [(G w G^T) * (B^T x B)] A`` for a single tile, in float64."""
    W = t.g @ w @ t.g.T
    X = t.b_t @ x @ t.b_t.T
    return t.a_t @ (W * X) @ t.a_t.T
