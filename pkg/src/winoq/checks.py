"""Self-check battery behind ``winoq verify``.

Each check returns a :class:`CheckResult`; none of them take more than a
few seconds.  The checks read module-level tables at call time, so a
corrupted constant shows up as a named failure.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from . import golden
from .conv_ref import conv_direct_f64
from .kernels import gemm_q8_fast, gemm_q8_scalar, pack_weights, unpack_weights
from .quantizer import quantize_array, quantize_group
from .tensor import RngSpec, tensor_load, tensor_new, tensor_save
from .transforms import ScaleSet, rescale_transform, standard_transform
from .wino_engine import wino_conv


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "ok": bool(self.ok), "detail": self.detail}


def rel_error(test: np.ndarray, ref: np.ndarray) -> float:
    """max |test - ref| / max |ref| (0 when both are zero)."""
    ref = np.asarray(ref, np.float64)
    diff = float(np.max(np.abs(np.asarray(test, np.float64) - ref)))
    scale = float(np.max(np.abs(ref)))
    return diff / scale if scale > 0 else diff


def check_golden(tile: str) -> CheckResult:
    t = standard_transform(tile)
    found = list(golden.compare(t, tile))
    undocumented = [f for f in found if not f[5]]
    expected = sum(len(v) for (tl, _), v in golden.PRINTED_TYPOS.items() if tl == tile)
    documented = sum(1 for f in found if f[5])
    if undocumented:
        name, r, c, printed, built, _ = undocumented[0]
        return CheckResult(f"golden_{tile}", False,
                           f"{name}[{r},{c}] printed {printed:.9g} built {built:.9g} "
                           f"({len(undocumented)} undocumented mismatches)")
    if documented != expected:
        return CheckResult(f"golden_{tile}", False, f"{documented} of {expected} documented typos reproduced")
    return CheckResult(f"golden_{tile}", True, f"all entries within 1e-12 except {expected} documented typos")


def check_scaling(trials: int = 1000, seed: int = 0) -> CheckResult:
    worst = 0.0
    rng = np.random.default_rng(seed)
    for tile in ("F43", "F63"):
        base = standard_transform(tile)
        worst = max(worst, base.scales.residual())
        for _ in range(trials):
            mag = np.exp(rng.uniform(-3, 3, (2, base.n)))
            sign = rng.choice([-1.0, 1.0], (2, base.n))
            worst = max(worst, ScaleSet(mag[0] * sign[0], mag[1] * sign[1]).residual())
    return CheckResult("scaling_condition", worst <= 1e-9, f"max |s_a s_b s_g - 1| = {worst:.9g}")


def _case(rng, c_max=12, k_max=12, h_max=20):
    c, k = int(rng.integers(1, c_max + 1)), int(rng.integers(1, k_max + 1))
    h, w = int(rng.integers(1, h_max + 1)), int(rng.integers(1, h_max + 1))
    x = rng.standard_normal((1, c, h, w)).astype(np.float32)
    wt = (rng.standard_normal((k, c, 3, 3)) / 3).astype(np.float32)
    return x, wt


def check_fp_oracle(tile: str, cases: int = 10, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    t = standard_transform(tile)
    worst = 0.0
    for _ in range(cases):
        x, w = _case(rng)
        worst = max(worst, rel_error(wino_conv(x, w, t, "fp").data, conv_direct_f64(x, w)))
    return CheckResult(f"fp_oracle_{tile}", worst <= 1e-4, f"max relative error {worst:.9g}")


def check_int_vs_fake(cases: int = 5, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        t = standard_transform(("F43", "F63")[i % 2])
        x, w = _case(rng, 40, 40, 16)
        a = wino_conv(x, w, t, "int8", group_size=32).data
        b = wino_conv(x, w, t, "fake_quant", group_size=32).data
        worst = max(worst, rel_error(a, b))
    return CheckResult("int8_vs_fake_quant", worst <= 1e-5, f"max relative difference {worst:.9g}")


def check_gemm_equality(limit: int = 9, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    total = 0
    for m in range(1, limit + 1, 2):
        for k in range(1, limit + 1):
            for n in range(1, limit + 1, 2):
                for gs in (k, 8):
                    a = quantize_array(rng.standard_normal((m, k)), 1, gs)
                    b = quantize_array(rng.standard_normal((k, n)), 0, gs)
                    total += 1
                    if not gemm_q8_fast(a, pack_weights(b, 4)) == gemm_q8_scalar(a, b):
                        bad += 1
    return CheckResult("gemm_fast_equals_scalar", bad == 0, f"{total - bad}/{total} shapes bit-identical")


def check_packing(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    b = quantize_array(rng.standard_normal((96, 37)), 0, 32)
    back = unpack_weights(pack_weights(b, 16))
    ok = np.array_equal(back.ints, b.ints) and np.array_equal(back.scales, b.scales)
    return CheckResult("pack_roundtrip", ok, "unpack(pack(w)) == w" if ok else "roundtrip changed payload")


def check_quantizer() -> CheckResult:
    q, s = quantize_group([1.0, -2.0, 0.5])
    ok = q.tolist() == [64, -127, 32] and s == np.float32(2.0 / 127)
    return CheckResult("quantizer_example", ok, f"ints {q.tolist()} scale {float(s):.9g}")


def check_tensor_format() -> CheckResult:
    t = tensor_new((2, 3, 4, 5), RngSpec.gaussian(7))
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "t.wqt"
        tensor_save(t, path)
        ok = tensor_load(path) == t
    return CheckResult("tensor_roundtrip", ok, "save/load is bit-exact" if ok else "payload changed")


def check_rescaled_exactness(seed: int = 5) -> CheckResult:
    """Any valid scale set gives an exact (FP) convolution."""
    rng = np.random.default_rng(seed)
    t = standard_transform("F63")
    scaled = rescale_transform(t, t.scales.s_b * rng.uniform(0.5, 2, t.n), t.scales.s_g * rng.uniform(0.5, 2, t.n))
    x, w = _case(rng)
    err = rel_error(wino_conv(x, w, scaled, "fp").data, conv_direct_f64(x, w))
    return CheckResult("rescaled_fp_exact", err <= 1e-4, f"relative error {err:.9g}")


CHECKS: List[Tuple[str, Callable[[], CheckResult]]] = [
    ("golden_F43", lambda: check_golden("F43")),
    ("golden_F63", lambda: check_golden("F63")),
    ("scaling_condition", check_scaling),
    ("fp_oracle_F43", lambda: check_fp_oracle("F43")),
    ("fp_oracle_F63", lambda: check_fp_oracle("F63")),
    ("rescaled_fp_exact", check_rescaled_exactness),
    ("int8_vs_fake_quant", check_int_vs_fake),
    ("gemm_fast_equals_scalar", check_gemm_equality),
    ("pack_roundtrip", check_packing),
    ("quantizer_example", check_quantizer),
    ("tensor_roundtrip", check_tensor_format),
]


def run_all() -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            results.append(check())
        except Exception as exc:  # a crash is a failed check, not a crashed battery
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results
