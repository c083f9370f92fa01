"""Runtime and fidelity benchmarks with JSON / CSV reports.

Timing: ``warmup`` untimed calls, then ``reps`` calls timed one by one with
``time.perf_counter``; median and min are reported.  Weights are
quantized (and packed) once, outside the timed region, as a deployed layer
would have them; the timed call covers input quantization, transforms,
GEMMs and output assembly.

Fidelity numbers are deterministic given the seed; timings are not.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numba
import numpy as np

from .conv_ref import ConvShape, DirectQ8Conv, conv_direct_f64
from .kernels import set_threads
from .quantizer import SQNR_CAP_DB, sqnr
from .scale_tuner import CatalogLayer, build_catalog, derive_seed, kaiming_weights
from .tensor import RngSpec, sample
from .transforms import ScaleSet, rescale_transform, standard_transform, tile_name
from .wino_engine import WinoQ8Conv, range_ratio, tap_range_stats, wino_conv_fp, winograd_domain_output

CONV_MODES = ("fp", "direct-q8", "wino-fp", "wino-q8")
# UNet-like layer menu for the runtime comparison: C = K, H = W
UNET_MENU = tuple((c, h) for c in (128, 256, 320) for h in (32, 64))
_INPUT, _WEIGHTS = 11, 12


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "cpu_count": os.cpu_count(),
        "numba_threads": numba.config.NUMBA_NUM_THREADS,
        "threading_layer": os.environ.get("NUMBA_THREADING_LAYER", "default"),
    }


def menu_shapes(menu=UNET_MENU, n: int = 1) -> List[ConvShape]:
    return [ConvShape(n, c, h, h, c) for c, h in menu]


def time_call(fn: Callable[[], object], reps: int = 20, warmup: int = 5) -> dict:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return {"median_s": statistics.median(times), "min_s": min(times), "reps": reps, "warmup": warmup}


@dataclass
class BenchReport:
    suite: str
    machine: dict
    config: dict
    cases: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def rows(self) -> List[dict]:
        """Cases flattened to scalar columns (nested shape dicts become ``shape_*``)."""
        out = []
        for case in self.cases:
            row = {}
            for k, v in case.items():
                if isinstance(v, dict):
                    row.update({f"{k}_{kk}": vv for kk, vv in v.items() if not isinstance(vv, (list, dict))})
                elif not isinstance(v, list):
                    row[k] = v
            out.append(row)
        return out

    def save_csv(self, path) -> None:
        rows = self.rows()
        cols = []
        for r in rows:
            cols += [c for c in r if c not in cols]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)


def _operands(shape: ConvShape, seed: int):
    x = sample(RngSpec.gaussian(derive_seed(seed, _INPUT, shape.c_in, shape.h, shape.c_out)),
               shape.n * shape.c_in * shape.h * shape.w)
    x = x.astype(np.float32).reshape(shape.n, shape.c_in, shape.h, shape.w)
    w = kaiming_weights(shape.c_out, shape.c_in, derive_seed(seed, _WEIGHTS, shape.c_in, shape.h, shape.c_out))
    return x, w


def winograd_skip_reason(shape: ConvShape, tile: str) -> Optional[str]:
    m = standard_transform(tile).m
    if shape.h_out < m or shape.w_out < m:
        return f"output {shape.h_out}x{shape.w_out} holds no full {m}x{m} tile"
    return None


def _runner(mode: str, shape: ConvShape, x, w, tile: str, scales: Optional[ScaleSet], group_size: int):
    t = standard_transform(tile)
    if scales is not None:
        t = rescale_transform(t, scales.s_b, scales.s_g)
    if mode == "fp":
        return lambda: conv_direct_f64(x, w, shape)
    if mode == "direct-q8":
        conv = DirectQ8Conv(w, shape, group_size)
        return lambda: conv(x).data
    if mode == "wino-fp":
        return lambda: wino_conv_fp(x, w, t, shape.padding)
    if mode == "wino-q8":
        conv = WinoQ8Conv(w, t, shape, group_size)
        return lambda: conv(x)
    raise ValueError(f"unknown mode {mode!r}; choose from {CONV_MODES}")


def run_conv_bench(shapes: Sequence[ConvShape], modes: Sequence[str] = ("direct-q8", "wino-q8"),
                   threads: Sequence[Optional[int]] = (None,), tile: str = "F63",
                   scales: Optional[ScaleSet] = None, group_size: int = 64, reps: int = 20,
                   warmup: int = 5, seed: int = 0, log=None) -> BenchReport:
    """Time each (shape, mode, thread count); ratios compare wino-q8 against direct-q8."""
    tile = tile_name(tile)
    for mode in modes:
        if mode not in CONV_MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {CONV_MODES}")
    report = BenchReport("conv", machine_descriptor(), {
        "modes": list(modes), "threads": list(threads), "tile": tile, "group_size": group_size,
        "reps": reps, "warmup": warmup, "seed": seed,
        "scales": None if scales is None else scales.to_json(tile),
    })
    ratios = []
    previous = set_threads(None)
    try:
        for shape in shapes:
            x, w = _operands(shape, seed)
            ref = conv_direct_f64(x, w, shape)
            for nt in threads:
                active = set_threads(nt)
                medians = {}
                for mode in modes:
                    case = {"shape": shape.to_dict(), "mode": mode, "tile": tile, "threads": active}
                    reason = winograd_skip_reason(shape, tile) if mode.startswith("wino") else None
                    if reason:
                        case.update(skipped=True, reason=reason)
                    else:
                        fn = _runner(mode, shape, x, w, tile, scales, group_size)
                        case.update(skipped=False, sqnr_db=sqnr(ref, fn()), **time_call(fn, reps, warmup))
                        medians[mode] = case["median_s"]
                    report.cases.append(case)
                    if log:
                        log(_case_line(case))
                ratio = {"shape": shape.to_dict(), "threads": active, "wino_over_direct": None, "speedup": None}
                if "wino-q8" in medians and "direct-q8" in medians:
                    r = medians["wino-q8"] / medians["direct-q8"]
                    ratio.update(wino_over_direct=r, speedup=1.0 / r)
                else:
                    ratio["reason"] = winograd_skip_reason(shape, tile) or "wino-q8 or direct-q8 not run"
                ratios.append(ratio)
    finally:
        set_threads(previous)
    timed = [r["speedup"] for r in ratios if r["speedup"] is not None]
    report.summary = {
        "ratios": ratios,
        "shapes_with_speedup_ge_1.15": sum(s >= 1.15 for s in timed),
        "shapes_timed": len(timed),
        "median_speedup": statistics.median(timed) if timed else None,
    }
    return report


def _case_line(case: dict) -> str:
    s = case["shape"]
    head = f"{case['mode']:10s} C={s['c_in']:<4d} K={s['c_out']:<4d} H={s['h']:<4d} threads={case['threads']}"
    if case.get("skipped"):
        return f"{head}  skipped: {case['reason']}"
    return f"{head}  median {case['median_s'] * 1e3:.9g} ms  sqnr {case['sqnr_db']:.9g} dB"


def fidelity_layers(count: int = 6, seed: int = 7) -> List[CatalogLayer]:
    return list(build_catalog(count, seed))


def run_fidelity_suite(tile: str, learned: Optional[ScaleSet], layers: Sequence[CatalogLayer] = None,
                       group_size: int = 64, seed: int = 0) -> BenchReport:
    """int8 Winograd SQNR against the float64 direct oracle, standard vs learned scales."""
    tile = tile_name(tile)
    layers = list(layers) if layers is not None else fidelity_layers()
    base = standard_transform(tile)
    sets = {"standard": base}
    if learned is not None:
        sets["learned"] = rescale_transform(base, learned.s_b, learned.s_g)
    report = BenchReport("fidelity", machine_descriptor(), {
        "tile": tile, "group_size": group_size, "seed": seed,
        "learned_scales": None if learned is None else learned.to_json(tile),
    })
    for i, layer in enumerate(layers):
        s = layer.shape
        x = sample(RngSpec.gaussian(derive_seed(seed, _INPUT, i)), s.n * s.c_in * s.h * s.w)
        x = x.astype(np.float32).reshape(s.n, s.c_in, s.h, s.w)
        ref = conv_direct_f64(x, layer.weight, s)
        case = {"layer": layer.name, "shape": s.to_dict(), "fp_sqnr_db": sqnr(ref, ref)}
        for name, t in sets.items():
            conv = WinoQ8Conv(layer.weight, t, s, group_size)
            rel = tap_range_stats(winograd_domain_output(x, layer.weight, t, group_size))
            case[f"{name}_sqnr_db"] = sqnr(ref, conv(x))
            case[f"{name}_tap_ratio"] = range_ratio(rel)
            case[f"{name}_tap_rel_std"] = rel.tolist()
        report.cases.append(case)
    std = [c["standard_sqnr_db"] for c in report.cases]
    report.summary = {"standard_mean_db": float(np.mean(std)), "fp_sentinel_db": SQNR_CAP_DB}
    if learned is not None:
        lrn = [c["learned_sqnr_db"] for c in report.cases]
        report.summary.update(
            learned_mean_db=float(np.mean(lrn)),
            learned_beats_standard_everywhere=all(a > b for a, b in zip(lrn, std)),
        )
    return report
