"""``winoq`` command line.

Exit codes: 0 success, 1 a check or assertion failed, 2 usage or I/O error.
Numbers are printed with 9 significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import golden
from .bench import CONV_MODES, fidelity_layers, menu_shapes, run_conv_bench, run_fidelity_suite
from .checks import run_all
from .conv_ref import ConvShape, DirectQ8Conv, conv_direct_f64, conv_direct_fp
from .errors import WinoqError
from .kernels import set_threads
from .quantizer import ALLOWED_GROUP_SIZES, sqnr
from .scale_tuner import TuneConfig, build_catalog, tune_scales, tune_transforms
from .tensor import Tensor, tensor_load, tensor_save
from .transforms import load_scales, rescale_transform, standard_transform, tile_name
from .wino_engine import WinoQ8Conv, wino_conv_fp

BITS = {"w8a8": 8, "w4a8": 4}
SMALL_MENU = ((32, 16), (64, 16), (64, 8), (32, 1))


class UsageError(Exception):
    """Bad flags or inputs; exit code 2."""


def fmt(x) -> str:
    return f"{float(x) + 0.0:.9g}"  # + 0.0 folds -0 into 0


def print_matrix(name: str, mat: np.ndarray, out=None) -> None:
    out = out or sys.stdout
    print(f"{name} ({mat.shape[0]}x{mat.shape[1]})", file=out)
    for row in mat:
        print("  " + " ".join(fmt(v) for v in row), file=out)


def packaged_scales(tile: str):
    """Scales learned with the default tuning config, shipped with the package."""
    name = f"learned_{tile_name(tile).lower()}.json"
    ref = resources.files("winoq") / "data" / name
    if not ref.is_file():
        raise UsageError(f"no packaged learned scales for {tile}; pass --scales")
    with resources.as_file(ref) as path:
        return load_scales(path)


def _resolve_tile(args, file_tile=None) -> str:
    if args.tile and file_tile and tile_name(args.tile) != file_tile:
        raise UsageError(f"--tile {args.tile} does not match scales file tile {file_tile}")
    return tile_name(args.tile or file_tile or "F63")


def _transform(args):
    """Transform for --tile, rescaled by --scales when given."""
    if args.scales:
        file_tile, scales = load_scales(args.scales)
        tile = _resolve_tile(args, file_tile)
        base = standard_transform(tile)
        return tile, rescale_transform(base, scales.s_b, scales.s_g)
    tile = _resolve_tile(args)
    return tile, standard_transform(tile)


# ---------------------------------------------------------------- subcommands

def cmd_transforms(args) -> int:
    tile, t = _transform(args)
    print(f"tile {tile}  m={t.m} r={t.r} n={t.n}")
    for name, mat in (("A^T", t.a_t), ("B^T", t.b_t), ("G", t.g)):
        print_matrix(name, mat)
    sc = t.scales
    print("s_a " + " ".join(fmt(v) for v in sc.s_a))
    print("s_b " + " ".join(fmt(v) for v in sc.s_b))
    print("s_g " + " ".join(fmt(v) for v in sc.s_g))
    residual = sc.residual()
    print(f"scaling residual max|s_a s_b s_g - 1| = {fmt(residual)}")
    ok = residual <= 1e-9
    if not args.scales:
        bad = [m for m in golden.compare(t, tile) if not m[5]]
        for name, r, c, printed, built, _ in bad:
            print(f"golden mismatch {name}[{r},{c}]: printed {fmt(printed)} built {fmt(built)}")
        print(f"golden check: {'pass' if not bad else 'FAIL'}")
        ok = ok and not bad
    if args.out:
        doc = {"tile": tile, **sc.to_json(tile), "s_a": sc.s_a.tolist(), "residual": residual,
               "a_t": t.a_t.tolist(), "b_t": t.b_t.tolist(), "g": t.g.tolist()}
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return 0 if ok else 1


def cmd_conv(args) -> int:
    x = tensor_load(args.x).data
    w = tensor_load(args.w).data
    if x.ndim != 4 or w.ndim != 4:
        raise UsageError("--x must be N,C,H,W and --w K,C,3,3")
    shape = ConvShape.infer(x, w, args.padding)
    ref = conv_direct_f64(x, w, shape)
    bits = BITS[args.bits or "w8a8"]
    gs = args.group_size or 64
    if args.mode == "fp":
        y = conv_direct_fp(x, w, shape).data
    elif args.mode == "direct-q8":
        y = DirectQ8Conv(w, shape, gs, bits)(x).data
    else:
        tile, t = _transform(args)
        if args.mode == "wino-fp":
            y = wino_conv_fp(x, w, t, args.padding)
        else:
            y = WinoQ8Conv(w, t, shape, gs, bits)(x)
    if args.out:
        tensor_save(Tensor(y), args.out)
    print(f"mode {args.mode}  output {'x'.join(map(str, y.shape))}")
    print(f"sqnr_db {fmt(sqnr(ref, y))}")
    return 0


def _tune_config(args) -> TuneConfig:
    cfg = TuneConfig.load(args.config) if args.config else TuneConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tile:
        cfg.tile = args.tile
    if args.group_size is not None:
        cfg.group_size = args.group_size
    if args.bits:
        cfg.bits = BITS[args.bits or "w8a8"]
    if args.log_every is not None:
        cfg.log_every = args.log_every
    return cfg.validate()


def cmd_learn_scales(args) -> int:
    cfg = _tune_config(args)
    catalog = build_catalog(cfg.catalog_size, cfg.seed)
    log = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    if args.transforms:
        if args.resume:
            raise UsageError("--resume applies to scale learning only")
        mats, report = tune_transforms(catalog, cfg, log=log)
        Path(args.out).write_text(json.dumps(
            {"tile": cfg.tile, **{k: v.tolist() for k, v in mats.items()}}, indent=2) + "\n")
    else:
        init = None
        first_step = 0
        if args.resume:
            file_tile, init = load_scales(args.resume)
            if file_tile != cfg.tile:
                raise UsageError(f"resume file is for {file_tile}, config tile is {cfg.tile}")
            first_step = args.first_step if args.first_step is not None else cfg.steps
        scales, report = tune_scales(catalog, cfg, init, first_step, log=log)
        scales.save(args.out, cfg.tile)
    report_path = args.report or str(Path(args.out).with_suffix("")) + ".report.json"
    report.save(report_path)
    print(f"tile {cfg.tile}  steps {report.steps}  params {report.param_count}")
    for layer, a, b in zip(report.layers, report.initial_sqnr, report.final_sqnr):
        print(f"  {layer['name']:20s} sqnr_db {fmt(a)} -> {fmt(b)}")
    print(f"initial_mean_db {fmt(report.initial_mean)}")
    print(f"final_mean_db {fmt(report.final_mean)}")
    print(f"gain_db {fmt(report.gain_db)}")
    if report.loss_trace:
        print(f"loss first {fmt(report.loss_trace[0])} last {fmt(report.loss_trace[-1])}")
    print(f"wall_time_s {fmt(report.wall_time_s)}")
    if report.regressed:
        print("training regressed held-out SQNR", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    if args.suite == "conv":
        menu = SMALL_MENU if args.shapes == "small" else None
        shapes = menu_shapes(menu) if menu else menu_shapes()
        scales = load_scales(args.scales)[1] if args.scales else None
        report = run_conv_bench(shapes, args.modes, [args.threads], _resolve_tile(args), scales,
                                args.group_size or 64, args.reps, args.warmup, args.seed or 0,
                                log=print)
        for r in report.summary["ratios"]:
            s = r["shape"]
            val = fmt(r["speedup"]) if r["speedup"] is not None else f"n/a ({r.get('reason')})"
            print(f"C={s['c_in']} K={s['c_out']} H={s['h']}  wino/direct speedup {val}")
        ok = True
    else:
        if args.scales:
            file_tile, learned = load_scales(args.scales)
            tile = _resolve_tile(args, file_tile)
        else:
            tile = _resolve_tile(args)
            learned = packaged_scales(tile)[1]
        count = 3 if args.shapes == "small" else 6
        report = run_fidelity_suite(tile, learned, fidelity_layers(count), args.group_size or 64, args.seed or 0)
        for c in report.cases:
            print(f"{c['layer']:20s} standard {fmt(c['standard_sqnr_db'])} dB  learned {fmt(c['learned_sqnr_db'])} dB"
                  f"  tap ratio {fmt(c['standard_tap_ratio'])} -> {fmt(c['learned_tap_ratio'])}")
        ok = report.summary["learned_beats_standard_everywhere"]
        print(f"learned beats standard on every shape: {'yes' if ok else 'NO'}")
    if args.out:
        report.save(args.out)
    if args.csv:
        report.save_csv(args.csv)
    return 0 if ok else 1


def cmd_verify(args) -> int:
    results = run_all()
    ok = all(r.ok for r in results)
    if args.json:
        print(json.dumps({"ok": ok, "checks": [r.to_json() for r in results]}, indent=2))
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:{width}s}  {r.detail}")
        print(f"{sum(r.ok for r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


# ---------------------------------------------------------------- parsing

def _group_size(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("group size must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="kernel threads (default: all cores)")
    common.add_argument("--tile", type=str.lower, choices=["f43", "f63"], default=None)
    common.add_argument("--group-size", type=_group_size, default=None,
                        help=f"quantization group size, one of {ALLOWED_GROUP_SIZES} or the reduction extent")
    common.add_argument("--bits", choices=sorted(BITS), default=None)
    common.add_argument("--out", default=None)

    parser = argparse.ArgumentParser(prog="winoq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transforms", parents=[common], help="print transform matrices and check them")
    p.add_argument("--scales", help="scales JSON to apply")
    p.set_defaults(func=cmd_transforms)

    p = sub.add_parser("conv", parents=[common], help="run one convolution on .wqt tensors")
    p.add_argument("--x", required=True)
    p.add_argument("--w", required=True)
    p.add_argument("--mode", choices=["fp", "direct-q8", "wino-fp", "wino-q8"], required=True)
    p.add_argument("--padding", type=int, default=1)
    p.add_argument("--scales")
    p.set_defaults(func=cmd_conv)

    p = sub.add_parser("learn-scales", parents=[common], help="learn Winograd scales from noise")
    p.add_argument("--config", help="TuneConfig JSON")
    p.add_argument("--report", help="report JSON path (default: <out>.report.json)")
    p.add_argument("--resume", help="scales JSON to start from")
    p.add_argument("--first-step", type=int, default=None, help="seed offset when resuming")
    p.add_argument("--transforms", action="store_true", help="learn full matrices instead (baseline)")
    p.add_argument("--log-every", type=int, default=None)
    p.set_defaults(func=cmd_learn_scales)

    p = sub.add_parser("bench", parents=[common], help="runtime or fidelity benchmark")
    p.add_argument("--suite", choices=["conv", "fidelity"], required=True)
    p.add_argument("--shapes", choices=["unet", "small"], default="unet")
    p.add_argument("--modes", nargs="+", choices=CONV_MODES, default=["direct-q8", "wino-q8"])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--scales")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", parents=[common], help="run the self-check battery")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "learn-scales" and not args.out:
        parser.error("learn-scales needs --out")
    if args.command == "bench" and (args.reps < 1 or args.warmup < 0):
        parser.error("--reps must be >= 1 and --warmup >= 0")
    try:
        set_threads(args.threads)
        return args.func(args)
    except (UsageError, WinoqError, OSError, ValueError) as exc:
        print(f"winoq {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
