"""Data-free learning of the Winograd scale vectors ``(s_b, s_g)``.

One scale set is shared by every layer of a catalog.  Each step samples K
layers, feeds them fresh noise, and descends ``-SQNR`` (dB, averaged over
the K layers) of the fake-quant Winograd output against the float64 direct
convolution.  Gradients pass straight through rounding (see ``ste``).
``s_a = 1 / (s_b * s_g)`` is rebuilt from the parameters on every forward
pass, so the scaling constraint holds exactly after every step.

Held-out SQNR is measured with the numpy int8 engine on inputs the training
loop never sees.

Seeds for layer picks, noise and held-out inputs are all derived from
``TuneConfig.seed`` through ``numpy.random.SeedSequence`` so a run is
reproducible bit-for-bit on one thread.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import ste
from .conv_ref import ConvShape, conv_direct_f64
from .errors import FormatError, InvalidSpec, TuneDiverged
from .quantizer import sqnr
from .tensor import RngSpec, sample
from .transforms import (
    ScaleSet, WinogradTransform, rescale_transform, standard_transform, tile_name,
)
from .wino_engine import WinoQ8Conv, range_ratio, tap_range_stats, winograd_domain_output

MIN_ABS_SCALE = 1e-6

# SeedSequence stream tags
_PICK, _NOISE, _EVAL, _SHAPE, _WEIGHT = 1, 2, 3, 4, 5

TRAIN_CHANNELS = (32, 64, 128)
TRAIN_SIZES = (16, 32)
# disjoint from the training menu, for the transfer check
UNSEEN_CHANNELS = (48, 96, 192)
UNSEEN_SIZES = (24, 40)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- catalog

@dataclass(frozen=True, eq=False)
class CatalogLayer:
    name: str
    shape: ConvShape
    weight: np.ndarray  # K, C, 3, 3 float32


@dataclass(frozen=True, eq=False)
class LayerCatalog:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise InvalidSpec("catalog is empty")
        if any(layer.shape.r != 3 for layer in self.layers):
            raise InvalidSpec("every catalog layer must use 3x3 filters")

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i) -> CatalogLayer:
        return self.layers[i]

    def describe(self) -> list:
        return [{"name": layer.name, **layer.shape.to_dict()} for layer in self.layers]


def kaiming_weights(c_out: int, c_in: int, seed: int) -> np.ndarray:
    std = math.sqrt(2.0 / (c_in * 9))
    vals = sample(RngSpec.gaussian(seed, 0.0, std), c_out * c_in * 9)
    return vals.astype(np.float32).reshape(c_out, c_in, 3, 3)


def make_layer(c_in: int, c_out: int, size: int, seed: int, name: str = None) -> CatalogLayer:
    shape = ConvShape(1, c_in, size, size, c_out)
    name = name or f"c{c_in}_k{c_out}_h{size}"
    return CatalogLayer(name, shape, kaiming_weights(c_out, c_in, seed))


def build_catalog(count: int = 8, seed: int = 0, channels: Sequence[int] = TRAIN_CHANNELS,
                  sizes: Sequence[int] = TRAIN_SIZES) -> LayerCatalog:
    """``count`` layers with C, K drawn from ``channels`` and H = W from ``sizes``."""
    layers = []
    for i in range(count):
        u = sample(RngSpec.uniform(derive_seed(seed, _SHAPE, i), 0.0, 1.0), 3)
        c = channels[int(u[0] * len(channels))]
        k = channels[int(u[1] * len(channels))]
        h = sizes[int(u[2] * len(sizes))]
        layers.append(make_layer(c, k, h, derive_seed(seed, _WEIGHT, i), f"L{i}_c{c}_k{k}_h{h}"))
    return LayerCatalog(tuple(layers))


# ---------------------------------------------------------------- config / report

@dataclass
class TuneConfig:
    epochs: int = 20
    batches_per_epoch: int = 100
    layers_per_step: int = 2
    lr: float = 1e-3
    batch_size: int = 1
    noise: dict = field(default_factory=lambda: {"kind": "gaussian", "mean": 0.0, "std": 1.0})
    tile: str = "F63"
    seed: int = 0
    group_size: int = 64
    bits: int = 8
    clip_norm: float = 1.0
    catalog_size: int = 8
    log_every: int = 0

    @property
    def steps(self) -> int:
        return self.epochs * self.batches_per_epoch

    def validate(self, catalog_len: Optional[int] = None) -> "TuneConfig":
        if min(self.epochs, self.batches_per_epoch, self.layers_per_step, self.batch_size) < 1:
            raise InvalidSpec("epochs, batches_per_epoch, layers_per_step and batch_size must be >= 1")
        n = self.catalog_size if catalog_len is None else catalog_len
        if self.layers_per_step > n:
            raise InvalidSpec(f"layers_per_step {self.layers_per_step} exceeds catalog size {n}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise InvalidSpec("lr must be finite and >= 0")
        if not self.clip_norm > 0:
            raise InvalidSpec("clip_norm must be > 0")
        if self.bits not in (4, 8):
            raise InvalidSpec("bits must be 8 or 4")
        self.tile = tile_name(self.tile)
        self.noise_spec(0)
        return self

    def noise_spec(self, seed: int) -> RngSpec:
        d = dict(self.noise)
        d["seed"] = seed
        try:
            return RngSpec.from_dict(d)
        except (KeyError, ValueError) as exc:
            raise InvalidSpec(f"bad noise spec: {exc}") from exc

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TuneConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc).validate()
        except TypeError as exc:
            raise FormatError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TuneConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise FormatError("config must be a JSON object")
        return cls.from_json(doc)


@dataclass
class TuneReport:
    mode: str  # "scales" or "transforms"
    tile: str
    steps: int
    param_count: int
    layers: list
    loss_trace: list
    initial_sqnr: list
    final_sqnr: list
    wall_time_s: float
    scales: Optional[dict] = None
    matrices: Optional[dict] = None

    @property
    def initial_mean(self) -> float:
        return float(np.mean(self.initial_sqnr))

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.final_sqnr))

    @property
    def gain_db(self) -> float:
        return self.final_mean - self.initial_mean

    @property
    def regressed(self) -> bool:
        return self.final_mean < self.initial_mean - 0.1

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d.update(initial_mean_db=self.initial_mean, final_mean_db=self.final_mean,
                 gain_db=self.gain_db, regressed=self.regressed)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


# ---------------------------------------------------------------- evaluation

def heldout_input(layer: CatalogLayer, cfg: TuneConfig, index: int) -> np.ndarray:
    s = layer.shape
    spec = cfg.noise_spec(derive_seed(cfg.seed, _EVAL, index))
    return sample(spec, s.n * s.c_in * s.h * s.w).astype(np.float32).reshape(s.n, s.c_in, s.h, s.w)


def evaluate(catalog: LayerCatalog, t: WinogradTransform, cfg: TuneConfig) -> List[float]:
    """Held-out int8 Winograd SQNR (dB) per catalog layer."""
    out = []
    for i, layer in enumerate(catalog):
        x = heldout_input(layer, cfg, i)
        y = conv_direct_f64(x, layer.weight, layer.shape)
        conv = WinoQ8Conv(layer.weight, t, layer.shape, cfg.group_size, cfg.bits, integer=True)
        out.append(sqnr(y, conv(x)))
    return out


def tap_ratios(catalog: LayerCatalog, t: WinogradTransform, cfg: TuneConfig) -> List[float]:
    """max/min tap relative std of the quantized Winograd-domain output, per layer."""
    out = []
    for i, layer in enumerate(catalog):
        Y = winograd_domain_output(heldout_input(layer, cfg, i), layer.weight, t, cfg.group_size, cfg.bits)
        out.append(range_ratio(tap_range_stats(Y)))
    return out


def with_matrices(t: WinogradTransform, a_t, b_t, g) -> WinogradTransform:
    """``t`` with its three matrices replaced (points and scales describe the start)."""
    def frozen(a):
        a = np.array(a, dtype=np.float64)
        a.setflags(write=False)
        return a
    return dataclasses.replace(t, a_t=frozen(a_t), b_t=frozen(b_t), g=frozen(g))


# ---------------------------------------------------------------- training loop

class _TrainBatchSource:
    """Deterministic layer picks and noise inputs per step."""

    def __init__(self, catalog: LayerCatalog, cfg: TuneConfig):
        self.catalog = catalog
        self.cfg = cfg
        self._refs = {}

    def picks(self, step: int) -> np.ndarray:
        u = sample(RngSpec.uniform(derive_seed(self.cfg.seed, _PICK, step), 0.0, 1.0), len(self.catalog))
        return np.argsort(u, kind="stable")[: self.cfg.layers_per_step]

    def batch(self, step: int, slot: int, index: int):
        layer = self.catalog[index]
        s = layer.shape
        n = self.cfg.batch_size
        spec = self.cfg.noise_spec(derive_seed(self.cfg.seed, _NOISE, step, slot))
        x = sample(spec, n * s.c_in * s.h * s.w).astype(np.float32).reshape(n, s.c_in, s.h, s.w)
        y = conv_direct_f64(x, layer.weight, ConvShape(n, s.c_in, s.h, s.w, s.c_out, s.r, s.padding))
        return torch.from_numpy(x), torch.from_numpy(y.astype(np.float32))

    def weight(self, index: int) -> torch.Tensor:
        if index not in self._refs:
            self._refs[index] = torch.from_numpy(self.catalog[index].weight)
        return self._refs[index]


def _step_loss(params, source: _TrainBatchSource, step: int, cfg: TuneConfig) -> torch.Tensor:
    a_t, b_t, g = params.matrices()
    loss = 0.0
    picks = source.picks(step)
    for slot, idx in enumerate(picks):
        x, y = source.batch(step, slot, int(idx))
        y_hat = ste.quantized_winograd(x, source.weight(int(idx)), a_t, b_t, g, ste.StePolicy(),
                                       cfg.group_size, cfg.bits, source.catalog[int(idx)].shape.padding)
        loss = loss - ste.sqnr_db(y, y_hat)
    return loss / len(picks)


def _sgd_step(tensors, lr: float, clip: float) -> float:
    """Clipped SGD update in place; returns the pre-clip gradient norm."""
    norm = math.sqrt(sum(float((p.grad.double() ** 2).sum()) for p in tensors))
    factor = min(1.0, clip / (norm + 1e-12))
    with torch.no_grad():
        for p in tensors:
            p -= (lr * factor) * p.grad
    return norm


def _project_scales(params: ste.ScaleParams) -> None:
    """Push any |s| below MIN_ABS_SCALE back out to MIN_ABS_SCALE (sign kept)."""
    with torch.no_grad():
        for p in params.parameters():
            small = p.abs() < MIN_ABS_SCALE
            if bool(small.any()):
                sign = torch.where(p < 0, -torch.ones_like(p), torch.ones_like(p))
                p[small] = (sign * MIN_ABS_SCALE)[small]


def _run(params, catalog: LayerCatalog, cfg: TuneConfig, first_step: int, on_step, log):
    source = _TrainBatchSource(catalog, cfg)
    trace = []
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # fixed reduction order
    try:
        for k in range(cfg.steps):
            step = first_step + k
            for p in params.parameters():
                p.grad = None
            loss = _step_loss(params, source, step, cfg)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TuneDiverged(f"loss became {value} at step {step}", on_step(None))
            loss.backward()
            grads_ok = all(torch.isfinite(p.grad).all() for p in params.parameters())
            if not grads_ok:
                raise TuneDiverged(f"non-finite gradient at step {step}", on_step(None))
            norm = _sgd_step(params.parameters(), cfg.lr, cfg.clip_norm)
            on_step(value)
            trace.append(value)
            if log and cfg.log_every and (k % cfg.log_every == 0 or k == cfg.steps - 1):
                log(f"step {step:6d}  loss {value:.9g}  |grad| {norm:.9g}")
    finally:
        torch.set_num_threads(prev_threads)
    return trace


def tune_scales(catalog: LayerCatalog, cfg: TuneConfig, init: Optional[ScaleSet] = None,
                first_step: int = 0, log=None):
    """Learn one ``(s_b, s_g)`` for the whole catalog; returns ``(ScaleSet, TuneReport)``.

    ``init`` resumes from saved scales (default: the standard scales).
    ``first_step`` offsets the per-step seeds so a resumed run sees new noise.
    """
    cfg.validate(len(catalog))
    base = standard_transform(cfg.tile)
    start = init if init is not None else base.scales
    if start.n != base.n:
        raise InvalidSpec(f"{cfg.tile} needs {base.n} scales, got {start.n}")
    params = ste.ScaleParams(base, start.s_b, start.s_g)
    t0 = time.perf_counter()
    initial = evaluate(catalog, rescale_transform(base, start.s_b, start.s_g), cfg)
    last_good = [start]

    def on_step(value):
        if value is None:
            return last_good[0]
        _project_scales(params)
        last_good[0] = ScaleSet(params.s_b.detach().numpy().copy(), params.s_g.detach().numpy().copy())

    trace = _run(params, catalog, cfg, first_step, on_step, log)
    learned = last_good[0]
    final = evaluate(catalog, rescale_transform(base, learned.s_b, learned.s_g), cfg)
    report = TuneReport(
        mode="scales", tile=cfg.tile, steps=cfg.steps, param_count=2 * base.n,
        layers=catalog.describe(), loss_trace=trace, initial_sqnr=initial, final_sqnr=final,
        wall_time_s=time.perf_counter() - t0, scales=learned.to_json(cfg.tile),
    )
    return learned, report


def tune_transforms(catalog: LayerCatalog, cfg: TuneConfig, log=None):
    """Baseline: every entry of ``A^T``, ``B^T`` and ``G`` is free.

    Returns ``(dict(a_t, b_t, g), TuneReport)``.
    """
    cfg.validate(len(catalog))
    base = standard_transform(cfg.tile)
    params = ste.MatrixParams(base)
    t0 = time.perf_counter()
    initial = evaluate(catalog, base, cfg)
    snapshot = lambda: {k: v.detach().numpy().copy() for k, v in  # noqa: E731
                        (("a_t", params.a_t), ("b_t", params.b_t), ("g", params.g))}
    last_good = [snapshot()]

    def on_step(value):
        if value is None:
            return last_good[0]
        last_good[0] = snapshot()

    trace = _run(params, catalog, cfg, 0, on_step, log)
    mats = last_good[0]
    final = evaluate(catalog, with_matrices(base, mats["a_t"], mats["b_t"], mats["g"]), cfg)
    n, m, r = base.n, base.m, base.r
    report = TuneReport(
        mode="transforms", tile=cfg.tile, steps=cfg.steps, param_count=n * (m + n + r),
        layers=catalog.describe(), loss_trace=trace, initial_sqnr=initial, final_sqnr=final,
        wall_time_s=time.perf_counter() - t0,
        matrices={k: v.tolist() for k, v in mats.items()},
    )
    return mats, report


# ---------------------------------------------------------------- gradients

@dataclass
class GradientCheck:
    loss: float
    analytic: np.ndarray  # (2n,) d loss / d (s_b, s_g)
    numeric: Optional[np.ndarray] = None

    def rel_errors(self) -> np.ndarray:
        denom = np.maximum(np.abs(self.numeric), 1e-300)
        return np.abs(self.analytic - self.numeric) / denom


def _layer_loss(layer: CatalogLayer, tile: str, s_b, s_g, x, y, policy, group_size, bits):
    params = ste.ScaleParams(standard_transform(tile), s_b, s_g, dtype=torch.float64)
    y_hat = ste.quantized_winograd(x, torch.from_numpy(layer.weight.astype(np.float64)),
                                   *params.matrices(), policy, group_size, bits, layer.shape.padding)
    return -ste.sqnr_db(y, y_hat), params


def ste_gradients(layer: CatalogLayer, scales: ScaleSet, noise: RngSpec, tile: str = "F63",
                  group_size: int = 64, bits: int = 8, mode: str = "ste",
                  finite_difference: bool = False, rel_step: float = 1e-4) -> GradientCheck:
    """Gradient of ``-SQNR`` for one layer w.r.t. ``(s_b, s_g)``, in float64.

    ``mode`` is a ``StePolicy`` mode.  With ``finite_difference=True`` the
    rounding residuals of the base point are recorded and frozen, which
    removes the rounding steps from the function; central differences
    (step ``rel_step * |s|``) of that smooth surrogate are returned next to
    the analytic gradient.  At the base point the surrogate's exact
    gradient is the straight-through gradient.
    """
    tile = tile_name(tile)
    s = layer.shape
    x64 = sample(noise, s.n * s.c_in * s.h * s.w).astype(np.float32).reshape(s.n, s.c_in, s.h, s.w)
    x = torch.from_numpy(x64.astype(np.float64))
    y = torch.from_numpy(conv_direct_f64(x64, layer.weight, s))
    if finite_difference and mode == "ste":
        mode = "record"
    policy = ste.StePolicy(mode)
    loss, params = _layer_loss(layer, tile, scales.s_b, scales.s_g, x, y, policy, group_size, bits)
    loss.backward()
    analytic = np.concatenate([params.s_b.grad.numpy(), params.s_g.grad.numpy()])
    result = GradientCheck(float(loss.detach()), analytic)
    if not finite_difference:
        return result
    base = np.concatenate([scales.s_b, scales.s_g])
    n = scales.n
    numeric = np.empty_like(base)
    with torch.no_grad():
        for i in range(base.size):
            h = rel_step * abs(base[i])
            vals = []
            for sign in (1.0, -1.0):
                v = base.copy()
                v[i] += sign * h
                frozen = policy.freeze() if mode == "record" else ste.StePolicy(mode)
                vals.append(float(_layer_loss(layer, tile, v[:n], v[n:], x, y, frozen, group_size, bits)[0]))
            numeric[i] = (vals[0] - vals[1]) / (2 * h)
    result.numeric = numeric
    return result


# ---------------------------------------------------------------- transfer

def transfer_check(scales: ScaleSet, cfg: TuneConfig, count: int = 4, seed: int = 1000) -> dict:
    """SQNR with standard vs given scales on layer shapes outside the training menu."""
    catalog = build_catalog(count, seed, UNSEEN_CHANNELS, UNSEEN_SIZES)
    base = standard_transform(cfg.tile)
    before = evaluate(catalog, base, cfg)
    after = evaluate(catalog, rescale_transform(base, scales.s_b, scales.s_g), cfg)
    return {"layers": catalog.describe(), "standard_sqnr": before, "learned_sqnr": after,
            "gain_db": float(np.mean(after) - np.mean(before))}
