"""Scale tuner: loop mechanics, determinism, gradients (short runs only)."""

import json

import numpy as np
import pytest
import torch

from winoq import ste
from winoq.errors import FormatError, InvalidSpec, TuneDiverged
from winoq.scale_tuner import (
    LayerCatalog, TuneConfig, _project_scales, build_catalog, make_layer, ste_gradients, tune_scales,
    tune_transforms,
)
from winoq.tensor import RngSpec
from winoq.transforms import ScaleSet, load_scales, standard_scales, standard_transform


@pytest.fixture(scope="module")
def tiny():
    return LayerCatalog(tuple(make_layer(32, 32, 12, seed) for seed in range(3)))


def short(**kw):
    base = dict(epochs=1, batches_per_epoch=6, layers_per_step=2, group_size=32, catalog_size=3)
    base.update(kw)
    return TuneConfig(**base)


def test_zero_lr_is_identity(tiny):
    scales, report = tune_scales(tiny, short(lr=0.0))
    assert scales == standard_scales("F63")
    assert report.final_sqnr == report.initial_sqnr
    assert len(report.loss_trace) == 6 and report.param_count == 16


def test_zero_lr_transforms_unchanged(tiny):
    mats, report = tune_transforms(tiny, short(lr=0.0, batches_per_epoch=2))
    t = standard_transform("F63")
    assert np.array_equal(mats["a_t"], t.a_t) and np.array_equal(mats["b_t"], t.b_t)
    assert np.array_equal(mats["g"], t.g)
    assert report.param_count == 8 * (6 + 8 + 3)
    assert report.final_sqnr == report.initial_sqnr


def test_training_is_deterministic_and_keeps_constraint(tiny):
    a, ra = tune_scales(tiny, short(lr=1e-3))
    b, rb = tune_scales(tiny, short(lr=1e-3))
    assert a == b and ra.loss_trace == rb.loss_trace
    assert a != standard_scales("F63")
    assert a.residual() <= 1e-9


def test_training_improves_quickly(tiny):
    _, report = tune_scales(tiny, short(lr=1e-3, batches_per_epoch=40))
    assert report.gain_db > 3.0 and not report.regressed


def test_resume_reproduces_uninterrupted_run(tiny, tmp_path):
    _, full = tune_scales(tiny, short(batches_per_epoch=10))
    first, _ = tune_scales(tiny, short(batches_per_epoch=6))
    first.save(tmp_path / "ckpt.json", "F63")
    _, init = load_scales(tmp_path / "ckpt.json")
    _, resumed = tune_scales(tiny, short(batches_per_epoch=4), init=init, first_step=6)
    assert resumed.loss_trace == full.loss_trace[6:]
    assert abs(resumed.loss_trace[0] - full.loss_trace[5]) < 1.0


def test_divergence_raises_with_last_good(tiny, monkeypatch):
    calls = {"n": 0}
    real = ste.sqnr_db

    def flaky(y, y_hat):
        calls["n"] += 1
        return real(y, y_hat) * (float("nan") if calls["n"] > 4 else 1.0)

    monkeypatch.setattr(ste, "sqnr_db", flaky)
    with pytest.raises(TuneDiverged) as info:
        tune_scales(tiny, short())
    good = info.value.last_good
    assert isinstance(good, ScaleSet) and good != standard_scales("F63")


def test_projection_keeps_scales_away_from_zero():
    t = standard_transform("F43")
    params = ste.ScaleParams(t, [1e-9, -1e-8, 1, 1, 1, 1], [0.5] * 6)
    _project_scales(params)
    assert params.s_b.detach().numpy()[:2].tolist() == [1e-6, -1e-6]


def test_config_json(tmp_path):
    cfg = TuneConfig(epochs=3, lr=5e-4, tile="f43", noise={"kind": "uniform", "lo": -1, "hi": 1})
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_json()))
    back = TuneConfig.load(tmp_path / "c.json")
    assert back == cfg.validate()
    (tmp_path / "bad.json").write_text(json.dumps({"epochs": 1, "bogus": 2}))
    with pytest.raises(FormatError):
        TuneConfig.load(tmp_path / "bad.json")


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(layers_per_step=9), dict(lr=-1.0), dict(tile="F23"),
                                dict(noise={"kind": "laplace"})])
def test_invalid_configs(kw):
    with pytest.raises((InvalidSpec, ValueError)):
        TuneConfig(**kw).validate()


def test_catalog_menu_and_weights():
    cat = build_catalog(8, seed=0)
    for layer in cat:
        s = layer.shape
        assert s.c_in in (32, 64, 128) and s.c_out in (32, 64, 128) and s.h in (16, 32)
        assert abs(layer.weight.std() - np.sqrt(2 / (9 * s.c_in))) < 0.1 * np.sqrt(2 / (9 * s.c_in))
    assert [l.name for l in build_catalog(8, 0)] == [l.name for l in cat]
    with pytest.raises(InvalidSpec):
        LayerCatalog(())


def test_report_json_roundtrip(tiny, tmp_path):
    _, report = tune_scales(tiny, short(batches_per_epoch=2))
    report.save(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["mode"] == "scales" and len(doc["loss_trace"]) == 2
    assert doc["gain_db"] == pytest.approx(report.gain_db)


def perturbed(tile, seed, spread=0.2):
    sc = standard_scales(tile)
    rng = np.random.default_rng(seed)
    return ScaleSet(sc.s_b * (1 + spread * rng.uniform(-1, 1, sc.n)),
                    sc.s_g * (1 + spread * rng.uniform(-1, 1, sc.n)))


def test_gradient_matches_finite_differences():
    layer = make_layer(32, 16, 12, 3)
    check = ste_gradients(layer, perturbed("F43", 3), RngSpec.gaussian(3), tile="F43", group_size=32,
                          finite_difference=True)
    assert check.analytic.shape == (12,)
    assert (check.rel_errors() <= 0.05).all()


def test_identical_batches_give_identical_gradients():
    layer = make_layer(32, 16, 12, 4)
    a = ste_gradients(layer, perturbed("F63", 4), RngSpec.gaussian(4), group_size=32)
    b = ste_gradients(layer, perturbed("F63", 4), RngSpec.gaussian(4), group_size=32)
    assert np.array_equal(a.analytic, b.analytic) and a.loss == b.loss


def test_fp_path_reconstruction_error_is_stationary_at_standard_scales():
    layer = make_layer(16, 8, 12, 5)
    t = standard_transform("F63")
    params = ste.ScaleParams(t, t.scales.s_b, t.scales.s_g, dtype=torch.float64)
    rng = np.random.default_rng(5)
    x = torch.from_numpy(rng.standard_normal((1, 16, 12, 12)))
    w = torch.from_numpy(layer.weight.astype(np.float64))
    y = torch.nn.functional.conv2d(x, w, padding=1)
    y_hat = ste.quantized_winograd(x, w, *params.matrices(), ste.StePolicy("off"))
    err = ((y - y_hat) ** 2).sum() / (y ** 2).sum()
    err.backward()
    assert float(err.detach()) < 1e-24
    grads = np.concatenate([params.s_b.grad.numpy(), params.s_g.grad.numpy()])
    assert np.abs(grads).max() < 1e-10
