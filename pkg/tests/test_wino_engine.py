"""Winograd engine: float, fake-quant and integer pipelines."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from winoq import ste
from winoq.checks import rel_error
from winoq.conv_ref import ConvShape, conv_direct_f64
from winoq.errors import ComputeError, InvalidShape, InvalidSpec, UndefinedMetric
from winoq.quantizer import sqnr
from winoq.transforms import rescale_transform, standard_transform
from winoq.wino_engine import (
    WinoDomainTensor, WinoQ8Conv, make_plan, range_ratio, tap_range_stats, tile_input, untile_output,
    wino_conv, wino_conv_fp, winograd_domain_output,
)


def gaussian_case(seed, n=1, c=16, h=12, w=12, k=8):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = (rng.standard_normal((k, c, 3, 3)) * np.sqrt(2 / (9 * c))).astype(np.float32)
    return x, wt


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["F43", "F63"]), st.integers(1, 2), st.integers(1, 10), st.integers(1, 23),
       st.integers(1, 23), st.integers(1, 9), st.integers(0, 1), st.integers(0, 2**32 - 1))
def test_fp_equals_direct(tile, n, c, h, w, k, padding, seed):
    if padding == 0 and min(h, w) < 3:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = rng.standard_normal((k, c, 3, 3)).astype(np.float32)
    y = wino_conv(x, wt, standard_transform(tile), "fp", padding=padding).data
    assert rel_error(y, conv_direct_f64(x, wt, ConvShape.infer(x, wt, padding))) <= 1e-4


def test_fp_float64_is_near_exact():
    x, w = gaussian_case(0)
    y = wino_conv_fp(x, w, standard_transform("F63"), dtype=np.float64)
    assert rel_error(y, conv_direct_f64(x, w)) < 1e-12


@pytest.mark.parametrize("tile", ["F43", "F63"])
@pytest.mark.parametrize("seed", range(4))
def test_int8_equals_fake_quant(tile, seed):
    x, w = gaussian_case(seed, c=40, k=24, h=13, w=10)
    t = standard_transform(tile)
    a = wino_conv(x, w, t, "int8", group_size=32).data
    b = wino_conv(x, w, t, "fake_quant", group_size=32).data
    assert rel_error(a, b) <= 1e-5


def test_torch_mirror_matches_engine():
    # the differentiable forward used for training is the same pipeline as the engine
    x, w = gaussian_case(5, c=64, k=32, h=16, w=16)
    for tile in ("F43", "F63"):
        t = standard_transform(tile)
        engine = wino_conv(x, w, t, "fake_quant").data
        params = ste.ScaleParams(t, t.scales.s_b, t.scales.s_g)
        mirror = ste.quantized_winograd(torch.from_numpy(x), torch.from_numpy(w), *params.matrices(),
                                        ste.StePolicy()).detach().numpy()
        assert sqnr(engine, mirror) > 40


def test_standard_f63_fails_and_f43_does_better():
    x, w = gaussian_case(1, c=64, k=64, h=16, w=16)
    ref = conv_direct_f64(x, w)
    s63 = sqnr(ref, wino_conv(x, w, standard_transform("F63"), "int8"))
    s43 = sqnr(ref, wino_conv(x, w, standard_transform("F43"), "int8"))
    assert s63 < 5.0 < s43


def test_tiles_cover_padded_input_and_untile_inverts():
    x = np.arange(2 * 3 * 7 * 9, dtype=np.float32).reshape(2, 3, 7, 9)
    t = standard_transform("F43")
    shape = ConvShape(2, 3, 7, 9, 1)
    plan = make_plan(t, shape)
    tiles = tile_input(x, plan)
    assert tiles.shape == (plan.tiles, 3, 6, 6)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 8), (1, 8)))
    p = 1 * plan.tiles_w + 2  # image 0, tile row 1, tile column 2
    assert np.array_equal(tiles[p], xp[0, :, 4:10, 8:14])
    # untile places each tile's m x m block at its output position
    yt = np.random.default_rng(0).standard_normal((plan.tiles, 5, 4, 4))
    y = untile_output(yt, plan)
    assert y.shape == (2, 5, 7, 9)
    assert np.array_equal(y[1, :, 4:7, 0:4], yt[plan.tiles_h * plan.tiles_w + plan.tiles_w, :, :3, :])


def test_domain_output_and_tap_stats():
    x, w = gaussian_case(2)
    t = standard_transform("F63")
    Y = winograd_domain_output(x, w, t, quantized=False)
    assert Y.values.shape == (64, 4, 8)
    rel = tap_range_stats(Y)
    assert rel.shape == (8, 8) and rel.mean() == pytest.approx(1.0)
    assert range_ratio(rel) > 100  # standard F(6,3) taps span orders of magnitude
    with pytest.raises(UndefinedMetric):
        tap_range_stats(WinoDomainTensor(2, values=np.ones((4, 1, 1))))
    assert range_ratio(np.array([[0.0, 1.0]])) == float("inf")


def test_keep_domain_and_rescaled_transform():
    x, w = gaussian_case(3)
    t = standard_transform("F63")
    scaled = rescale_transform(t, t.scales.s_b * 2, t.scales.s_g * 0.5)
    conv = WinoQ8Conv(w, scaled, ConvShape.infer(x, w), 16)
    y = conv(x, keep_domain=True)
    assert conv.last_Y is not None and conv.last_Y.values.shape[0] == 64
    assert sqnr(conv_direct_f64(x, w), y) > -10


def test_errors():
    x, w = gaussian_case(4)
    t = standard_transform("F43")
    bad = x.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ComputeError):
        wino_conv(bad, w, t, "int8", group_size=16)
    with pytest.raises(InvalidSpec):
        wino_conv(x, w, t, "int8", group_size=48)
    with pytest.raises(InvalidShape):
        wino_conv(x, w[:, :3], t, "fp")
    with pytest.raises(ValueError):
        wino_conv(x, w, t, "bogus")
