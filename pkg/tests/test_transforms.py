"""Transform construction, scale sets and the printed golden tables."""

import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from winoq import golden
from winoq.errors import FormatError, InvalidScale, SingularTransform
from winoq.transforms import (
    STANDARD_POINTS, ScaleSet, build_transform, load_scales, rescale_transform, scales_from_json,
    standard_scales, standard_transform, tile_correlation, tile_name, vandermonde, winograd_tile,
)

TILES = ("F43", "F63")


def exact_transform(tile):
    """Exact rational A^T, B^T, G via sympy (independent of numpy.linalg)."""
    pts = [(sp.Rational(str(f)), sp.Rational(str(g))) for f, g in STANDARD_POINTS[tile]]
    n = len(pts)
    m = n - 2

    def vdm(cols):
        return sp.Matrix(n, cols, lambda i, j: pts[i][0] ** j * pts[i][1] ** (cols - 1 - j))

    sc = standard_scales(tile)
    sb = [sp.nsimplify(v) for v in sc.s_b]
    sg = [sp.nsimplify(v) for v in sc.s_g]
    sa = [1 / (b * g) for b, g in zip(sb, sg)]
    a_t = vdm(m).T * sp.diag(*sa)
    b_t = sp.diag(*sb) * vdm(n).inv().T
    g = sp.diag(*sg) * vdm(3)
    return [np.array(mat.tolist(), dtype=np.float64) for mat in (a_t, b_t, g)]


@pytest.mark.parametrize("tile", TILES)
def test_construction_matches_exact_rationals(tile):
    t = standard_transform(tile)
    for built, exact in zip((t.a_t, t.b_t, t.g), exact_transform(tile)):
        np.testing.assert_allclose(built, exact, rtol=0, atol=1e-12)


def test_f43_b_t_first_row_and_a_t_shape():
    t = standard_transform("F43")
    assert t.b_t[0].tolist() == [4, 0, -5, 0, 1, 0]
    assert t.a_t.shape == (4, 6) and t.g.shape == (6, 3)


@pytest.mark.parametrize("tile", TILES)
def test_golden_tables_match_except_documented_typos(tile):
    t = standard_transform(tile)
    mismatches = list(golden.compare(t, tile, tol=1e-12))
    assert all(m[5] for m in mismatches), [m for m in mismatches if not m[5]]
    listed = {(name, r, c) for (tl, name), rows in golden.PRINTED_TYPOS.items() if tl == tile
              for r, c, _, _ in rows}
    assert {(m[0], m[1], m[2]) for m in mismatches} == listed


def test_documented_typos_record_printed_and_constructed_values():
    for (tile, name), rows in golden.PRINTED_TYPOS.items():
        built = golden.constructed(standard_transform(tile), name)
        for r, c, printed, constructed in rows:
            assert golden.TABLES[tile][name][r, c] == pytest.approx(printed)
            assert built[r, c] == pytest.approx(constructed, abs=1e-12)


def test_earlier_printing_g_signs_disagree_with_construction():
    g = standard_transform("F63").g
    for r, c, printed in golden.EARLIER_PRINTING[("F63", "g")]:
        assert g[r, c] == pytest.approx(-printed)


@pytest.mark.parametrize("tile", TILES)
def test_single_tile_is_exact_correlation(tile):
    t = standard_transform(tile)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal((t.n, t.n))
        w = rng.standard_normal((3, 3))
        np.testing.assert_allclose(winograd_tile(t, x, w), tile_correlation(x, w), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(TILES), st.lists(st.floats(0.05, 20.0), min_size=16, max_size=16),
       st.lists(st.booleans(), min_size=16, max_size=16))
def test_any_scales_keep_exactness_and_constraint(tile, mags, signs):
    t = standard_transform(tile)
    v = np.array(mags[: 2 * t.n]) * np.where(signs[: 2 * t.n], -1.0, 1.0)
    r = rescale_transform(t, t.scales.s_b * v[: t.n], t.scales.s_g * v[t.n:])
    assert r.scales.residual() <= 1e-9
    rng = np.random.default_rng(1)
    x = rng.standard_normal((t.n, t.n))
    w = rng.standard_normal((3, 3))
    np.testing.assert_allclose(winograd_tile(r, x, w), tile_correlation(x, w), atol=1e-7)


def test_vandermonde_point_at_infinity():
    v = vandermonde([(2, 1), (1, 0)], 3)
    assert v.tolist() == [[1, 2, 4], [0, 0, 1]]


def test_singular_points_rejected():
    with pytest.raises(SingularTransform):
        build_transform(2, 3, [(0, 1), (1, 1), (2, 2), (1, 0)], ScaleSet([1] * 4, [1] * 4))
    with pytest.raises(SingularTransform):
        build_transform(2, 3, [(0, 0), (1, 1), (2, 1), (1, 0)], ScaleSet([1] * 4, [1] * 4))


def test_custom_points_build_exact_transform():
    pts = [(0, 1), (1, 1), (-1, 1), (3, 1), (1, 0)]
    t = build_transform(3, 3, pts, ScaleSet([1] * 5, [1] * 5))
    rng = np.random.default_rng(2)
    x, w = rng.standard_normal((5, 5)), rng.standard_normal((3, 3))
    np.testing.assert_allclose(winograd_tile(t, x, w), tile_correlation(x, w), atol=1e-10)


def test_scale_set_rejects_zero_and_nonfinite():
    with pytest.raises(InvalidScale):
        ScaleSet([1, 0], [1, 1])
    with pytest.raises(InvalidScale):
        ScaleSet([1, np.inf], [1, 1])
    with pytest.raises(InvalidScale):
        ScaleSet([1, 1], [1, 1, 1])


def test_scales_json_roundtrip(tmp_path):
    sc = ScaleSet(np.linspace(1, 2, 8), -np.linspace(0.5, 3, 8))
    sc.save(tmp_path / "s.json", "f63")
    tile, back = load_scales(tmp_path / "s.json")
    assert tile == "F63" and back == sc


@pytest.mark.parametrize("doc", [
    {"tile": "F63", "s_b": [1] * 8},
    {"tile": "F99", "s_b": [1] * 8, "s_g": [1] * 8},
    {"tile": "F63", "s_b": [1] * 6, "s_g": [1] * 6},
    {"tile": "F63", "s_b": ["a"] * 8, "s_g": [1] * 8},
])
def test_bad_scale_documents(doc):
    with pytest.raises((FormatError, InvalidScale)):
        scales_from_json(doc)


def test_bad_json_file(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        load_scales(tmp_path / "bad.json")


def test_tile_names():
    assert tile_name("f43") == tile_name("F(4,3)") == "F43"
    with pytest.raises(ValueError):
        tile_name("F23")
    assert json.loads(json.dumps(standard_scales("F63").to_json("F63")))["tile"] == "F63"
