"""Benchmark harness: report schema, skip rules, ratios, CSV, fidelity ordering."""

import csv
import json

import pytest

from winoq.bench import (
    CONV_MODES, UNET_MENU, fidelity_layers, menu_shapes, run_conv_bench, run_fidelity_suite, time_call,
    winograd_skip_reason,
)
from winoq.conv_ref import ConvShape
from winoq.transforms import load_scales, standard_scales


@pytest.fixture(scope="module")
def conv_report():
    shapes = [ConvShape(1, 16, 12, 12, 16), ConvShape(1, 16, 1, 1, 16)]
    return run_conv_bench(shapes, CONV_MODES, [1], "F63", reps=2, warmup=0)


def test_menu():
    shapes = menu_shapes()
    assert len(shapes) == len(UNET_MENU) == 6
    assert {(s.c_in, s.h) for s in shapes} == {(c, h) for c in (128, 256, 320) for h in (32, 64)}
    assert all(s.c_in == s.c_out and s.h == s.w for s in shapes)


def test_time_call_counts():
    calls = []
    stats = time_call(lambda: calls.append(1), reps=4, warmup=2)
    assert len(calls) == 6 and stats["reps"] == 4 and 0 <= stats["min_s"] <= stats["median_s"]


def test_skip_rule():
    assert winograd_skip_reason(ConvShape(1, 1, 1, 1, 1), "F63") is not None
    assert winograd_skip_reason(ConvShape(1, 1, 5, 5, 1), "F63") is not None
    assert winograd_skip_reason(ConvShape(1, 1, 5, 5, 1), "F43") is None


def test_conv_report_schema(conv_report, tmp_path):
    doc = conv_report.to_json()
    assert set(doc) == {"suite", "machine", "config", "cases", "summary"}
    assert len(doc["cases"]) == 2 * len(CONV_MODES)
    fp = [c for c in doc["cases"] if c["mode"] == "fp" and not c["skipped"]]
    assert all(c["sqnr_db"] == 300.0 for c in fp)
    by_mode = {c["mode"]: c for c in doc["cases"] if c["shape"]["h"] == 12}
    assert by_mode["wino-fp"]["sqnr_db"] > 80 and by_mode["direct-q8"]["sqnr_db"] > 30
    skipped = [c for c in doc["cases"] if c["skipped"]]
    assert {c["mode"] for c in skipped} == {"wino-fp", "wino-q8"} and all(c["shape"]["h"] == 1 for c in skipped)
    json.dumps(doc)


def test_ratio_fields(conv_report):
    ratios = conv_report.summary["ratios"]
    timed, skipped = ratios
    assert timed["speedup"] == pytest.approx(1 / timed["wino_over_direct"])
    assert skipped["speedup"] is None and "tile" in skipped["reason"]
    assert conv_report.summary["shapes_timed"] == 1


def test_csv(conv_report, tmp_path):
    conv_report.save_csv(tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert len(rows) == 2 * len(CONV_MODES)
    assert {"mode", "median_s", "sqnr_db", "shape_c_in"} <= set(rows[0])


def test_fidelity_learned_beats_standard():
    from importlib import resources

    with resources.as_file(resources.files("winoq") / "data" / "learned_f63.json") as p:
        tile, learned = load_scales(p)
    report = run_fidelity_suite(tile, learned, fidelity_layers(2))
    s = report.summary
    assert s["learned_beats_standard_everywhere"]
    assert s["standard_mean_db"] < 0 < 10 < s["learned_mean_db"]
    for case in report.cases:
        assert case["learned_tap_ratio"] < case["standard_tap_ratio"]


def test_fidelity_with_standard_as_learned_is_a_tie():
    report = run_fidelity_suite("F43", standard_scales("F43"), fidelity_layers(1))
    case = report.cases[0]
    assert case["learned_sqnr_db"] == case["standard_sqnr_db"]
    assert not report.summary["learned_beats_standard_everywhere"]
