"""Printed reference tables for the standard F(4,3) and F(6,3) transforms.

The tables below are transcribed exactly as printed, including entries that
disagree with the Vandermonde construction.  ``PRINTED_TYPOS`` lists every
such entry as ``(row, col, printed, constructed)``.  Matrices in this
package are always derived by construction; these tables are test goldens
only.

Two printings of the F(6,3) tables exist.  ``TABLES`` holds the later one;
``EARLIER_PRINTING`` holds the entries where the earlier one differs from
it (sign errors in G rows 1-3 and in A^T row 5).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def _m(rows):
    return np.array([[float(Fraction(v)) for v in row.split()] for row in rows], dtype=np.float64)


TABLES = {
    "F43": {
        "v_nm": _m([
            "1 0 0 0",
            "1 1 1 1",
            "1 -1 1 -1",
            "1 2 4 8",
            "1 -2 4 -8",
            "0 0 0 1",
        ]),
        "v_inv_t": _m([
            "1 0 -5/4 0 1/4 0",
            "0 2/3 2/3 -1/6 -1/6 0",
            "0 -2/3 2/3 1/6 -1/6 0",
            "0 -1/12 -1/24 1/12 1/24 0",
            "0 1/12 -1/24 -1/12 1/24 0",
            "0 4 0 -5 0 1",
        ]),
        "v_nr": _m([
            "1 0 0",
            "1 1 1",
            "1 -1 1",
            "1 2 4",
            "1 -2 4",
            "0 0 1",
        ]),
        "a_t": _m([
            "1 1 1 1 1 0",
            "0 1 -1 2 -2 0",
            "0 1 1 4 4 0",
            "0 1 -1 8 -8 1",
        ]),
        "b_t": _m([
            "4 0 -5 0 1 0",
            "0 -4 -4 1 1 0",
            "0 4 -4 -1 1 0",
            "0 -2 -1 2 1 0",
            "0 2 -1 -2 1 0",
            "0 4 0 -5 0 1",
        ]),
        "g": _m([
            "1/4 0 0",
            "-1/6 -1/6 -1/6",
            "-1/6 1/6 -1/6",
            "1/24 1/12 1/6",
            "1/24 -1/12 1/6",
            "0 0 1",
        ]),
    },
    "F63": {
        "v_nm": _m([
            "1 0 0 0 0 0",
            "1 1 1 1 1 0",
            "1 -1 1 -1 1 -1",
            "1 2 4 8 16 32",
            "1 -2 4 -8 16 -32",
            "1 1/2 1/4 1/8 1/16 1/32",
            "1 -1/2 1/4 -1/8 1/16 -1/32",
            "0 0 0 0 0 1",
        ]),
        "v_inv_t": _m([
            "1 0 -21/4 0 21/4 0 -1 0",
            "0 -2/9 -2/9 17/18 17/18 -2/9 -2/9 0",
            "0 2/9 -2/9 -17/18 -17/18 2/9 -2/9 0",
            "0 1/180 1/360 -1/36 -1/72 1/45 1/90 0",
            "0 -1/180 1/360 1/36 -1/72 -1/45 1/90 0",
            "0 64/45 128/45 -16/9 -32/9 16/45 32/45 0",
            "0 -64/45 128/45 16/9 -32/9 -16/45 32/45 0",
            "0 -1/4 0 21/4 0 -21/4 0 1",
        ]),
        "v_nr": _m([
            "1 0 0",
            "1 1 1",
            "1 -1 1",
            "1 2 4",
            "1 -2 4",
            "1 1/2 1/4",
            "1 -1/2 1/4",
            "0 0 1",
        ]),
        "a_t": _m([
            "1 1 1 1 1 1 1 0",
            "0 1 -1 2 -2 1/2 -1/2 0",
            "0 1 1 4 4 1/4 1/4 0",
            "0 1 -1 8 -8 1/8 -1/8 0",
            "0 1 1 16 16 1/16 1/16 0",
            "0 1 -1 32 -32 1/32 -1/32 0",
        ]),
        "b_t": _m([
            "4 0 -21 0 21 0 -4 0",
            "0 4 4 -17 -17 4 4 0",
            "0 -4 4 17 -17 -4 4 0",
            "0 2 1 -10 -5 8 4 0",
            "0 -2 1 10 -5 -8 4 0",
            "0 8 16 -10 -20 2 4 0",
            "0 -8 16 10 -20 -2 4 0",
            "0 -4 0 21 0 -21 0 4",
        ]) / 4.0,
        "g": _m([
            "1 0 0",
            "-2/9 -2/9 -2/9",
            "-2/9 2/9 -2/9",
            "1/90 1/45 2/45",
            "1/90 -1/45 2/45",
            "32/45 16/45 8/45",
            "32/45 -16/45 8/45",
            "0 0 1",
        ]),
    },
}

# (row, col, printed, constructed): entries of TABLES known to be misprinted.
PRINTED_TYPOS = {
    ("F63", "v_nm"): [(1, 5, 0.0, 1.0)],
    ("F63", "v_inv_t"): [(2, 4, -17 / 18, 17 / 18), (7, 1, -0.25, -1.0)],
    ("F63", "a_t"): [(5, 7, 0.0, 1.0)],
}

# Entries where the earlier printing differs from TABLES (all are misprints).
EARLIER_PRINTING = {
    ("F63", "a_t"): [(5, 2, 1.0)],
    ("F63", "g"): [(1, 2, 2 / 9), (2, 2, 2 / 9), (3, 2, -2 / 45)],
}


def constructed(transform, name: str) -> np.ndarray:
    """The matrix of ``transform`` that corresponds to table ``name``."""
    return {
        "v_nm": transform.v_a.T,
        "v_inv_t": transform.v_b,
        "v_nr": transform.v_g,
        "a_t": transform.a_t,
        "b_t": transform.b_t,
        "g": transform.g,
    }[name]


def compare(transform, tile: str, tol: float = 1e-12):
    """Yield ``(name, row, col, printed, built, documented)`` for every entry off by more than ``tol``."""
    for name, printed in TABLES[tile].items():
        built = constructed(transform, name)
        documented = {(r, c) for r, c, _, _ in PRINTED_TYPOS.get((tile, name), [])}
        for r, c in zip(*np.nonzero(np.abs(built - printed) > tol)):
            yield name, int(r), int(c), float(printed[r, c]), float(built[r, c]), (int(r), int(c)) in documented
