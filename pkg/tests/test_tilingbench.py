import math

import numpy as np
import pytest

from fryumqkd.tilingbench import (BETA, PACKING_CSV_HEADER, GridSpec, border_error_breakdown, circle_packing,
                                  discarded_grid_rate, example_grid_path, fryum_annulus_segments,
                                  fryum_packing_bound, hex_packing, kept_after_border_discard,
                                  lattice_containment_count, lattice_shell_count, monte_carlo_border_error,
                                  packing_report, pixel_border_errors, uniform_grid_border_error,
                                  write_packing_csv)


def test_circle_examples():
    assert circle_packing(1) == {"radii": [1], "count": 1, "discarded": 0.0}
    c2 = circle_packing(2)
    assert c2["count"] == 7 and c2["discarded"] == 9.0
    assert circle_packing(4)["count"] == 37


def test_hexagon_constant_and_small_n():
    assert BETA == pytest.approx(3.3080, abs=1e-4)
    h1 = hex_packing(1)
    assert h1["discarded"] == pytest.approx(1 - BETA / 3) and h1["discarded"] < 0 and "note" in h1


@pytest.mark.parametrize("n", range(2, 30))
def test_hexagon_wastes_less_than_circles(n):
    assert hex_packing(n)["discarded"] < circle_packing(n)["discarded"]


def test_hexagon_area_identity():
    # pi R^2 - N * 2 sqrt(3) r^2 in units of pi r^2
    for n in range(1, 8):
        direct = (3 * n - 2) ** 2 - circle_packing(n)["count"] * 2 * math.sqrt(3) / math.pi
        assert hex_packing(n)["discarded"] == pytest.approx(direct)


def test_fryum_annulus_and_bounds():
    assert fryum_annulus_segments(3) == 14
    f2 = fryum_packing_bound(2)
    assert f2["count"] == 8 and f2["countLowerBound"] == 8
    for n in range(2, 13):
        f = fryum_packing_bound(n)
        assert f["count"] >= f["countLowerBound"]
        assert f["discarded"] <= f["discardedUpperBound"] + 1e-12
    # the published constant undercuts the exact sum
    assert fryum_packing_bound(2)["discardedUpperBoundAsPublished"] < fryum_packing_bound(2)["discarded"]


@pytest.mark.parametrize("n", range(2, 13))
def test_discarded_ordering(n):
    f = packing_report(n).fractions
    assert f["fryum"] < f["hexagon"] < 1


def test_lattice_counts():
    for n in range(1, 11):
        assert lattice_shell_count(n) == 3 * n * n - 3 * n + 1
    # pure containment admits extra atoms once the shells leave gaps at the rim
    assert [lattice_containment_count(n) for n in range(1, 8)] == [3 * n * n - 3 * n + 1 for n in range(1, 8)]
    assert lattice_containment_count(8) > lattice_shell_count(8)


def test_packing_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_packing_csv(path, 5)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == PACKING_CSV_HEADER and len(lines) == 5


FOUR = GridSpec.blocks(6, 6, 3, 3)
SINGLE = GridSpec(np.arange(36).reshape(6, 6))
WHOLE = GridSpec(np.zeros((6, 6), dtype=int))


def test_border_error_examples():
    assert uniform_grid_border_error(FOUR) == pytest.approx((16 / 4 + 4 * 7 / 16) / 36)
    assert uniform_grid_border_error(SINGLE) == pytest.approx((20 * 7 / 16 + 16 * 3 / 4) / 36)
    assert uniform_grid_border_error(WHOLE) == 0.0


def test_quarter_weights_reproduce_interior_cases():
    # pixel (2,2) of the four-block map: two foreign edges, three foreign vertices
    err = pixel_border_errors(FOUR, "quarters")
    assert err[2, 2] == pytest.approx(7 / 16)
    assert err[1, 2] == pytest.approx(1 / 4)
    assert pixel_border_errors(SINGLE, "quarters")[2, 2] == pytest.approx(3 / 4)
    with pytest.raises(ValueError):
        pixel_border_errors(FOUR, "hexes")


@pytest.mark.parametrize("g", [FOUR, SINGLE, GridSpec.blocks(7, 5, 2, 3)])
def test_monte_carlo_matches_quarter_accounting(g):
    est, se = monte_carlo_border_error(g, 400_000, seed=1)
    assert abs(est - uniform_grid_border_error(g, "quarters")) < 3 * se


def test_breakdown_counts():
    b = border_error_breakdown(FOUR)
    assert b["borderPixels"] == 20 and b["byForeignEdges"]["1"]["pixels"] == 16


def test_discarded_rates():
    d = discarded_grid_rate(FOUR, True)
    assert (d["d"], d["p"], d["epsilon"]) == (4, 16 / 36, 0.0)
    assert d["Rmod"] == pytest.approx(0.8889, abs=1e-4)
    nd = discarded_grid_rate(FOUR, False)
    assert nd["Rmod"] == pytest.approx(0.2264, abs=1e-4)
    s = discarded_grid_rate(SINGLE, True)
    assert (s["d"], s["p"]) == (9, 9 / 36) and s["Rmod"] == pytest.approx(0.7925, abs=1e-4)


def test_border_discard_keeps_no_touching_pixels():
    kept = kept_after_border_discard(SINGLE)
    rows, cols = np.nonzero(kept)
    for i, j in zip(rows, cols):
        for a, b in zip(rows, cols):
            if (a, b) != (i, j):
                assert max(abs(a - i), abs(b - j)) >= 2


def test_all_border_grid_keeps_one_pixel():
    d = discarded_grid_rate(GridSpec(np.array([[0, 1], [2, 3]])), True)
    assert d["d"] == 1 and d["Rmod"] == 0.0


def test_grid_validation(tmp_path):
    with pytest.raises(ValueError):
        GridSpec(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        GridSpec(np.array([[0.5, 1.0]]))
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        GridSpec.read_csv(empty)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("0,0\n0\n")
    with pytest.raises(ValueError):
        GridSpec.read_csv(ragged)


def test_bundled_grid():
    g = GridSpec.read_csv(example_grid_path())
    assert np.array_equal(g.labels, FOUR.labels)
