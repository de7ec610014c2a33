import math

import pytest

from fryumqkd.biphoton import SourceParams, beam_stats
from fryumqkd.fryum import InvalidSegmentation
from fryumqkd.optimizer import (CSV_HEADER, Evaluation, ValidityRules, enumerate_specs, evaluate,
                                evaluate_without_bands, is_valid, kept_fraction, sweep)
from fryumqkd.keyrate import RateReport
from fryumqkd.optimizer import _sort_key

WHEEL = (1, 6, 8, 21)
FAST = ValidityRules(epsilon_mode="fast")


@pytest.fixture(scope="module")
def beam():
    st = beam_stats(SourceParams.from_schmidt(104.6))
    return st, 2.0516 * st.sigma


def test_single_disk_valid_for_wide_aperture(beam):
    st, _ = beam
    rules = ValidityRules()
    assert is_valid((1,), st, 2 * rules.min_radial_gap(st), rules)
    assert not is_valid((1,), st, 0.5 * rules.min_radial_gap(st), rules)


def test_reference_wheel_valid(beam):
    st, r_ap = beam
    assert is_valid(WHEEL, st, r_ap)


def test_invalid_specs_report_reasons(beam):
    st, r_ap = beam
    v = is_valid((2, 6), st, r_ap)
    assert not v and any("first ring" in r for r in v.reasons)
    v = is_valid((1, 200), st, r_ap)
    assert not v and v.reasons
    assert not is_valid((1, 6), st, math.inf)


def test_arc_radius_choice_matters(beam):
    st, r_ap = beam
    assert not is_valid(WHEEL, st, r_ap, ValidityRules(arc_radius="inner"))
    assert is_valid(WHEEL, st, r_ap, ValidityRules(arc_radius="outer"))


def test_evaluate_single_macropixel_rate_is_zero(beam):
    st, r_ap = beam
    e = evaluate((1,), st, r_ap)
    assert e.report.d == 1 and e.report.Rmod == 0.0


def test_evaluate_rejects_invalid(beam):
    st, r_ap = beam
    with pytest.raises(InvalidSegmentation):
        evaluate((1, 200), st, r_ap)


def test_evaluate_wheel(beam):
    st, r_ap = beam
    e = evaluate(WHEEL, st, r_ap, ValidityRules(crosstalk_samples=200_000))
    r = e.report
    assert r.d == 36
    assert r.p == pytest.approx(kept_fraction(WHEEL, st, r_ap, ValidityRules()))
    assert r.extra["aAux"] == pytest.approx(4.9977, abs=1e-3)
    assert r.epsilon["combined"] < 0.01
    assert r.Rmod == pytest.approx(r.p * r.R)


def test_unbanded_wheel_matches_no_discard_error(beam):
    st, r_ap = beam
    e = evaluate_without_bands(WHEEL, st, r_ap, n_samples=200_000)
    assert e.report.epsilon["combined"] == pytest.approx(0.27, abs=0.02)


def test_enumeration_only_valid_and_sums_grow(beam):
    st, r_ap = beam
    specs = enumerate_specs(2, st, r_ap, FAST)
    assert specs and all(is_valid(A, st, r_ap, FAST) for A in specs)
    assert len(set(specs)) == len(specs)


def test_tie_break_prefers_smaller_n_then_lexicographic():
    rep = RateReport(8, {"combined": 0.0}, 0.5, 3.0, 1.5)
    a, b, c = Evaluation((1, 7), rep), Evaluation((1, 6, 1), rep), Evaluation((1, 5, 2), rep)
    assert sorted([b, a], key=_sort_key)[0] is a
    assert sorted([b, c], key=_sort_key)[0] is c


def test_sweep_single_n_has_one_row(beam):
    st, r_ap = beam
    res = sweep(st, r_ap, FAST, (2, 2))
    rows = res.csv_rows()
    assert len(rows) == 1 and len(rows[0]) == len(CSV_HEADER)


def test_sweep_independent_of_workers(beam):
    st, r_ap = beam
    one = sweep(st, r_ap, FAST, (2, 3), workers=1).to_dict()
    two = sweep(st, r_ap, FAST, (2, 3), workers=3).to_dict()
    assert one == two


def test_sweep_reports_empty_range(beam):
    st, r_ap = beam
    res = sweep(st, r_ap, FAST, (8, 8))
    assert res.global_best is None and res.empty == [8]


def test_sweep_range_checked(beam):
    st, r_ap = beam
    with pytest.raises(ValueError):
        sweep(st, r_ap, FAST, (3, 2))
