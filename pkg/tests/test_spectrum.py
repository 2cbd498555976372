import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import exhaustive_events
from signal_codes.lattice import FilterPattern, table1_pattern
from signal_codes.spectrum import (BudgetExceeded, ErrorEvent, SpectrumReport, backward_forward_search,
                                   cartesian_spectrum, error_weight, fit_power_law, histogram_fit,
                                   min_distance, qfunc, search_spectrum, symmetry_observation,
                                   union_bound_eer)


def test_error_weight_examples():
    assert error_weight([2], FilterPattern.fir([1])) == 4
    assert error_weight([2], FilterPattern.fir([1, 0.3])) == pytest.approx(4 * 1.09)
    assert error_weight([2, -2], FilterPattern.fir([1, -0.5])) == pytest.approx(14)


def test_cartesian_single_event():
    rep = search_spectrum(FilterPattern.fir([1]), 5, 3)
    assert [(e.seq, e.weight) for e in rep.events] == [(((2, 0),), 4.0)]


def test_row1_search():
    rep = search_spectrum(table1_pattern(1), 15, 8)
    assert rep.d2_min == pytest.approx(14.81, abs=0.01) and rep.n_min == 3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_enumeration_at_radius_10(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 3))
    taps = [1] + list(np.sqrt(rng.uniform(0, 1, L)) * np.exp(2j * np.pi * rng.uniform(size=L)))
    f = FilterPattern.fir(taps)
    got = {e.seq for e in search_spectrum(f, 10, 4).events}
    assert got == set(exhaustive_events(f.array, 10, 4))


def test_modified_bound_does_not_change_result():
    f = table1_pattern(2)
    a = search_spectrum(f, 19, 8, modified_bound=True)
    b = search_spectrum(f, 19, 8, modified_bound=False)
    assert sorted(e.seq for e in a.events) == sorted(e.seq for e in b.events)
    assert a.nodes_examined <= b.nodes_examined


def test_canonical_representatives_only():
    f = table1_pattern(1)
    rep = search_spectrum(f, 19, 8)
    seqs = {e.seq for e in rep.events}
    for e in rep.events:
        z = e.as_complex()
        for u in (-1, 1j, -1j):
            r = u * z
            key = tuple((int(round(v.real)), int(round(v.imag))) for v in r)
            assert key not in seqs
            assert error_weight(r, f) == pytest.approx(e.weight)
        shifted = np.concatenate([[0], z])
        assert error_weight(shifted, f) == pytest.approx(e.weight)
        assert abs(e.weight - error_weight(z, f)) < 1e-9


def test_budget_flags_incomplete():
    rep = search_spectrum(table1_pattern(4), 30, 12, node_budget=1000)
    assert not rep.complete and rep.nodes_examined <= 1001


def test_min_distance_examples():
    assert min_distance(FilterPattern.fir([1, -0.5]), 6).d2_min == pytest.approx(5.0)
    r = min_distance(table1_pattern(1), 8)
    assert r.complete and r.d2_min == pytest.approx(14.811, abs=0.01)


def test_min_distance_non_increasing_in_length():
    f = table1_pattern(2)
    d = [min_distance(f, n).d2_min for n in (1, 2, 4, 6, 8)]
    assert all(x >= y - 1e-12 for x, y in zip(d, d[1:]))


def test_deepening_agrees_with_single_stage():
    f = table1_pattern(1)
    assert min_distance(f, 8, deepen=False).d2_min == pytest.approx(min_distance(f, 8).d2_min)


def test_backward_forward_degenerates_and_agrees():
    f = table1_pattern(2)
    a = search_spectrum(f, 19, 8)
    b = backward_forward_search(f, 19, 0, 8)
    c = backward_forward_search(f, 19, 7, 8)
    for other in (b, c):
        assert sorted(e.seq for e in other.events) == sorted(e.seq for e in a.events)


def test_union_bound():
    rep = SpectrumReport([ErrorEvent(((2, 0),), 4.0)], 5, 1)
    assert union_bound_eer(rep, 1.0) == pytest.approx(4 * qfunc(math.sqrt(2)))
    assert union_bound_eer(rep, 1.0) == pytest.approx(0.31460, abs=1e-5)
    assert union_bound_eer(SpectrumReport([], 5, 1), 1.0) == 0
    vals = [union_bound_eer(rep, s) for s in (1, 0.5, 0.1, 0.01)]
    assert all(x > y for x, y in zip(vals, vals[1:])) and vals[-1] < 1e-40


def test_cartesian_b3_is_zero():
    a, b = cartesian_spectrum(5)
    assert b[2] == 0 and a[0] == 4


def test_power_law_fit():
    d = np.arange(5, 15, dtype=float)
    fit = fit_power_law(d, 3.0 * d**2.5)
    assert fit.alpha == pytest.approx(3.0, rel=1e-6) and fit.beta == pytest.approx(2.5, rel=1e-6)
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 1])
    a, _ = cartesian_spectrum(10)
    assert fit_power_law(4 * np.arange(1, 11), a).beta > 0


def test_histogram_grows_at_reduced_radius():
    rep = search_spectrum(table1_pattern(1), 24, 10)
    h = rep.histogram()
    assert rep.complete and min(h) == 14
    assert h[21] < h[22] < h[23]
    fit = histogram_fit(rep, fit_from=18)
    assert fit.beta > 0 and fit.n_bins == 6
    assert rep.histogram_csv().splitlines()[0] == "bin_start,count"


def test_symmetry_observation():
    ev = ErrorEvent(((2, 0), (0, 2), (2, 0)), 0.0)
    assert symmetry_observation(ev) == "1"
    assert symmetry_observation(ErrorEvent(((2, 0), (4, 2)), 0.0)) is None


def test_report_json_shape():
    rep = search_spectrum(table1_pattern(1), 15, 8)
    js = rep.to_json()
    assert js["n_min"] == 3 and js["events"][0]["seq"][0] == list(rep.events[0].seq[0])


def test_budget_exception_type_is_runtime_error():
    assert issubclass(BudgetExceeded, RuntimeError)
