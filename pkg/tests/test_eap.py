import numpy as np
import pytest

from isaclab.eap import (SidePeak, Window, compare, extract_peaks, linear_slope, local_maxima,
                         predict_side_peaks, relative_to, stagger_level, unambiguous_regions,
                         verify_prediction)
from isaclab.patterns import IrregularPattern, OfdmNumerology, PatternError, make_scheme, realize_grid
from isaclab.sensing import DelayDopplerGrid, Spectrum2D, periodogram_2dfft
from isaclab.waveform import Target, apply_channel_freq

NUM = OfdmNumerology(256, 16, 15e3)


def _window(S_sym=1):
    period = 1 / (S_sym * NUM.T)
    return Window(NUM.T_s, -period / 2, period / 2), period


def _cells(peaks, S, period):
    """Peaks as (l, f*S/period) pairs, rounded."""
    return sorted((round(p.tau / NUM.T_s * S), round(p.doppler / period * S)) for p in peaks)


def test_linear_slope():
    assert linear_slope(make_scheme("D", 8, p=3)) == 3
    assert linear_slope(make_scheme("A", 4, M=4)) == 0
    assert linear_slope(make_scheme("C", 8)) is None


def test_predicted_aligned_comb_peaks_repeat_in_delay():
    win, period = _window()
    pk = predict_side_peaks(make_scheme("A", 4, M=4), "fft2d", NUM, win)
    assert _cells(pk, 4, period) == [(1, 0), (2, 0), (3, 0)]


def test_predicted_linear_stagger_follows_slope():
    win, period = _window()
    pk = predict_side_peaks(make_scheme("D", 4, p=1), "fft2d", NUM, win)
    # offsets l/4 per delay step; l=2 lands on the window edge at +-period/2
    assert {(l, f % 4) for l, f in _cells(pk, 4, period)} == {(1, 1), (2, 2), (3, 3)}


def test_predicted_bit_reversed_comb_has_no_equal_peak():
    win, _ = _window()
    pk = predict_side_peaks(make_scheme("C", 4), "fft2d", NUM, win)
    assert all(p.level < 1 - 1e-6 for p in pk)


def test_stagger_level_matches_closed_form():
    pat = make_scheme("D", 8, p=3)
    period = 1 / NUM.T
    for l in range(8):
        f = (3 * l / 8) * period
        assert stagger_level(pat, l, f, NUM) == pytest.approx(1.0)


def test_super_res_prediction_uses_collisions():
    win, _ = _window()
    assert predict_side_peaks(make_scheme("C", 4), "super_res", NUM, win) == []
    pk = predict_side_peaks(make_scheme("A", 4, M=4), "super_res", NUM, win)
    assert any(abs(p.tau - NUM.T_s / 4) < 1e-12 and abs(p.doppler) < 1e-6 for p in pk)
    with pytest.raises(PatternError):
        predict_side_peaks(IrregularPattern(((0, (0,)), (1, (1,)))), "delay_sum", NUM, win)


def test_delay_sum_prediction_drops_symbol_rate_images():
    period = 1 / NUM.T
    win = Window(NUM.T_s, -period, period)
    pk = predict_side_peaks(make_scheme("A", 4, M=4), "delay_sum", NUM, win)
    assert not [p for p in pk if p.tau == 0]
    lv = {round(p.tau / NUM.T_s * 4): p.level for p in pk if abs(p.doppler) < 1}
    assert lv[1] == pytest.approx((NUM.N_prime - 64) / NUM.N_prime)


@pytest.mark.parametrize("algorithm", ["fft2d", "delay_sum"])
@pytest.mark.parametrize("scheme,S,S_sym", [("A", 4, 1), ("B", 8, 2), ("C", 8, 1), ("D", 4, 2)])
def test_prediction_matches_simulation(algorithm, scheme, S, S_sym):
    cmp = verify_prediction(make_scheme(scheme, S, S_sym, S), algorithm, NUM)
    assert cmp.passed, cmp.to_dict()


# --- peak extraction ----------------------------------------------------

def test_local_maxima_plateau_and_wrap():
    v = np.array([[0, 1, 1, 0], [0, 0, 0, 0], [2, 0, 0, 3]], float)
    m = local_maxima(v)
    assert m.sum() == 3 and m[0, 1] != m[0, 2]
    mw = local_maxima(v, wrap=(False, True))
    assert not mw[2, 0] and mw[2, 3]


def _spectrum(points, n_tau=32, n_f=16):
    g = DelayDopplerGrid(np.arange(n_tau) / n_tau, np.arange(n_f) - n_f / 2)
    v = np.full(g.shape, 1e-6)
    for i, j, lev in points:
        v[i, j] = lev
    return Spectrum2D(g, v)


def test_extract_peaks_threshold_and_order():
    sp = _spectrum([(3, 4, 1.0), (10, 8, 0.5), (20, 2, 0.01)])
    pk = extract_peaks(sp, -13.0)
    assert [round(p.level, 3) for p in pk] == [0.5]
    pk = extract_peaks(sp, -30.0, include_mainlobe=True)
    assert [round(p.level, 3) for p in pk] == [1.0, 0.5, 0.01]


def test_extract_peaks_reference_level():
    sp = _spectrum([(3, 4, 1.0), (10, 8, 0.5)])
    assert [round(p.level, 3) for p in extract_peaks(sp, -13, reference=20.0)] == []


def test_extract_peaks_flat_spectrum_raises():
    with pytest.raises(PatternError):
        extract_peaks(Spectrum2D(DelayDopplerGrid(np.arange(2.0), np.arange(2.0)), np.ones((2, 2))))


def test_relative_to_wraps():
    p = relative_to([SidePeak(0.1, 9.0)], 0.3, -1.0, 1.0, 16.0)[0]
    assert p.tau == pytest.approx(0.8) and p.doppler == pytest.approx(-6.0)


# --- regions ------------------------------------------------------------

def _regions(pattern, S_sym=1):
    win, period = _window(S_sym)
    pk = predict_side_peaks(pattern, "fft2d", NUM, win)
    return [(t / NUM.T_s, f / period) for t, f in unambiguous_regions(pk, win, NUM.T_s)]


def test_regions_aligned_comb():
    assert _regions(make_scheme("A", 4, M=4)) == [(pytest.approx(0.25), pytest.approx(0.5))]


def test_regions_alternating_comb():
    r = _regions(make_scheme("B", 4, M=4))
    assert r == [(pytest.approx(0.25), pytest.approx(0.5)), (pytest.approx(0.5), pytest.approx(0.25))]


def test_regions_linear_stagger():
    r = _regions(make_scheme("D", 4, p=1))
    assert r == [(pytest.approx(0.25), pytest.approx(0.5)), (pytest.approx(1.0), pytest.approx(0.125))]


@pytest.mark.parametrize("S", [4, 8])
def test_linear_stagger_dominates_beyond_one_comb_period(S):
    def f_at(regions, tau):
        fs = [f for t, f in regions if t >= tau - 1e-12]
        return max(fs) if fs else 0.0
    tau = 2 / S
    d = f_at(_regions(make_scheme("D", S, p=1)), tau)
    assert d > f_at(_regions(make_scheme("A", S, M=S)), tau)
    assert d == pytest.approx(1 / (2 * S))


def test_regions_empty_peaks_fill_window():
    win = Window(2.0, -3.0, 3.0)
    assert unambiguous_regions([], win) == [(2.0, 3.0)]


def test_regions_are_an_antichain():
    for pat in (make_scheme("B", 8, M=8), make_scheme("D", 8, p=3)):
        r = _regions(pat)
        for a in r:
            assert not any(b != a and b[0] >= a[0] and b[1] >= a[1] for b in r)


def test_regions_ignore_weak_peaks():
    win = Window(1.0, -1.0, 1.0)
    assert unambiguous_regions([SidePeak(0.25, 0.0, 0.3)], win) == [(1.0, 1.0)]


# --- comparison ---------------------------------------------------------

def test_compare_counts_missed_and_false():
    pred = [SidePeak(0.25, 0.0), SidePeak(0.5, 0.0)]
    meas = [SidePeak(0.251, 0.01, 1.0, "measured"), SidePeak(0.75, 0.0, 1.0, "measured")]
    c = compare(pred, meas, 0.01, 0.1, 1.0)
    assert len(c.matched) == 1 and len(c.missed) == 1 and len(c.false) == 1
    assert not c.passed
    assert c.max_tau_error == pytest.approx(0.001)


def test_compare_wraps_delay():
    c = compare([SidePeak(0.999, 0.0)], [SidePeak(0.001, 0.0, 1.0)], 0.01, 0.1, 1.0)
    assert c.passed and c.to_dict()["pass"]


def test_compare_half_bin_offset_matches():
    c = compare([SidePeak(0.25, 0.0)], [SidePeak(0.25 + 0.005, 0.0, 1.0)], 0.01, 0.1)
    assert c.passed


def test_wrong_slope_is_caught():
    pat = make_scheme("D", 4, p=1)
    win, period = _window()
    spec = periodogram_2dfft(apply_channel_freq(realize_grid(pat, NUM), [Target(0.0, 0.0)]))
    meas = extract_peaks(spec, -13, NUM.T_s, period)
    good = predict_side_peaks(pat, "fft2d", NUM, win)
    bad = predict_side_peaks(pat, "fft2d", NUM, win, slope=3)
    tol = (NUM.T_s / (4 * NUM.N), period / 16)
    assert compare(good, meas, *tol, NUM.T_s, period).passed
    c = compare(bad, meas, *tol, NUM.T_s, period)
    assert c.missed and c.false


def test_aligned_comb_images_at_3db():
    _, period = _window()
    spec = periodogram_2dfft(apply_channel_freq(realize_grid(make_scheme("A", 4, M=4), NUM),
                                                [Target(0.0, 0.0)]))
    pk = extract_peaks(spec, -3, NUM.T_s, period)
    assert sorted(round(p.tau / NUM.T_s * 4) for p in pk) == [1, 2, 3]
    assert all(abs(p.doppler) < period / 16 for p in pk)


def test_compare_weak_peaks_do_not_fail():
    c = compare([SidePeak(0.2, 0.0, 0.4)], [SidePeak(0.6, 0.0, 0.4)], 0.01, 0.1)
    assert c.passed
