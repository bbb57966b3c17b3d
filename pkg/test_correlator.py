#!/usr/bin/env python3
"""
关联器测试：符合直方图、归一化、峰面积、g² 拟合、α 与孪生光子速率，
以及蒙特卡罗直方图与卷积模型的一致性
"""

import io as stdio
import sys
from contextlib import redirect_stderr
from functools import lru_cache

import numpy as np
from scipy import stats

from correlator import (CoincidenceHistogram, TwinBudget, alpha_ratio, correlate, fit_g2,
                        merge_histograms, normalize_cw, peak_area_error, peak_areas,
                        twin_rate_cw, twin_rate_pulsed)
from error_handler import DivideByZeroError, InvalidParameterError, PreconditionError
from mc_sim import DetectionConfig, PulsePrep, detect, lifetimes_to_decay_rates, simulate_cw, simulate_pulsed
from model_core import (InstrumentResponse, RateSet, convolve_irf, g2_composites, symmetric_grid,
                        zero_delay_value)

CANONICAL = RateSet.equal_pumps(1.0, 1.0, 1.0)
LOW_PUMP = RateSet.equal_pumps(1.0, 1.0, 0.1)

# 两个探测器各自的抖动，合成 350 ps 的符合 IRF
DETECTOR_JITTER_PS = 350.0 / np.sqrt(2.0)

# CW 轨迹时长（ps）；P = 0.1 计数率低，取更长的采集
PUMP_DURATIONS_PS = {0.1: 4e9, 0.5: 1e9, 1.0: 1e9}


# ============================================
# 直方图
# ============================================
def test_correlate_two_tag_example():
    tags = np.array([0, 1000], dtype=np.int64)
    hist = correlate(tags, tags, bin_width_ps=4, window_ps=2000)
    assert hist.counts.size == 1001
    assert hist.counts[500] == 2
    assert hist.counts[500 + 250] == 1
    assert hist.counts[500 - 250] == 1
    assert hist.counts.sum() == 4


def test_correlate_matches_brute_force():
    rng = np.random.default_rng(3)
    tags_a = np.sort(rng.integers(0, 200000, size=300))
    tags_b = np.sort(rng.integers(0, 200000, size=300))
    window, width = 5000, 10
    hist = correlate(tags_a, tags_b, bin_width_ps=width, window_ps=window)

    expected = np.zeros(hist.counts.size, dtype=np.int64)
    half = hist.half_bins
    for a in tags_a:
        for b in tags_b:
            delay = int(b - a)
            if abs(delay) <= window:
                k = int(np.sign(delay)) * ((abs(delay) + width // 2) // width)
                if abs(k) <= half:
                    expected[k + half] += 1
    assert np.array_equal(hist.counts, expected)


def test_correlate_swap_mirrors_histogram():
    rng = np.random.default_rng(8)
    tags_a = np.sort(rng.integers(0, 10 ** 7, size=2000))
    tags_b = np.sort(rng.integers(0, 10 ** 7, size=2000))
    forward = correlate(tags_a, tags_b, bin_width_ps=4, window_ps=20000)
    backward = correlate(tags_b, tags_a, bin_width_ps=4, window_ps=20000)
    assert np.array_equal(forward.counts, backward.counts[::-1])
    assert np.array_equal(forward.mirrored().counts, backward.counts)


def test_correlate_empty_tags_gives_zero_histogram():
    empty = np.empty(0, dtype=np.int64)
    hist = correlate(empty, empty, bin_width_ps=4, window_ps=100)
    assert hist.counts.size == 51
    assert hist.counts.sum() == 0
    assert hist.rate_a_hz == 0.0 and hist.rate_b_hz == 0.0


def test_correlate_rejects_unsorted_tags():
    try:
        correlate(np.array([5, 1]), np.array([1, 2]), bin_width_ps=4)
    except PreconditionError:
        return
    raise AssertionError("unsorted tags must be rejected")


def test_histogram_requires_odd_bins():
    try:
        CoincidenceHistogram(4, 8, np.zeros(4))
    except InvalidParameterError:
        return
    raise AssertionError("even bin count must be rejected")


def test_merge_histograms_sums_counts_and_time():
    first = CoincidenceHistogram(4, 8, np.array([1, 2, 3, 4, 5]), 10.0, 20.0, 1.0)
    second = CoincidenceHistogram(4, 8, np.array([5, 4, 3, 2, 1]), 30.0, 40.0, 3.0)
    merged = merge_histograms([first, second])
    assert np.array_equal(merged.counts, [6, 6, 6, 6, 6])
    assert merged.acquisition_time_s == 4.0
    assert abs(merged.rate_a_hz - 25.0) < 1e-12
    assert abs(merged.rate_b_hz - 35.0) < 1e-12


# ============================================
# 归一化
# ============================================
def test_normalize_uncorrelated_streams_to_one():
    rng = np.random.default_rng(4)
    duration_ps = 10 ** 10
    tags_a = np.sort(rng.integers(0, duration_ps, size=100000))
    tags_b = np.sort(rng.integers(0, duration_ps, size=100000))
    hist = correlate(tags_a, tags_b, bin_width_ps=1000, window_ps=50000, acquisition_time_s=duration_ps * 1e-12)
    curve = normalize_cw(hist)
    assert abs(curve.values.mean() - 1.0) < 0.02
    assert np.array_equal(curve.counts, hist.counts)


def test_normalize_zero_rate_raises():
    hist = CoincidenceHistogram(4, 8, np.zeros(5, dtype=np.int64), 0.0, 0.0, 1.0)
    try:
        normalize_cw(hist)
    except DivideByZeroError:
        return
    raise AssertionError("zero rate must raise DivideByZeroError")


# ============================================
# 脉冲峰面积
# ============================================
def _synthetic_pulsed_histogram(central, side, period_ps=1000, k_range=3, width=10):
    half = int((k_range + 0.5) * period_ps / width)
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    for k in range(-k_range, k_range + 1):
        counts[half + k * period_ps // width] = central if k == 0 else side
    return CoincidenceHistogram(width, half * width, counts)


def test_peak_areas_synthetic():
    hist = _synthetic_pulsed_histogram(central=50, side=100)
    a0, a_mean, ratio = peak_areas(hist, rep_rate_hz=1e9, k_range=3)
    assert (a0, a_mean, ratio) == (50.0, 100.0, 0.5)


def test_peak_areas_window_wider_than_period_rejected():
    hist = _synthetic_pulsed_histogram(central=50, side=100)
    try:
        peak_areas(hist, rep_rate_hz=1e9, k_range=3, integration_window_ps=1500)
    except InvalidParameterError:
        return
    raise AssertionError("integration window > period must be rejected")


def test_peak_areas_empty_side_peaks():
    hist = _synthetic_pulsed_histogram(central=50, side=0)
    try:
        peak_areas(hist, rep_rate_hz=1e9, k_range=3)
    except DivideByZeroError:
        return
    raise AssertionError("empty side peaks must raise DivideByZeroError")


def test_peak_area_error_poisson():
    error = peak_area_error(100.0, 400.0, 4)
    assert abs(error - 0.25 * np.sqrt(1 / 100 + 1 / 1600)) < 1e-12


def test_pulsed_cascade_bunching_scales_with_preparation():
    prep = PulsePrep(80e6, prob_b=0.2)
    n_pulses = 200000
    events = simulate_pulsed(prep, lifetimes_to_decay_rates(0.95, 1.77), n_pulses, seed=17)
    tags_xx, _ = detect(events, DetectionConfig(species_filter='XX'), seed=1)
    tags_x, _ = detect(events, DetectionConfig(species_filter='X'), seed=2)
    window = int(np.ceil(10.5 * prep.period_ps))
    hist = correlate(tags_xx, tags_x, bin_width_ps=100, window_ps=window,
                     acquisition_time_s=n_pulses / prep.repetition_rate_hz)
    _, _, ratio = peak_areas(hist, prep.repetition_rate_hz, k_range=10)
    assert ratio > 3
    assert abs(ratio - 1 / prep.prob_b) < 0.5


# ============================================
# 拟合
# ============================================
def test_fit_recovers_rates_from_noiseless_cross_curve():
    grid = symmetric_grid(5000.0, 20.0)
    cross, _ = g2_composites(CANONICAL, grid)
    data = convolve_irf(cross, InstrumentResponse(350.0))
    init = RateSet.equal_pumps(gamma_b=0.9, gamma_x=1.05, pump=1.1)
    report = fit_g2(data, 'cross', InstrumentResponse(350.0), init)
    assert abs(report.rates.p_b - 1.0) < 1e-3
    assert abs(report.rates.gamma_b - 1.0) < 1e-3
    assert abs(report.rates.gamma_x - 1.0) < 1e-3
    assert abs(report.g_fit_0 - 4.0) < 1e-2
    # 去卷积后的 g²(0) 高于卷积曲线的峰值
    assert report.g_fit_0 > data.values.max()
    assert report.to_dict()['confidence_intervals']['method'] == 'covariance_1sigma'


def test_fit_rejects_unknown_kind():
    grid = symmetric_grid(1000.0, 20.0)
    cross, _ = g2_composites(CANONICAL, grid)
    try:
        fit_g2(cross, 'X-Y', InstrumentResponse(350.0), CANONICAL)
    except InvalidParameterError:
        return
    raise AssertionError("unknown fit kind must be rejected")


# ============================================
# 蒙特卡罗与模型一致性
# ============================================
def _bin_averaged_model(curve_fine, centers, width):
    """把细网格上的模型在每个 bin 内取平均"""
    offsets = np.arange(-width / 2 + 5, width / 2, 10.0)
    values = [np.mean(np.interp(c + offsets, curve_fine.tau_grid, curve_fine.values)) for c in centers]
    return np.asarray(values)


def _chi_square_against_model(hist, model_curve):
    centers = hist.tau_ps.astype(float)
    expected = (hist.rate_a_hz * hist.rate_b_hz * hist.acquisition_time_s * hist.bin_width_ps * 1e-12
                * _bin_averaged_model(model_curve, centers, hist.bin_width_ps))
    chi2 = float(np.sum((hist.counts - expected) ** 2 / expected))
    return stats.chi2.sf(chi2, df=hist.counts.size)


@lru_cache(maxsize=None)
def _simulated_cw_events(pump):
    return simulate_cw(RateSet.equal_pumps(1.0, 1.0, pump), PUMP_DURATIONS_PS[pump], seed=31)


def _cross_histogram(pump, bin_width_ps=100, window_ps=5000):
    events = _simulated_cw_events(pump)
    tags_xx, _ = detect(events, DetectionConfig('V', 'XX', jitter_fwhm_ps=DETECTOR_JITTER_PS), seed=1)
    tags_x, _ = detect(events, DetectionConfig('V', 'X', jitter_fwhm_ps=DETECTOR_JITTER_PS), seed=2)
    return correlate(tags_xx, tags_x, bin_width_ps=bin_width_ps, window_ps=window_ps,
                     acquisition_time_s=PUMP_DURATIONS_PS[pump] * 1e-12)


def _auto_histogram(pump, bin_width_ps=100, window_ps=5000):
    events = _simulated_cw_events(pump)
    config = DetectionConfig(polarization_filter='H', splitter='50:50', jitter_fwhm_ps=DETECTOR_JITTER_PS)
    d0, d1 = detect(events, config, seed=3)
    return correlate(d0, d1, bin_width_ps=bin_width_ps, window_ps=window_ps,
                     acquisition_time_s=PUMP_DURATIONS_PS[pump] * 1e-12)


def _fit_histogram(hist, kind, weighting='equal'):
    curve = normalize_cw(hist, kind='cross' if kind == 'cross' else 'auto-composite')
    init = RateSet.equal_pumps(gamma_b=0.9, gamma_x=1.1, pump=0.12)
    return fit_g2(curve, kind, InstrumentResponse(350.0), init, weighting=weighting)


def test_low_pump_cross_peak_value():
    cross, _ = g2_composites(LOW_PUMP, [0.0])
    assert abs(cross.values[0] - 12.1) < 1e-9
    assert abs(zero_delay_value('cross', LOW_PUMP) - 12.1) < 1e-9


def test_monte_carlo_cross_histogram_matches_convolved_model():
    for pump in (0.1, 0.5, 1.0):
        cross, _ = g2_composites(RateSet.equal_pumps(1.0, 1.0, pump), symmetric_grid(6000.0, 5.0))
        model = convolve_irf(cross, InstrumentResponse(350.0))
        p_value = _chi_square_against_model(_cross_histogram(pump), model)
        assert p_value > 0.01, f"P={pump}: p={p_value:.3g}"


def test_monte_carlo_auto_histogram_matches_flux_weighted_model():
    # p_B ≠ Γ_X：单偏振通道的自关联按光子通量加权
    hist = _auto_histogram(0.1)
    grid = symmetric_grid(6000.0, 5.0)
    irf = InstrumentResponse(350.0)
    _, flux = g2_composites(LOW_PUMP, grid, weighting='flux')
    _, equal = g2_composites(LOW_PUMP, grid, weighting='equal')
    assert _chi_square_against_model(hist, convolve_irf(flux, irf)) > 0.01
    assert _chi_square_against_model(hist, convolve_irf(equal, irf)) < 1e-6


def test_monte_carlo_auto_histogram_matches_at_unit_rates():
    _, auto = g2_composites(CANONICAL, symmetric_grid(6000.0, 5.0))
    model = convolve_irf(auto, InstrumentResponse(350.0))
    assert _chi_square_against_model(_auto_histogram(1.0), model) > 0.01


def test_fit_recovers_cross_peak_from_simulated_histogram():
    report = _fit_histogram(_cross_histogram(0.1, bin_width_ps=20, window_ps=10000), 'cross')
    assert 0 < report.g_fit_0_stderr < 0.1 * 12.1
    assert abs(report.g_fit_0 - 12.1) < 3 * report.g_fit_0_stderr


def test_alpha_from_simulated_histograms_with_flux_weighting():
    cross = _fit_histogram(_cross_histogram(0.1, bin_width_ps=20, window_ps=10000), 'cross')
    auto = _fit_histogram(_auto_histogram(0.1, bin_width_ps=20, window_ps=10000), 'auto', weighting='flux')
    expected = zero_delay_value('auto', LOW_PUMP, weighting='flux') / zero_delay_value('cross', LOW_PUMP)
    assert abs(expected - 0.0826) < 1e-3
    assert abs(alpha_ratio(auto.g_fit_0, cross.g_fit_0) - expected) < 0.02


def test_equal_weighting_mismatch_is_logged():
    grid = symmetric_grid(5000.0, 20.0)
    irf = InstrumentResponse(350.0)
    rates = RateSet.equal_pumps(1.0, 1.0, 0.3)
    init = RateSet.equal_pumps(gamma_b=0.95, gamma_x=1.05, pump=0.33)
    for weighting, expect_warning in (('equal', True), ('flux', False)):
        _, auto = g2_composites(rates, grid, weighting=weighting)
        buffer = stdio.StringIO()
        with redirect_stderr(buffer):
            fit_g2(convolve_irf(auto, irf), 'auto', irf, init, weighting=weighting)
        assert ('equal_weighting_mismatch' in buffer.getvalue()) == expect_warning


# ============================================
# α 与孪生光子速率
# ============================================
def test_alpha_from_composites_is_quarter():
    cross, auto = g2_composites(LOW_PUMP, [0.0])
    assert abs(alpha_ratio(auto.values[0], cross.values[0]) - 0.25) < 1e-12


def test_fitted_alpha_independent_of_pump():
    grid = symmetric_grid(5000.0, 20.0)
    irf = InstrumentResponse(350.0)
    for pump in (0.3, 1.0, 2.0):
        rates = RateSet.equal_pumps(1.0, 1.0, pump)
        cross, auto = g2_composites(rates, grid)
        init = RateSet.equal_pumps(gamma_b=0.95, gamma_x=1.05, pump=pump * 1.1)
        fit_cross = fit_g2(convolve_irf(cross, irf), 'cross', irf, init)
        fit_auto = fit_g2(convolve_irf(auto, irf), 'auto', irf, init)
        assert abs(alpha_ratio(fit_auto.g_fit_0, fit_cross.g_fit_0) - 0.25) < 1e-3


def test_alpha_rejects_non_positive():
    try:
        alpha_ratio(0.0, 1.0)
    except InvalidParameterError:
        return
    raise AssertionError("g2 <= 0 must be rejected")


def test_twin_rate_cw_measured_inputs():
    budget = twin_rate_cw(103e3, 0.0095, 0.09, 0.39)
    assert 230e3 <= budget.tpr_hz <= 238e3
    assert abs(budget.twin_detect_fraction - 0.39 / 1.61) < 1e-12
    assert abs(budget.to_dict()['single_fraction'] - (1 - 0.39 / 1.61)) < 1e-12


def test_twin_rate_cw_monotone_and_vanishing():
    low = twin_rate_cw(103e3, 0.0095, 0.09, 0.2).tpr_hz
    high = twin_rate_cw(103e3, 0.0095, 0.09, 0.4).tpr_hz
    more = twin_rate_cw(206e3, 0.0095, 0.09, 0.4).tpr_hz
    assert low < high < more
    assert twin_rate_cw(103e3, 0.0095, 0.09, 1e-12).tpr_hz < 1e-3


def test_twin_budget_fraction_bounds():
    try:
        TwinBudget(alpha=0.5, twin_detect_fraction=1.5, tpr_hz=0.0)
    except InvalidParameterError:
        return
    raise AssertionError("fraction > 1 must be rejected")


def test_twin_rate_pulsed():
    assert abs(twin_rate_pulsed(80e6, 0.080, 0.09) - 51840.0) < 1e-6
    assert abs(twin_rate_pulsed(1e6, 0.080, 0.09) - 648.0) < 1e-9
    assert twin_rate_pulsed(80e6, 0.0, 0.09) == 0.0


if __name__ == '__main__':
    failures = 0
    tests = [(name, func) for name, func in list(globals().items()) if name.startswith('test_') and callable(func)]
    for name, func in tests:
        try:
            func()
            print(f"✓ {name}")
        except Exception as e:
            failures += 1
            print(f"✗ {name}: {type(e).__name__}: {e}")
    print(f"\n{len(tests) - failures}/{len(tests)} 通过")
    sys.exit(1 if failures else 0)
