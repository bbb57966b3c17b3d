#!/usr/bin/env python3
"""
偏振分辨光谱测试：线型、光谱图合成、约束四 Lorentz 拟合、FSS 提取与简并检验
"""

import sys

import numpy as np
from scipy import integrate

from error_handler import InsufficientDataError, InvalidParameterError
from spectra import (QuadrupletParams, SpectralMap, degeneracy_test, extract_fss, fit_quadruplet,
                     lorentzian, synthesize_map)

ENERGY_GRID = np.arange(-400.0, 401.0, 1.0)
DEFAULT_PARAMS = QuadrupletParams()


# ============================================
# 线型与参数
# ============================================
def test_lorentzian_area_and_peak():
    area, _ = integrate.quad(lambda e: lorentzian(e, 5.0, 30.0, 2.0), -np.inf, np.inf)
    assert abs(area - 2.0) < 1e-8
    assert abs(lorentzian(5.0, 5.0, 30.0) - 2 / (np.pi * 30.0)) < 1e-15


def test_positions_follow_binding_sign():
    binding = DEFAULT_PARAMS.positions()
    assert binding['X_V'] == -51.0 and binding['XX_V'] == 51.0
    antibinding = QuadrupletParams(binding_sign='antibinding').positions()
    assert antibinding['X_V'] == 51.0 and antibinding['XX_V'] == -51.0


def test_invalid_params_rejected():
    for kwargs in ({'binding_sign': 'other'}, {'linewidth_x_uev': 0.0}, {'line_weights': (1.0, 1.0)}):
        try:
            QuadrupletParams(**kwargs)
        except InvalidParameterError:
            continue
        raise AssertionError(f"{kwargs} must be rejected")


# ============================================
# 合成
# ============================================
def test_synthesized_map_polarization_weights():
    spectral_map = synthesize_map(DEFAULT_PARAMS, [0.0, 90.0], ENERGY_GRID)
    at_h, at_v = spectral_map.intensity
    # θ = θ₀：只有 H 线（能量 0）；θ = θ₀ + 90°：只有 V 双峰
    assert at_h[np.argmax(at_h)] == at_h[400]
    assert abs(at_v[400] - 2 * lorentzian(0.0, 51.0, 30.0, 1000.0)) < 1e-9
    assert at_v[400 - 51] > at_v[400]


def test_synthesized_map_noise_reproducible_and_non_negative():
    first = synthesize_map(DEFAULT_PARAMS, [10.0, 50.0], ENERGY_GRID, noise_level=0.5, seed=3)
    second = synthesize_map(DEFAULT_PARAMS, [10.0, 50.0], ENERGY_GRID, noise_level=0.5, seed=3)
    assert np.array_equal(first.intensity, second.intensity)
    assert first.intensity.min() >= 0


def test_synthesis_rejects_narrow_energy_grid():
    try:
        synthesize_map(DEFAULT_PARAMS, [0.0], np.arange(-100.0, 101.0, 1.0))
    except InvalidParameterError:
        return
    raise AssertionError("grid not spanning the lines must be rejected")


def test_spectral_map_shape_checked():
    try:
        SpectralMap([0.0, 10.0], ENERGY_GRID, np.zeros((3, ENERGY_GRID.size)))
    except InvalidParameterError:
        return
    raise AssertionError("mismatched intensity shape must be rejected")


# ============================================
# 拟合
# ============================================
def test_noiseless_single_spectrum_fit():
    spectral_map = synthesize_map(DEFAULT_PARAMS, [60.0], ENERGY_GRID)
    fit = fit_quadruplet(spectral_map.intensity[0], ENERGY_GRID, angle_deg=60.0)
    assert abs(fit.delta_fss / 51.0 - 1) < 1e-6
    assert abs(fit.width_x - 30.0) < 1e-4
    assert abs(fit.intensity_ratio - 1.0) < 1e-4
    assert abs(fit.area_h - 250.0) < 1e-2
    assert not fit.degenerate
    relative = fit.relative_positions
    assert abs(relative['X_H']) < 1e-5 and abs(relative['XX_H']) < 1e-5


def test_fit_with_spectrometer_resolution():
    params = QuadrupletParams(linewidth_x_uev=40.0, linewidth_xx_uev=35.0)
    spectral_map = synthesize_map(params, [45.0], ENERGY_GRID, resolution_uev=25.0)
    fit = fit_quadruplet(spectral_map.intensity[0], ENERGY_GRID, resolution_uev=25.0)
    assert abs(fit.delta_fss - 51.0) < 1e-3
    assert abs(fit.width_xx - 35.0) < 1e-2


def test_single_line_spectrum_flagged_degenerate():
    spectrum = lorentzian(ENERGY_GRID, 0.0, 30.0, 1000.0) + 0.1
    fit = fit_quadruplet(spectrum, ENERGY_GRID)
    assert fit.degenerate


def test_fit_rejects_mismatched_lengths():
    try:
        fit_quadruplet(np.ones(20), np.arange(30.0))
    except InvalidParameterError:
        return
    raise AssertionError("length mismatch must be rejected")


# ============================================
# FSS 提取
# ============================================
NOISELESS_ANGLES = np.arange(40.0, 81.0, 4.0)


def test_noiseless_map_gives_constant_fss():
    spectral_map = synthesize_map(DEFAULT_PARAMS, NOISELESS_ANGLES, ENERGY_GRID)
    summary = extract_fss(spectral_map)
    assert summary.n_fits == NOISELESS_ANGLES.size
    assert abs(summary.delta_fss_mean - 51.0) < 1e-5
    assert summary.delta_fss_std < 1e-6
    assert summary.degenerate_h_line


def test_injected_offset_breaks_degeneracy():
    params = QuadrupletParams(degeneracy_offset_uev=10.0)
    spectral_map = synthesize_map(params, NOISELESS_ANGLES, ENERGY_GRID)
    summary = extract_fss(spectral_map)
    assert not summary.degenerate_h_line
    mean_x, _ = summary.degeneracy_offsets['X_H']
    mean_xx, _ = summary.degeneracy_offsets['XX_H']
    assert abs((mean_xx - mean_x) - 10.0) < 1e-3


def test_noisy_full_rotation_recovers_fss():
    params = QuadrupletParams(principal_axis_deg=5.0, background=1.0)
    angles = np.arange(0.0, 360.0, 10.0)
    spectral_map = synthesize_map(params, angles, ENERGY_GRID, noise_level=0.05, seed=11)
    summary = extract_fss(spectral_map)
    assert abs(summary.delta_fss_mean - 51.0) < 6.0
    assert summary.n_fits >= 10


def test_too_few_fits_raises():
    spectral_map = synthesize_map(DEFAULT_PARAMS, [40.0, 50.0, 60.0], ENERGY_GRID)
    try:
        extract_fss(spectral_map)
    except InsufficientDataError:
        return
    raise AssertionError("fewer than ten fits must raise InsufficientDataError")


def test_degeneracy_test_threshold():
    assert degeneracy_test({'X_H': (0.0, 1.0), 'XX_H': (1.5, 1.0)})
    assert not degeneracy_test({'X_H': (0.0, 0.5), 'XX_H': (1.5, 0.5)})


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
