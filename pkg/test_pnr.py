#!/usr/bin/env python3
"""
光子数分辨测试：二项稀释、比值反演、本底扣除、TES 模拟与分类、端到端重建
"""

import sys

import numpy as np

from error_handler import InfeasibleDataError, InsufficientDataError, InvalidParameterError
from pnr import (CountRecord, PhotonNumberDist, TesModel, background_subtract, classify,
                 pulsed_twin_rate_from_distribution, reconstruct, simulate_tes, thin_binomial)

MEASURED_S = 5.04e-4
MEASURED_SOURCE = PhotonNumberDist([0.858, 0.062, 0.080])


# ============================================
# 二项稀释
# ============================================
def test_thinning_measured_source_ratios():
    q = thin_binomial(MEASURED_SOURCE, MEASURED_S)
    assert q.plane == 'detector'
    assert abs(q.p(2) / q.p(1) - 1.8e-4) < 0.05e-4
    assert abs(q.p(1) / q.p(0) - 1.1e-4) < 0.05e-4


def test_thinning_unit_success_is_identity():
    q = thin_binomial(MEASURED_SOURCE, 1.0)
    assert np.allclose(q.probabilities, MEASURED_SOURCE.probabilities, atol=1e-15)


def test_thinning_preserves_mean_scaling():
    source = PhotonNumberDist([0.1, 0.2, 0.3, 0.4])
    q = thin_binomial(source, 0.3)
    n = np.arange(4)
    assert abs(q.probabilities @ n - 0.3 * (source.probabilities @ n)) < 1e-12
    assert abs(q.probabilities.sum() - 1.0) < 1e-12


def test_thinning_rejects_zero_success():
    try:
        thin_binomial(MEASURED_SOURCE, 0.0)
    except InvalidParameterError:
        return
    raise AssertionError("s = 0 must be rejected")


def test_distribution_must_sum_to_one():
    try:
        PhotonNumberDist([0.5, 0.2])
    except InvalidParameterError:
        return
    raise AssertionError("probabilities not summing to 1 must be rejected")


# ============================================
# 反演
# ============================================
def test_reconstruct_measured_ratios():
    dist = reconstruct((1.81e-4, 1.1e-4), MEASURED_S)
    assert abs(dist.p(2) - 0.080) < 0.005
    assert abs(dist.p(1) - 0.062) < 0.005
    assert abs(dist.probabilities.sum() - 1.0) < 1e-12
    assert dist.lower is None


def test_reconstruct_inverts_thinning():
    q = thin_binomial(MEASURED_SOURCE, MEASURED_S)
    dist = reconstruct((q.p(2) / q.p(1), q.p(1) / q.p(0)), MEASURED_S)
    assert np.allclose(dist.probabilities, MEASURED_SOURCE.probabilities, atol=1e-9)


def test_reconstruct_round_trip_moderate_loss():
    source = PhotonNumberDist([0.5, 0.3, 0.2])
    q = thin_binomial(source, 0.4)
    dist = reconstruct((q.p(2) / q.p(1), q.p(1) / q.p(0)), 0.4)
    assert np.allclose(dist.probabilities, source.probabilities, atol=1e-9)


def test_reconstruct_infeasible_ratios():
    try:
        reconstruct((1.0, 1e-4), 5e-4)
    except InfeasibleDataError:
        return
    raise AssertionError("infeasible ratios must raise InfeasibleDataError")


def test_reconstruct_rejects_unit_success_and_wide_support():
    for kwargs in ({'s': 1.0}, {'s': 0.5, 'support_max': 3}):
        try:
            reconstruct((1e-3, 1e-2), **kwargs)
        except InvalidParameterError:
            continue
        raise AssertionError(f"{kwargs} must be rejected")


def test_reconstruct_needs_nonzero_classes():
    try:
        reconstruct(CountRecord([100.0, 0.0, 0.0]), 0.5)
    except InsufficientDataError:
        return
    raise AssertionError("empty '1' class must raise InsufficientDataError")


# ============================================
# 本底扣除
# ============================================
def test_background_subtraction_measured_numbers():
    record = CountRecord([0.0, 0.0, 215.0], acquisition_time_s=16200.0,
                         trigger_mode='photon-triggered', background_per_hour=[0.0, 36.0, 3.6])
    corrected = background_subtract(record)
    assert abs(corrected.count(2) - 198.8) < 1e-9
    assert corrected.background_subtracted
    assert corrected.clamped == [1]


def test_zero_background_is_identity():
    record = CountRecord([10.0, 20.0, 30.0], acquisition_time_s=3600.0, background_per_hour=[0.0, 0.0, 0.0])
    corrected = background_subtract(record)
    assert np.array_equal(corrected.counts, record.counts)
    assert corrected.clamped == []


def test_background_missing_rates_rejected():
    try:
        background_subtract(CountRecord([1.0, 2.0, 3.0], acquisition_time_s=10.0))
    except InsufficientDataError:
        return
    raise AssertionError("missing background rates must raise InsufficientDataError")


# ============================================
# TES 模拟与分类
# ============================================
def test_classify_peak_means_and_thresholds():
    model = TesModel()
    record = classify([0.0, 1.0, 2.0, 3.0, 0.5, 1.49], model)
    assert list(record.counts) == [1.0, 3.0, 1.0, 1.0]


def test_tes_model_rejects_misplaced_thresholds():
    try:
        TesModel(thresholds=(0.5, 2.5, 2.6))
    except InvalidParameterError:
        return
    raise AssertionError("threshold outside adjacent means must be rejected")


def test_simulate_tes_reproducible():
    q = thin_binomial(PhotonNumberDist([0.5, 0.3, 0.2]), 0.05)
    first = simulate_tes(q, TesModel(), 10000, seed=4)
    second = simulate_tes(q, TesModel(), 10000, seed=4)
    assert np.array_equal(first, second)


def test_end_to_end_reconstruction_within_bootstrap_interval():
    source = PhotonNumberDist([0.5, 0.3, 0.2])
    s = 0.05
    model = TesModel(sigma=0.1)
    areas = simulate_tes(thin_binomial(source, s), model, 1000000, seed=19)
    record = classify(areas, model, acquisition_time_s=1.0)
    dist = reconstruct(record, s, n_resamples=2000, seed=1)
    assert dist.lower is not None and dist.method.endswith('16_84')
    for n in range(3):
        half_width = 0.5 * (dist.upper[n] - dist.lower[n])
        assert half_width > 0
        assert abs(dist.p(n) - source.p(n)) < 3 * half_width


def test_pulsed_twin_rate_from_reconstruction():
    dist = PhotonNumberDist([0.858, 0.062, 0.080])
    assert abs(pulsed_twin_rate_from_distribution(dist, 80e6, 0.09) - 51840.0) < 1e-6


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
