#!/usr/bin/env python3
"""
四能级模型测试：稳态、演化、g² 基准值、闭式核对、复合曲线、IRF 卷积
"""

import sys

import numpy as np

from error_handler import InvalidParameterError, ResolutionError
from model_core import (G2Curve, InstrumentResponse, Occupations, RateSet, auto_weights,
                        convolve_irf, derived_quantities, evolve, g2_closed_form, g2_composites,
                        g2_numeric, gaussian_kernel, generator_matrix, closed_form_discrepancies, steady_state,
                        symmetric_grid, zero_delay_value)

CANONICAL = RateSet.equal_pumps(1.0, 1.0, 1.0)
LOW_PUMP = RateSet.equal_pumps(1.0, 1.0, 0.1)

# 0..10 ns
TAU_PS = np.linspace(0.0, 10000.0, 401)
TAU_NS = TAU_PS / 1000.0


def _random_rates(count, seed=11, equal_pumps=True):
    rng = np.random.default_rng(seed)
    rates = []
    while len(rates) < count:
        gb, gx, pb, px = rng.uniform(0.05, 3.0, size=4)
        if equal_pumps:
            px = pb
        rates.append(RateSet(gb, gx, pb, px))
    return rates


def _random_rates_positive_d(count, seed=5):
    selected = []
    for rates in _random_rates(200, seed=seed):
        if derived_quantities(rates)['D'] > 0:
            selected.append(rates)
        if len(selected) == count:
            break
    return selected


# ============================================
# 稳态与演化
# ============================================
def test_generator_columns_sum_to_zero():
    for rates in _random_rates(5, equal_pumps=False):
        assert np.allclose(generator_matrix(rates).sum(axis=0), 0.0, atol=1e-14)


def test_steady_state_canonical_quarter():
    occ = steady_state(CANONICAL)
    assert np.allclose(occ.as_vector(), 0.25, atol=1e-12)


def test_steady_state_low_pump():
    occ = steady_state(LOW_PUMP)
    assert abs(occ.rho_hh - 0.1 / 1.21) < 1e-12
    assert abs(occ.rho_bb - 0.01 / 1.21) < 1e-12


def test_steady_state_closed_form_random_sets():
    for rates in _random_rates(20):
        gb, gx, p = rates.gamma_b, rates.gamma_x, rates.p_x
        n = gx * gb + 2 * p * gb + p ** 2
        occ = steady_state(rates)
        assert abs(occ.rho_bb - p ** 2 / n) < 1e-9
        assert abs(occ.rho_hh - p * gb / n) < 1e-9
        assert abs(occ.rho_vv - p * gb / n) < 1e-9


def test_steady_state_unequal_pumps_is_fixed_point():
    for rates in _random_rates(5, equal_pumps=False):
        vector = steady_state(rates).as_vector()
        assert np.allclose(generator_matrix(rates) @ vector, 0.0, atol=1e-12)


def test_weak_pump_limit_ground_state():
    occ = steady_state(RateSet.equal_pumps(1.0, 1.0, 1e-6))
    assert occ.rho_gg > 1 - 1e-5


def test_non_positive_rate_rejected():
    try:
        RateSet(1.0, 1.0, 0.0, 1.0)
    except InvalidParameterError:
        return
    raise AssertionError("zero rate must be rejected")


def test_evolve_identity_at_zero():
    init = Occupations(0.1, 0.2, 0.3, 0.4)
    assert np.allclose(evolve(LOW_PUMP, init, 0.0).as_vector(), init.as_vector())


def test_evolve_exciton_sum_canonical():
    init = Occupations.pure('H')
    for tau in (0.1, 0.5, 1.0, 3.0):
        occ = evolve(CANONICAL, init, tau)
        assert abs(occ.rho_hh + occ.rho_vv - (0.5 + 0.5 * np.exp(-4 * tau))) < 1e-9


def test_evolve_conserves_probability():
    init = Occupations.pure('B')
    for rates in _random_rates(5, equal_pumps=False):
        for tau in (0.01, 1.0, 1000.0 / rates.min_rate):
            assert abs(evolve(rates, init, tau).as_vector().sum() - 1.0) < 1e-9


def test_evolve_steady_state_is_fixed_point():
    for rates in _random_rates(5):
        occ = steady_state(rates)
        assert np.allclose(evolve(rates, occ, 2.5).as_vector(), occ.as_vector(), atol=1e-9)


def test_evolve_negative_tau_rejected():
    try:
        evolve(CANONICAL, Occupations.pure('G'), -0.1)
    except InvalidParameterError:
        return
    raise AssertionError("tau < 0 must be rejected")


# ============================================
# g² 基准
# ============================================
def test_oracle_spot_values_canonical():
    t = TAU_NS
    expected = {
        'XX-X': 1 + 2 * np.exp(-2 * t) + np.exp(-4 * t),
        'X-XX': (1 - np.exp(-2 * t)) ** 2,
        'X-X': 1 - np.exp(-4 * t),
        'XX-XX': 1 - np.exp(-4 * t),
    }
    for kind, values in expected.items():
        curve = g2_numeric(kind, CANONICAL, TAU_PS)
        assert np.max(np.abs(curve.values - values)) < 1e-9, kind


def test_antibunched_kinds_vanish_at_zero():
    for rates in _random_rates(10):
        for kind in ('X-XX', 'X-X', 'XX-XX'):
            assert abs(g2_numeric(kind, rates, [0.0]).values[0]) < 1e-12


def test_xx_x_zero_delay_is_inverse_exciton_population():
    for rates in _random_rates(10, equal_pumps=False):
        g0 = g2_numeric('XX-X', rates, [0.0]).values[0]
        assert abs(g0 * steady_state(rates).rho_hh - 1.0) < 1e-9


def test_all_kinds_relax_to_one():
    for rates in _random_rates(5):
        tau = [50.0 / rates.min_rate * 1000.0]
        for kind in ('XX-X', 'X-XX', 'X-X', 'XX-XX'):
            assert abs(g2_numeric(kind, rates, tau).values[0] - 1.0) < 1e-3


def test_unknown_kind_rejected():
    try:
        g2_numeric('X-Y', CANONICAL, [0.0])
    except InvalidParameterError:
        return
    raise AssertionError("unknown kind must be rejected")


# ============================================
# 闭式核对
# ============================================
def test_closed_forms_match_oracle_for_x_xx_and_xx_xx():
    for rates in [CANONICAL] + _random_rates_positive_d(10):
        for kind in ('X-XX', 'XX-XX'):
            literal = g2_closed_form(kind, rates, TAU_PS).values
            oracle = g2_numeric(kind, rates, TAU_PS).values
            assert np.max(np.abs(literal - oracle)) < 1e-9, (kind, rates)


def test_xx_x_literal_discrepancy_at_canonical_point():
    q = derived_quantities(CANONICAL)
    assert (q['beta1'], q['beta2'], q['beta3'], q['beta4']) == (16.0, 32.0, 0.0, 24.0)
    literal = g2_closed_form('XX-X', CANONICAL, [0.0]).values[0]
    oracle = g2_numeric('XX-X', CANONICAL, [0.0]).values[0]
    assert abs(literal - 4.5) < 1e-12
    assert abs(oracle - 4.0) < 1e-12


def test_closed_form_discrepancies_reports_disagreeing_kinds():
    report = closed_form_discrepancies(CANONICAL, TAU_PS)
    assert report['X-XX'] < 1e-9
    assert report['XX-XX'] < 1e-9
    assert report['XX-X'] > 0.1
    assert report['X-X'] > 1e-3


def test_beta3_variants_coincide_at_unit_pump():
    plain = derived_quantities(CANONICAL, 'plain')['beta3']
    with_p = derived_quantities(CANONICAL, 'with_P')['beta3']
    assert plain == with_p


def test_closed_forms_need_equal_pumps():
    try:
        g2_closed_form('X-XX', RateSet(1.0, 1.0, 0.5, 1.0), [0.0])
    except InvalidParameterError:
        return
    raise AssertionError("unequal pumps must be rejected")


def test_discriminant_non_negative_for_positive_rates():
    # D = (2Γ_B − P − Γ_X)² + 4Γ_X·P
    for rates in _random_rates(50, seed=3):
        q = derived_quantities(rates)
        gb, gx, p = rates.gamma_b, rates.gamma_x, rates.p_x
        assert abs(q['D'] - ((2 * gb - p - gx) ** 2 + 4 * gx * p)) < 1e-9
        assert q['D'] > 0


# ============================================
# 复合曲线
# ============================================
def test_composites_canonical_zero_delay():
    cross, auto = g2_composites(CANONICAL, [0.0])
    assert abs(cross.values[0] - 4.0) < 1e-9
    assert abs(auto.values[0] - 1.0) < 1e-9


def test_composites_low_pump_values():
    cross, auto = g2_composites(LOW_PUMP, [0.0])
    assert abs(cross.values[0] - 12.1) < 1e-9
    assert abs(auto.values[0] - 3.025) < 1e-9


def test_auto_to_cross_ratio_is_quarter_with_equal_weights():
    for rates in _random_rates(10, equal_pumps=False):
        cross, auto = g2_composites(rates, [0.0])
        assert abs(auto.values[0] / cross.values[0] - 0.25) < 1e-12


def test_cross_uses_x_xx_at_negative_delay():
    grid = symmetric_grid(3000.0, 100.0)
    cross, auto = g2_composites(LOW_PUMP, grid)
    negative = grid < 0
    assert np.allclose(cross.values[negative], g2_numeric('X-XX', LOW_PUMP, -grid[negative]).values)
    assert np.allclose(auto.values, auto.values[::-1])


def test_flux_weights_sum_to_one_and_match_equal_at_balance():
    weights = auto_weights(LOW_PUMP, 'flux')
    assert abs(sum(weights) - 1.0) < 1e-12
    assert np.allclose(auto_weights(CANONICAL, 'flux'), auto_weights(CANONICAL, 'equal'))
    # F_X > F_XX at weak pumping
    assert weights[2] > weights[3]


def test_zero_delay_value_matches_composites():
    cross, auto = g2_composites(LOW_PUMP, [0.0], weighting='flux')
    assert abs(zero_delay_value('cross', LOW_PUMP) - cross.values[0]) < 1e-9
    assert abs(zero_delay_value('auto', LOW_PUMP, 'flux') - auto.values[0]) < 1e-9


# ============================================
# IRF 卷积
# ============================================
def test_convolution_preserves_constant():
    grid = symmetric_grid(5000.0, 10.0)
    curve = G2Curve(grid, np.ones(grid.size), 'cross')
    result = convolve_irf(curve, InstrumentResponse(350.0))
    assert np.allclose(result.values, 1.0, atol=1e-12)


def test_gaussian_kernel_normalized_and_symmetric():
    kernel = gaussian_kernel(10.0, 350.0)
    assert abs(kernel.sum() - 1.0) < 1e-12
    assert np.allclose(kernel, kernel[::-1])
    assert kernel.size % 2 == 1


def test_convolution_fills_antibunching_dip():
    grid = np.arange(0.0, 10000.0, 10.0)
    curve = g2_numeric('XX-XX', CANONICAL, grid)
    result = convolve_irf(curve, InstrumentResponse(350.0))
    assert result.values[0] > 0.0
    assert abs(result.values[-1] - curve.values[-1]) < 1e-6


def test_convolution_reduces_bunching_peak():
    grid = symmetric_grid(10000.0, 20.0)
    cross, _ = g2_composites(LOW_PUMP, grid)
    result = convolve_irf(cross, InstrumentResponse(350.0))
    center = grid.size // 2
    assert result.values[center] < cross.values[center]
    assert abs(result.values[0] - cross.values[0]) < 1e-4


def test_coarse_grid_raises_resolution_error():
    grid = symmetric_grid(5000.0, 50.0)
    curve = G2Curve(grid, np.ones(grid.size), 'cross')
    try:
        convolve_irf(curve, InstrumentResponse(350.0))
    except ResolutionError:
        return
    raise AssertionError("spacing > fwhm/10 must raise ResolutionError")


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
