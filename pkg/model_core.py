"""
四能级速率方程模型
稳态、时间演化、量子回归 g² 数值解、闭式表达式、复合关联函数与 IRF 卷积

时间约定：速率单位 1/ns，G2Curve 的 τ 网格单位 ps。
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from error_handler import (ComplexBranchError, InvalidParameterError, ResolutionError,
                           log_event)
from numerics import matrix_exponential_action, matrix_exponential_series

# 态顺序：基态 G、两个激子 H / V、双激子 B
STATES = ('G', 'H', 'V', 'B')
G, H, V, B = range(4)

# 单一关联函数：kind -> (探测后塌缩到的态, 读取的终止态)
SINGLE_KINDS = {
    'XX-X': (H, H),
    'XX-XX': (H, B),
    'X-XX': (G, B),
    'X-X': (G, H),
}
COMPOSITE_KINDS = ('auto-composite', 'cross')
ALL_KINDS = tuple(SINGLE_KINDS) + COMPOSITE_KINDS

WEIGHTINGS = ('equal', 'flux')

PS_PER_NS = 1000.0
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


# ============================================
# 数据类型
# ============================================
@dataclass(frozen=True)
class RateSet:
    """
    模型速率（单位 1/ns）

    - gamma_b: 每个双激子衰减通道的速率（B→H 与 B→V 各一个）
    - gamma_x: 激子衰减速率
    - p_b: 激子→双激子泵浦速率
    - p_x: 基态→激子泵浦速率（每个偏振）
    """
    gamma_b: float
    gamma_x: float
    p_b: float
    p_x: float

    def __post_init__(self):
        for name in ('gamma_b', 'gamma_x', 'p_b', 'p_x'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterError(f"rate {name} must be positive and finite, got {value}")

    @classmethod
    def equal_pumps(cls, gamma_b, gamma_x, pump):
        """P = p_X = p_B 的常用构造"""
        return cls(gamma_b=gamma_b, gamma_x=gamma_x, p_b=pump, p_x=pump)

    @property
    def has_equal_pumps(self):
        return np.isclose(self.p_b, self.p_x, rtol=1e-12, atol=0.0)

    @property
    def min_rate(self):
        return min(self.gamma_b, self.gamma_x, self.p_b, self.p_x)

    def to_dict(self):
        return {'gamma_b': self.gamma_b, 'gamma_x': self.gamma_x, 'p_b': self.p_b, 'p_x': self.p_x}


@dataclass(frozen=True)
class Occupations:
    """态占据概率 ρ_GG, ρ_HH, ρ_VV, ρ_BB"""
    rho_gg: float
    rho_hh: float
    rho_vv: float
    rho_bb: float

    def __post_init__(self):
        values = self.as_vector()
        if np.any(values < -1e-12) or np.any(values > 1 + 1e-12):
            raise InvalidParameterError(f"occupations must lie in [0,1], got {values}")
        if abs(values.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"occupations must sum to 1, got {values.sum():.12g}")

    def as_vector(self):
        return np.array([self.rho_gg, self.rho_hh, self.rho_vv, self.rho_bb], dtype=float)

    @classmethod
    def from_vector(cls, values):
        values = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
        return cls(*values)

    @classmethod
    def pure(cls, state):
        """全部布居在单一态（'G' / 'H' / 'V' / 'B'）"""
        values = np.zeros(4)
        values[STATES.index(state)] = 1.0
        return cls(*values)


@dataclass
class G2Curve:
    """
    g² 曲线

    - tau_grid: 延迟（ps）
    - values: 无量纲 g² 值
    - kind: XX-X / X-XX / X-X / XX-XX / auto-composite / cross
    - counts: 由直方图归一化而来时保留原始计数（拟合权重用）
    """
    tau_grid: np.ndarray
    values: np.ndarray
    kind: str
    counts: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in ALL_KINDS:
            raise InvalidParameterError(f"unknown g2 kind '{self.kind}'")
        if self.tau_grid.shape != self.values.shape:
            raise InvalidParameterError("tau_grid and values must have the same length")
        if np.any(self.values < 0):
            raise InvalidParameterError("g2 values must be >= 0")

    @property
    def spacing_ps(self):
        return float(self.tau_grid[1] - self.tau_grid[0]) if self.tau_grid.size > 1 else 0.0

    def is_uniform(self):
        if self.tau_grid.size < 2:
            return True
        steps = np.diff(self.tau_grid)
        return np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9)

    def value_at(self, tau_ps):
        return float(np.interp(tau_ps, self.tau_grid, self.values))


@dataclass(frozen=True)
class InstrumentResponse:
    """高斯仪器响应（FWHM, ps）"""
    fwhm_ps: float = 350.0

    def __post_init__(self):
        if not self.fwhm_ps > 0:
            raise InvalidParameterError(f"IRF fwhm must be > 0, got {self.fwhm_ps}")

    @property
    def sigma_ps(self):
        return self.fwhm_ps * FWHM_TO_SIGMA


# ============================================
# 速率方程
# ============================================
def generator_matrix(rates: RateSet):
    """
    4×4 生成元（列和为 0），态顺序 G, H, V, B

    激子方程中的泵浦项取 −P_B·ρ_HH（−P_B·ρ_VV）：
    只有这种形式守恒概率并给出 P²/N、PΓ_B/N 的稳态。
    """
    gb, gx, pb, px = rates.gamma_b, rates.gamma_x, rates.p_b, rates.p_x
    return np.array([
        [-2 * px,       gx,       gx,       0.0],
        [px,     -(gx + pb),      0.0,       gb],
        [px,            0.0, -(gx + pb),     gb],
        [0.0,           pb,       pb,  -2 * gb],
    ])


def steady_state(rates: RateSet) -> Occupations:
    """
    速率方程的唯一不动点

    Args:
        rates: RateSet（允许 p_X ≠ p_B）

    Returns:
        Occupations
    """
    g = generator_matrix(rates)
    system = g.copy()
    system[-1, :] = 1.0  # 用归一化替换一行
    rhs = np.zeros(4)
    rhs[-1] = 1.0
    return Occupations.from_vector(np.linalg.solve(system, rhs))


def evolve(rates: RateSet, init: Occupations, tau_ns: float) -> Occupations:
    """
    在线性主方程下演化 τ（ns）

    Raises:
        InvalidParameterError: τ < 0
    """
    if tau_ns < 0:
        raise InvalidParameterError(f"tau must be >= 0, got {tau_ns}")
    vector = matrix_exponential_action(generator_matrix(rates), init.as_vector(), tau_ns)
    return Occupations.from_vector(vector)


def derived_quantities(rates: RateSet, beta3_variant='plain'):
    """
    闭式表达式使用的派生量（要求 P = p_X = p_B）

    返回 N, D（判别式）, sqrt_D, beta1..beta4, a = P²/N, Z = 4DN。
    beta3_variant='plain' 取 6Γ_B 项，'with_P' 取 6Γ_B·P 项。
    """
    if not rates.has_equal_pumps:
        raise InvalidParameterError("closed forms require equal pumps p_x == p_b")
    if beta3_variant not in ('plain', 'with_P'):
        raise InvalidParameterError(f"unknown beta3 variant '{beta3_variant}'")

    gb, gx, p = rates.gamma_b, rates.gamma_x, rates.p_x
    n = gx * gb + 2 * p * gb + p ** 2
    d = (gx - 2 * gb) ** 2 + 6 * gx * p - 4 * gb * p + p ** 2
    s = np.sqrt(d) if d >= 0 else float('nan')

    six_term = 6 * gb if beta3_variant == 'plain' else 6 * gb * p
    beta3 = (gx ** 3 * gb
             - p ** 2 * (2 * gb - p) * (-2 * gb + p + s)
             + gx ** 2 * (-4 * gb ** 2 + six_term + p ** 2 - gb * s)
             + gx * (4 * gb ** 3 + p ** 2 * (6 * p - s) + 2 * gb ** 2 * (-2 * p + s) - 3 * gb * p * (p + s)))
    beta4 = (gx ** 3 * gb
             + p ** 2 * (2 * gb - p) * (2 * gb - p + s)
             + gx ** 2 * (-4 * gb ** 2 + 6 * gb * p + p ** 2 + gb * s)
             + gx * (4 * gb ** 3 + p ** 2 * (6 * p + s) + 2 * gb ** 2 * (-2 * p + s) + 3 * gb * p * (-p + s)))

    return {
        'N': n,
        'D': d,
        'sqrt_D': s,
        'beta1': 4 * gb * p * d,
        'beta2': 2 * d * n,
        'beta3': beta3,
        'beta4': beta4,
        'a': p ** 2 / n,
        'Z': 4 * d * n,  # 未在任何表达式中使用
    }


# ============================================
# g² 函数
# ============================================
def _tau_ns(tau_grid):
    return np.asarray(tau_grid, dtype=float) / PS_PER_NS


def g2_numeric(kind, rates: RateSet, tau_grid) -> G2Curve:
    """
    量子回归构造的 g²(τ)（模型曲线的基准）

    起始光子探测后系统塌缩到相应态（XX 光子 → H，X 光子 → G），
    用同一生成元演化，读取终止跃迁的上能级布居并除以其稳态值。

    Args:
        kind: XX-X / X-XX / X-X / XX-XX
        rates: RateSet
        tau_grid: τ ≥ 0 网格（ps）

    Returns:
        G2Curve
    """
    if kind not in SINGLE_KINDS:
        raise InvalidParameterError(f"unknown g2 kind '{kind}'")
    tau_ns = _tau_ns(tau_grid)
    if np.any(tau_ns < 0):
        raise InvalidParameterError("g2_numeric requires tau >= 0")

    start, read = SINGLE_KINDS[kind]
    init = np.zeros(4)
    init[start] = 1.0
    populations = matrix_exponential_series(generator_matrix(rates), init, tau_ns)
    reference = steady_state(rates).as_vector()[read]

    values = np.clip(populations[:, read] / reference, 0.0, None)
    return G2Curve(tau_grid=np.asarray(tau_grid, dtype=float), values=values, kind=kind)


def g2_closed_form(kind, rates: RateSet, tau_grid, beta3_variant='plain') -> G2Curve:
    """
    闭式表达式的逐字转写（仅用于文档与交叉核对）

    已知 XX-X 与 X-X 两式与数值解不一致；g2_numeric 才是基准。

    Raises:
        ComplexBranchError: D < 0
        InvalidParameterError: 泵浦不等、D = 0 或未知 kind
    """
    if kind not in SINGLE_KINDS:
        raise InvalidParameterError(f"unknown g2 kind '{kind}'")
    q = derived_quantities(rates, beta3_variant=beta3_variant)
    if q['D'] < 0:
        raise ComplexBranchError(f"discriminant D = {q['D']:.6g} < 0; closed forms not evaluated")
    if q['D'] == 0:
        raise InvalidParameterError("discriminant D = 0; closed forms are singular")

    gb, gx, p = rates.gamma_b, rates.gamma_x, rates.p_x
    s = q['sqrt_D']
    t = _tau_ns(tau_grid)
    total = gx + 2 * gb + 3 * p

    # e^{-(T+s)τ/2} 与 e^{-(T-s)τ/2}，避免 e^{sτ} 溢出
    em = np.exp(-(total + s) * t / 2)
    ep = np.exp(-(total - s) * t / 2)

    if kind == 'XX-X':
        prefactor = q['N'] * q['a'] / (4 * q['D'] * p ** 3 * gb)
        values = prefactor * (q['beta1']
                              + q['beta2'] * np.exp(-(gx + p) * t)
                              + q['beta3'] * np.exp(-(0.5 * gx + gb + 1.5 * p - 0.5 * s) * t)
                              + q['beta4'] * np.exp(-(0.5 * gx + gb + 1.5 * p + 0.5 * s) * t))
    elif kind == 'X-XX':
        values = 0.5 * ((em - ep) * total / s - (em + ep)) + 1
    elif kind == 'X-X':
        k = (gx - 2 * gb) * gb + gb * p + p ** 2
        values = (-gb * s * (em + ep) - (em - ep) * k) / (2 * gb * s) + 1
    else:  # XX-XX
        values = ((em - ep) * (gx + p) * (-2 * gb + p) - p * s * (em + ep)) / (2 * p * s) + 1

    return G2Curve(tau_grid=np.asarray(tau_grid, dtype=float), values=np.clip(values, 0.0, None), kind=kind)


def closed_form_discrepancies(rates: RateSet, tau_grid, tolerance=1e-9, beta3_variant='plain'):
    """
    比较闭式与数值解，返回各 kind 的最大绝对偏差；超出容差的 kind 记 WARNING
    """
    report = {}
    for kind in SINGLE_KINDS:
        literal = g2_closed_form(kind, rates, tau_grid, beta3_variant=beta3_variant).values
        oracle = g2_numeric(kind, rates, tau_grid).values
        deviation = float(np.max(np.abs(literal - oracle)))
        report[kind] = deviation
        if deviation > tolerance:
            log_event('MODEL', level='WARNING', action='closed_form_discrepancy', kind=kind,
                      max_abs_dev=deviation, beta3=beta3_variant)
    return report


def auto_weights(rates: RateSet, weighting='equal'):
    """
    自关联中四种关联的权重 (α, β, γ, δ)，对应 XX-X, X-XX, X-X, XX-XX

    'equal'：四项各 ¼。
    'flux'：按单一偏振通道的稳态光子通量 F_XX = Γ_B·ρ_BB、F_X = Γ_X·ρ_HH 加权，
    与蒙特卡罗探测统计一致；仅当 p_B = Γ_X 时两者相等。
    """
    if weighting not in WEIGHTINGS:
        raise InvalidParameterError(f"unknown weighting '{weighting}'")
    if weighting == 'equal':
        return (0.25, 0.25, 0.25, 0.25)

    occ = steady_state(rates)
    flux_xx = rates.gamma_b * occ.rho_bb
    flux_x = rates.gamma_x * occ.rho_hh
    norm = (flux_xx + flux_x) ** 2
    return (flux_xx * flux_x / norm, flux_x * flux_xx / norm, flux_x ** 2 / norm, flux_xx ** 2 / norm)


def g2_composites(rates: RateSet, tau_grid, weighting='equal'):
    """
    交叉关联与自关联复合曲线

    cross(τ) = g²_XX-X(τ)（τ ≥ 0），g²_X-XX(|τ|)（τ < 0）；
    auto(τ) = α·g²_XX-X + β·g²_X-XX + γ·g²_X-X + δ·g²_XX-XX，在 |τ| 处取值。

    Returns:
        (cross, auto) 两条 G2Curve
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    magnitude = np.abs(tau_grid)
    unique, inverse = np.unique(magnitude, return_inverse=True)

    curves = {kind: g2_numeric(kind, rates, unique).values[inverse] for kind in SINGLE_KINDS}

    cross_values = np.where(tau_grid >= 0, curves['XX-X'], curves['X-XX'])
    alpha, beta, gamma, delta = auto_weights(rates, weighting)
    auto_values = (alpha * curves['XX-X'] + beta * curves['X-XX']
                   + gamma * curves['X-X'] + delta * curves['XX-XX'])

    cross = G2Curve(tau_grid=tau_grid, values=cross_values, kind='cross')
    auto = G2Curve(tau_grid=tau_grid, values=auto_values, kind='auto-composite')
    return cross, auto


def composite_curve(kind, rates: RateSet, tau_grid, weighting='equal'):
    """按 'auto' / 'cross' 取一条复合曲线"""
    cross, auto = g2_composites(rates, tau_grid, weighting=weighting)
    if kind in ('cross',):
        return cross
    if kind in ('auto', 'auto-composite'):
        return auto
    raise InvalidParameterError(f"composite kind must be 'auto' or 'cross', got '{kind}'")


def zero_delay_value(kind, rates: RateSet, weighting='equal'):
    """去卷积的 g²(0)：cross 为 1/ρ_HH，auto 为 α/ρ_HH"""
    cross0 = 1.0 / steady_state(rates).rho_hh
    if kind == 'cross':
        return cross0
    if kind in ('auto', 'auto-composite'):
        return auto_weights(rates, weighting)[0] * cross0
    raise InvalidParameterError(f"composite kind must be 'auto' or 'cross', got '{kind}'")


# ============================================
# IRF 卷积
# ============================================
def gaussian_kernel(spacing_ps, fwhm_ps):
    """单位面积高斯核，截断于 ±5σ"""
    sigma = fwhm_ps * FWHM_TO_SIGMA
    half = int(np.ceil(5 * sigma / spacing_ps))
    offsets = np.arange(-half, half + 1) * spacing_ps
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def convolve_irf(curve: G2Curve, irf: InstrumentResponse) -> G2Curve:
    """
    与高斯 IRF 做离散卷积（边界按最近值延拓，保证长尾不变）

    Raises:
        ResolutionError: 网格非均匀或间距 > fwhm/10
    """
    if curve.tau_grid.size < 2:
        raise ResolutionError("curve needs at least two grid points")
    if not curve.is_uniform():
        raise ResolutionError("convolution requires a uniform tau grid")
    spacing = curve.spacing_ps
    if spacing > irf.fwhm_ps / 10:
        raise ResolutionError(f"grid spacing {spacing:g} ps exceeds fwhm/10 = {irf.fwhm_ps / 10:g} ps")

    kernel = gaussian_kernel(spacing, irf.fwhm_ps)
    values = ndimage.convolve1d(curve.values, kernel, mode='nearest')
    return G2Curve(tau_grid=curve.tau_grid.copy(), values=np.clip(values, 0.0, None), kind=curve.kind)


def symmetric_grid(window_ps, spacing_ps):
    """以 τ=0 为中心的奇数点均匀网格 [−window, window]"""
    half = int(round(window_ps / spacing_ps))
    return np.arange(-half, half + 1, dtype=float) * spacing_ps
