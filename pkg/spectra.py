"""
偏振分辨光谱
X/XX 四重线的合成、带约束的四 Lorentz 拟合、精细结构分裂提取与 H 通道能量简并检验

能量单位 μeV；位置相对 V 双峰中点给出。
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, signal

import config
from error_handler import (FitFailure, InsufficientDataError, InvalidParameterError,
                           log_event)
from numerics import FitProblem, RandomStream, least_squares

LINES = ('X_H', 'XX_H', 'X_V', 'XX_V')
BINDING_SIGNS = {'binding': 1.0, 'antibinding': -1.0}

# 光谱仪分辨率（开启时）
DEFAULT_RESOLUTION_UEV = 25.0

# 拟合参数顺序
PARAMETER_NAMES = ('e_xh', 'e_xxh', 'delta_fss', 'width_x', 'width_xx', 'area_h', 'area_v', 'ratio', 'offset')

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class QuadrupletParams:
    """
    四重线参数

    - center_energy_uev: X_H 能量（参考点）
    - delta_fss_uev: 精细结构分裂
    - binding_sign: 'binding'（X_V 在低能侧）或 'antibinding'
    - linewidth_x_uev / linewidth_xx_uev: Lorentz FWHM
    - intensity_ratio: I_X / I_XX
    - principal_axis_deg: H 偏振方向 θ₀
    - peak_area: XX_H 在 θ=θ₀ 时的积分强度
    - degeneracy_offset_uev: XX_H 相对 X_H 的偏移（简并时为 0）
    - line_weights: 四条线各自的额外权重（X_H, XX_H, X_V, XX_V）
    - background: 常数本底
    - absolute_energy_ev: 绝对能量（仅作元数据）
    """
    center_energy_uev: float = 0.0
    delta_fss_uev: float = 51.0
    binding_sign: str = 'binding'
    linewidth_x_uev: float = 30.0
    linewidth_xx_uev: float = 30.0
    intensity_ratio: float = 1.0
    principal_axis_deg: float = 0.0
    peak_area: float = 1000.0
    degeneracy_offset_uev: float = 0.0
    line_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    background: float = 0.0
    absolute_energy_ev: float = 1.33047

    def __post_init__(self):
        if self.binding_sign not in BINDING_SIGNS:
            raise InvalidParameterError(f"unknown binding sign '{self.binding_sign}'")
        if self.linewidth_x_uev <= 0 or self.linewidth_xx_uev <= 0:
            raise InvalidParameterError("linewidths must be > 0")
        if self.intensity_ratio <= 0:
            raise InvalidParameterError("intensity ratio must be > 0")
        if len(self.line_weights) != 4 or any(w < 0 for w in self.line_weights):
            raise InvalidParameterError("line weights must be four non-negative numbers")

    @property
    def sign(self):
        return BINDING_SIGNS[self.binding_sign]

    def positions(self):
        """四条线的能量（与角度无关）"""
        e_xh = self.center_energy_uev
        e_xxh = self.center_energy_uev + self.degeneracy_offset_uev
        return {
            'X_H': e_xh,
            'XX_H': e_xxh,
            'X_V': e_xh - self.delta_fss_uev * self.sign,
            'XX_V': e_xxh + self.delta_fss_uev * self.sign,
        }


@dataclass
class QuadrupletFit:
    """单条光谱的约束拟合结果"""
    angle_deg: Optional[float]
    positions: dict
    delta_fss: float
    width_x: float
    width_xx: float
    intensity_ratio: float
    area_h: float
    area_v: float
    offset: float
    residual_norm: float
    iterations: int
    degenerate: bool = False
    stderr: dict = field(default_factory=dict)

    @property
    def relative_positions(self):
        """相对 V 双峰中点的 ΔE"""
        midpoint = 0.5 * (self.positions['X_V'] + self.positions['XX_V'])
        return {line: energy - midpoint for line, energy in self.positions.items()}

    def to_dict(self):
        return {
            'angle_deg': self.angle_deg,
            'positions_ueV': self.positions,
            'relative_positions_ueV': self.relative_positions,
            'delta_fss_ueV': self.delta_fss,
            'width_x_ueV': self.width_x,
            'width_xx_ueV': self.width_xx,
            'intensity_ratio': self.intensity_ratio,
            'area_h': self.area_h,
            'area_v': self.area_v,
            'offset': self.offset,
            'residual_norm': self.residual_norm,
            'iterations': self.iterations,
            'degenerate': self.degenerate,
        }


@dataclass
class SpectralMap:
    """偏振角 × 能量的强度矩阵"""
    angles_deg: np.ndarray
    energy_grid: np.ndarray
    intensity: np.ndarray
    fits: list = field(default_factory=list)
    binding_sign: str = 'binding'
    resolution_uev: Optional[float] = None

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=float)
        self.energy_grid = np.asarray(self.energy_grid, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.intensity.shape != (self.angles_deg.size, self.energy_grid.size):
            raise InvalidParameterError("intensity must have shape (n_angles, n_energies)")
        if np.any(self.intensity < 0):
            raise InvalidParameterError("intensities must be >= 0")


@dataclass
class FssSummary:
    """精细结构分裂统计与 H 通道简并检验"""
    delta_fss_mean: float
    delta_fss_std: float
    degeneracy_offsets: dict
    n_fits: int
    degenerate_h_line: bool

    def to_dict(self):
        return {
            'delta_fss_mean_ueV': self.delta_fss_mean,
            'delta_fss_std_ueV': self.delta_fss_std,
            'degeneracy_offsets_ueV': {k: list(v) for k, v in self.degeneracy_offsets.items()},
            'n_fits': self.n_fits,
            'degenerate_h_line': self.degenerate_h_line,
        }


# ============================================
# 线型
# ============================================
def lorentzian(energy, center, fwhm, area=1.0):
    """面积归一化的 Lorentz 线型"""
    half = 0.5 * fwhm
    return area * (half / np.pi) / ((energy - center) ** 2 + half ** 2)


def _apply_resolution(spectrum, energy_grid, resolution_uev):
    if not resolution_uev:
        return spectrum
    spacing = energy_grid[1] - energy_grid[0]
    return ndimage.gaussian_filter1d(spectrum, resolution_uev * FWHM_TO_SIGMA / spacing, mode='nearest')


def _model(params, energy, sign, resolution_uev=None):
    e_xh, e_xxh, delta, w_x, w_xx, area_h, area_v, ratio, offset = params
    spectrum = (lorentzian(energy, e_xh, w_x, ratio * area_h)
                + lorentzian(energy, e_xxh, w_xx, area_h)
                + lorentzian(energy, e_xh - delta * sign, w_x, ratio * area_v)
                + lorentzian(energy, e_xxh + delta * sign, w_xx, area_v))
    return _apply_resolution(spectrum, energy, resolution_uev) + offset


# ============================================
# 合成
# ============================================
def synthesize_map(params: QuadrupletParams, angles_deg, energy_grid, noise_level=0.0, seed=None,
                   resolution_uev=None):
    """
    合成偏振分辨光谱图

    每条光谱为四个 Lorentz 之和：H 分量按 cos²(θ−θ₀)、V 分量按 sin²(θ−θ₀) 调制，
    叠加高斯噪声后钳位到 ≥ 0。

    Args:
        params: QuadrupletParams
        angles_deg: 偏振片角度
        energy_grid: 能量网格（μeV，需覆盖四条线 ±5 线宽）
        noise_level: 加性噪声标准差
        seed: 随机种子
        resolution_uev: 光谱仪分辨率（None 为关闭）

    Returns:
        SpectralMap
    """
    angles = np.asarray(angles_deg, dtype=float)
    energy = np.asarray(energy_grid, dtype=float)
    positions = params.positions()
    widest = 5 * max(params.linewidth_x_uev, params.linewidth_xx_uev)
    if energy.min() > min(positions.values()) - widest or energy.max() < max(positions.values()) + widest:
        raise InvalidParameterError("energy grid must span all four lines +- 5 linewidths")

    theta = np.deg2rad(angles - params.principal_axis_deg)
    weight_h = np.cos(theta) ** 2
    weight_v = np.sin(theta) ** 2

    w = params.line_weights
    area = params.peak_area
    ratio = params.intensity_ratio
    profiles = {
        'X_H': w[0] * lorentzian(energy, positions['X_H'], params.linewidth_x_uev, ratio * area),
        'XX_H': w[1] * lorentzian(energy, positions['XX_H'], params.linewidth_xx_uev, area),
        'X_V': w[2] * lorentzian(energy, positions['X_V'], params.linewidth_x_uev, ratio * area),
        'XX_V': w[3] * lorentzian(energy, positions['XX_V'], params.linewidth_xx_uev, area),
    }
    h_part = profiles['X_H'] + profiles['XX_H']
    v_part = profiles['X_V'] + profiles['XX_V']
    intensity = weight_h[:, None] * h_part[None, :] + weight_v[:, None] * v_part[None, :]
    if resolution_uev:
        intensity = np.array([_apply_resolution(row, energy, resolution_uev) for row in intensity])
    intensity = intensity + params.background

    if noise_level > 0:
        rng = RandomStream(config.DEFAULT_SEED if seed is None else seed).generator()
        intensity = intensity + rng.normal(0.0, noise_level, size=intensity.shape)
    intensity = np.clip(intensity, 0.0, None)

    log_event('SPECTRA', action='synthesize', angles=angles.size, points=energy.size,
              delta_fss=params.delta_fss_uev, noise=noise_level)
    return SpectralMap(angles, energy, intensity, binding_sign=params.binding_sign, resolution_uev=resolution_uev)


# ============================================
# 拟合
# ============================================
def initial_guess(spectrum, energy_grid, binding_sign='binding'):
    """
    由峰值检测给出初值

    取突出度最高的至多三个峰按能量排序：三峰时中间为 H 简并线、两侧为 V 双峰；
    两峰时 H 线取中点；单峰时分裂取两倍线宽。
    """
    spectrum = np.asarray(spectrum, dtype=float)
    energy = np.asarray(energy_grid, dtype=float)
    spacing = energy[1] - energy[0]
    baseline = float(np.percentile(spectrum, 10))
    signal_part = spectrum - baseline

    peaks, props = signal.find_peaks(signal_part, prominence=0.05 * max(signal_part.max(), 1e-12))
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(signal_part))])
        props = {'prominences': np.array([signal_part.max()])}

    strongest = peaks[np.argsort(props['prominences'])[::-1][:3]]
    strongest = np.sort(strongest)
    widths = signal.peak_widths(signal_part, strongest, rel_height=0.5)[0] * spacing
    width = float(max(np.median(widths), 2 * spacing))

    centers = energy[strongest]
    if centers.size == 3:
        e_h = centers[1]
        delta = 0.5 * (centers[2] - centers[0])
    elif centers.size == 2:
        e_h = centers.mean()
        delta = 0.5 * (centers[1] - centers[0])
    else:
        e_h = centers[0]
        delta = 2 * width

    height_h = max(np.interp(e_h, energy, signal_part), 1e-12)
    height_v = max(0.5 * (np.interp(e_h - delta, energy, signal_part) + np.interp(e_h + delta, energy, signal_part)), 1e-12)
    # 两条等面积 Lorentz 在峰值处的高度为 2·area·2/(π·w)
    area_h = height_h * np.pi * width / 4
    area_v = height_v * np.pi * width / 2
    return np.array([e_h, e_h, delta, width, width, area_h, area_v, 1.0, baseline])


def fit_quadruplet(spectrum, energy_grid, binding_sign='binding', initial=None, resolution_uev=None,
                   angle_deg=None):
    """
    约束四 Lorentz 拟合

    约束：γ_{X_H} = γ_{X_V}，γ_{XX_H} = γ_{XX_V}；ΔE_{X_H−X_V} = ΔE_{XX_H−XX_V} = ΔE_FSS；
    I_{X_H}/I_{XX_H} = I_{X_V}/I_{XX_V}。
    分裂小于半个线宽或某一偏振分量几乎为零时标记 degenerate 并记 WARNING。

    Returns:
        QuadrupletFit

    Raises:
        FitFailure: 未收敛
    """
    energy = np.asarray(energy_grid, dtype=float)
    data = np.asarray(spectrum, dtype=float)
    if energy.shape != data.shape or energy.size < 10:
        raise InvalidParameterError("spectrum and energy grid must have the same length (>= 10 points)")
    sign = BINDING_SIGNS[binding_sign]
    x0 = initial_guess(data, energy, binding_sign) if initial is None else np.asarray(initial, dtype=float)

    span = energy.max() - energy.min()
    spacing = energy[1] - energy[0]
    problem = FitProblem(
        residual=lambda params: _model(params, energy, sign, resolution_uev) - data,
        initial=x0,
        lower=[energy.min(), energy.min(), 0.0, spacing / 10, spacing / 10, 0.0, 0.0, 1e-3, -np.inf],
        upper=[energy.max(), energy.max(), span, span, span, np.inf, np.inf, 1e3, np.inf],
        max_iterations=config.FIT_MAX_ITERATIONS * 10,
        tolerance=1e-12,
    )
    result = least_squares(problem)
    e_xh, e_xxh, delta, w_x, w_xx, area_h, area_v, ratio, offset = result.params

    positions = {
        'X_H': float(e_xh),
        'XX_H': float(e_xxh),
        'X_V': float(e_xh - delta * sign),
        'XX_V': float(e_xxh + delta * sign),
    }
    largest = max(area_h, area_v)
    degenerate = bool(delta < 0.5 * min(w_x, w_xx) or min(area_h, area_v) < 1e-3 * largest)
    if degenerate:
        log_event('SPECTRA', level='WARNING', action='degenerate_fit', angle=angle_deg,
                  delta_fss=float(delta), width_x=float(w_x), area_h=float(area_h), area_v=float(area_v))

    return QuadrupletFit(
        angle_deg=angle_deg,
        positions=positions,
        delta_fss=float(delta),
        width_x=float(w_x),
        width_xx=float(w_xx),
        intensity_ratio=float(ratio),
        area_h=float(area_h),
        area_v=float(area_v),
        offset=float(offset),
        residual_norm=result.residual_norm,
        iterations=result.iterations,
        degenerate=degenerate,
        stderr=dict(zip(PARAMETER_NAMES, (float(v) for v in result.stderr))),
    )


def _fit_row(args):
    row, energy, sign_name, resolution, angle = args
    try:
        return fit_quadruplet(row, energy, sign_name, resolution_uev=resolution, angle_deg=angle)
    except FitFailure as e:
        log_event('SPECTRA', level='WARNING', action='fit_failed', angle=angle, residual_norm=e.residual_norm)
        return None


def fit_map(spectral_map: SpectralMap, threads=1):
    """逐角度拟合；失败的角度记 WARNING 并跳过"""
    jobs = [(row, spectral_map.energy_grid, spectral_map.binding_sign, spectral_map.resolution_uev, float(angle))
            for row, angle in zip(spectral_map.intensity, spectral_map.angles_deg)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(_fit_row, jobs))
    else:
        fits = [_fit_row(job) for job in jobs]
    spectral_map.fits = [fit for fit in fits if fit is not None]
    return spectral_map.fits


def degeneracy_test(offsets):
    """
    H 通道简并检验：|⟨ΔE_XH⟩ − ⟨ΔE_XXH⟩| ≤ std_XH + std_XXH

    Args:
        offsets: {'X_H': (mean, std), 'XX_H': (mean, std)}
    """
    mean_x, std_x = offsets['X_H']
    mean_xx, std_xx = offsets['XX_H']
    return bool(abs(mean_x - mean_xx) <= std_x + std_xx + 1e-9)


def extract_fss(spectral_map: SpectralMap, threads=1, min_fits=10):
    """
    精细结构分裂的均值与标准差，以及 X_H / XX_H 的平均相对位置

    Raises:
        InsufficientDataError: 有效（非退化）拟合少于 min_fits
    """
    fits = spectral_map.fits or fit_map(spectral_map, threads=threads)
    usable = [fit for fit in fits if not fit.degenerate]
    if len(usable) < min_fits:
        raise InsufficientDataError(f"need at least {min_fits} non-degenerate fits, got {len(usable)}")

    splittings = np.array([fit.delta_fss for fit in usable])
    relative_xh = np.array([fit.relative_positions['X_H'] for fit in usable])
    relative_xxh = np.array([fit.relative_positions['XX_H'] for fit in usable])

    offsets = {
        'X_H': (float(relative_xh.mean()), float(relative_xh.std())),
        'XX_H': (float(relative_xxh.mean()), float(relative_xxh.std())),
    }
    summary = FssSummary(
        delta_fss_mean=float(splittings.mean()),
        delta_fss_std=float(splittings.std()),
        degeneracy_offsets=offsets,
        n_fits=len(usable),
        degenerate_h_line=degeneracy_test(offsets),
    )
    log_event('SPECTRA', action='extract_fss', mean=summary.delta_fss_mean, std=summary.delta_fss_std,
              fits=summary.n_fits, degenerate_h_line=summary.degenerate_h_line)
    return summary

