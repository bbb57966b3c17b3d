"""
Hong–Ou–Mandel 干涉
对称 Mach–Zehnder 干涉仪中孪生光子对的事件级聚并模型、共/交叉偏振符合直方图与可见度
"""

from dataclasses import dataclass, replace

import numpy as np

import config
from correlator import correlate, peak_area_error, peak_areas
from error_handler import InvalidParameterError, PreconditionError, log_event
from numerics import RandomStream, quadrature

POLARIZATION_CONFIGS = ('co', 'cross')


@dataclass(frozen=True)
class HomConfig:
    """
    HOM 实验配置

    - mode_overlap_m: 有效不可区分度 M ∈ [0,1]
    - polarization_config: 'co'（共偏振）或 'cross'（交叉偏振，等效 M = 0）
    - rep_rate_hz: 激发重复频率
    - n_pulses: 脉冲数
    - efficiency: 干涉仪之后每个光子的探测概率
    - jitter_fwhm_ps: 探测器抖动
    """
    mode_overlap_m: float
    polarization_config: str = 'co'
    rep_rate_hz: float = 80e6
    n_pulses: int = 1000000
    efficiency: float = 1.0
    jitter_fwhm_ps: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mode_overlap_m <= 1:
            raise InvalidParameterError(f"mode overlap M must lie in [0,1], got {self.mode_overlap_m}")
        if self.polarization_config not in POLARIZATION_CONFIGS:
            raise InvalidParameterError(f"unknown polarization config '{self.polarization_config}'")
        if self.rep_rate_hz <= 0 or self.n_pulses < 0:
            raise InvalidParameterError("rep rate must be > 0 and n_pulses >= 0")
        if not 0 <= self.efficiency <= 1 or self.jitter_fwhm_ps < 0:
            raise InvalidParameterError("efficiency must lie in [0,1] and jitter must be >= 0")

    @property
    def effective_m(self):
        return self.mode_overlap_m if self.polarization_config == 'co' else 0.0

    @property
    def period_ps(self):
        return 1e12 / self.rep_rate_hz


# ============================================
# 时间包络重叠
# ============================================
def temporal_overlap(tau_x_ns, tau_xx_ns, include_jitter=False, rel_tol=1e-8):
    """
    XX 与 X 光子单边指数包络的平方重叠

    无抖动：|∫√(γ₁γ₂)·e^{−(γ₁+γ₂)t/2} dt|² = 4γ₁γ₂/(γ₁+γ₂)²；
    有抖动：X 光子起点相对 XX 光子有均值 τ_XX 的指数分布偏移，对偏移取平均（嵌套积分）。

    Args:
        tau_x_ns: 激子寿命
        tau_xx_ns: 双激子寿命
        include_jitter: 是否计入级联抖动

    Returns:
        float: M 的估计
    """
    if tau_x_ns <= 0 or tau_xx_ns <= 0:
        raise InvalidParameterError("lifetimes must be positive")

    g_xx = 1.0 / tau_xx_ns
    g_x = 1.0 / tau_x_ns

    def amplitude(offset):
        # XX 包络从 0 开始，X 包络从 offset 开始
        integrand = lambda t: np.sqrt(g_xx * g_x) * np.exp(-0.5 * g_xx * t - 0.5 * g_x * (t - offset))
        return quadrature(integrand, (offset, np.inf), rel_tol=rel_tol)

    if not include_jitter:
        return amplitude(0.0) ** 2

    overlap = quadrature(lambda d: g_xx * np.exp(-g_xx * d) * amplitude(d) ** 2, (0.0, np.inf), rel_tol=rel_tol * 10)
    log_event('HOM', action='temporal_overlap', tau_x_ns=tau_x_ns, tau_xx_ns=tau_xx_ns, jitter=True, M=overlap)
    return overlap


# ============================================
# 干涉仪模拟
# ============================================
def _pair_table(events):
    """H 通道光子按脉冲分组，返回 (时间, 脉冲序号, 对内次序, 是否成对)"""
    if 'pulse_index' not in events or events['pulse_index'].isna().any():
        raise PreconditionError("HOM simulation needs a pulsed event stream")

    photons = events[events['polarization'] == 'H'].sort_values(['pulse_index', 'time_ps'], kind='stable')
    pulse = photons['pulse_index'].to_numpy(dtype=np.int64)
    times = photons['time_ps'].to_numpy(dtype=np.int64)

    per_pulse = np.bincount(pulse) if pulse.size else np.zeros(0, dtype=np.int64)
    if per_pulse.size and per_pulse.max() > 2:
        raise PreconditionError("every pulse may carry at most two photons")

    first_in_pulse = np.ones(pulse.size, dtype=bool)
    first_in_pulse[1:] = pulse[1:] != pulse[:-1]
    paired = per_pulse[pulse] == 2 if pulse.size else np.zeros(0, dtype=bool)
    return times, pulse, first_in_pulse, paired


def _check_pulse_grid(events, hom_config: HomConfig):
    """
    事件流必须落在配置的脉冲网格上：每个光子位于自己脉冲的周期内，且脉冲序号小于 n_pulses

    Raises:
        PreconditionError: 重复频率或脉冲数与事件流不一致
    """
    if not len(events):
        return
    pulse = events['pulse_index'].to_numpy(dtype=np.int64)
    offsets = events['time_ps'].to_numpy(dtype=np.int64) - pulse * hom_config.period_ps
    # 1 ps 容差：事件时间已取整到 ps
    outside = (offsets < -1.0) | (offsets >= hom_config.period_ps + 1.0)
    if outside.any():
        raise PreconditionError(
            f"{int(outside.sum())} events lie outside their pulse period at rep rate "
            f"{hom_config.rep_rate_hz:g} Hz; the event stream was generated with a different rate")
    if pulse.max() >= hom_config.n_pulses:
        raise PreconditionError(
            f"event stream has pulse index {int(pulse.max())} but n_pulses is {hom_config.n_pulses}")


def _route(times, first_in_pulse, paired, hom_config: HomConfig, stream: RandomStream):
    """两个分束器 + 探测；返回两个输出探测器的时间标签"""
    rng = stream.generator()
    n = times.size

    arm = rng.integers(0, 2, size=n)
    output = rng.integers(0, 2, size=n)
    coalesce_u = rng.random(n)
    coalesce_port = rng.integers(0, 2, size=n)
    keep = rng.random(n) < hom_config.efficiency
    jitter = rng.standard_normal(n)

    # 对内第一个光子（XX）的索引；成对时第二个光子紧随其后
    leaders = np.flatnonzero(first_in_pulse & paired)
    followers = leaders + 1
    different_arms = arm[leaders] != arm[followers]
    coalesced = different_arms & (coalesce_u[leaders] < hom_config.effective_m)

    port = coalesce_port[leaders[coalesced]]
    output[leaders[coalesced]] = port
    output[followers[coalesced]] = port

    if hom_config.jitter_fwhm_ps > 0:
        sigma = hom_config.jitter_fwhm_ps / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        times = times + np.rint(jitter * sigma).astype(np.int64)

    d0 = np.sort(times[keep & (output == 0)])
    d1 = np.sort(times[keep & (output == 1)])
    return d0, d1, int(coalesced.sum())


def simulate_hom(events, hom_config: HomConfig, seed, bin_width_ps=None, k_range=10):
    """
    对称 MZ 干涉仪的 HOM 模拟

    每个光子在第一个分束器 50:50 选臂；来自不同臂、共偏振的光子对以概率 M 聚并
    （同一出口），否则各自 50:50；同臂到达的光子各自 50:50。
    两个输出探测器之间的符合计数给出共/交叉偏振直方图。

    Args:
        events: 脉冲事件流（simulate_pulsed 输出，取 H 通道）
        hom_config: HomConfig（其 polarization_config 被忽略，两种配置都模拟）
        seed: 随机种子
        bin_width_ps: 直方图 bin 宽度
        k_range: 直方图覆盖的旁峰数

    Returns:
        (histogram_co, histogram_cross)

    Raises:
        PreconditionError: 非脉冲事件流，或事件流与 rep_rate_hz / n_pulses 不一致
    """
    times, _, first_in_pulse, paired = _pair_table(events)
    _check_pulse_grid(events, hom_config)
    bin_width_ps = int(bin_width_ps or config.BIN_WIDTH_PS)
    window_ps = int(np.ceil((k_range + 0.5) * hom_config.period_ps))
    duration_s = hom_config.n_pulses / hom_config.rep_rate_hz
    stream = RandomStream(seed)

    histograms = {}
    for index, name in enumerate(POLARIZATION_CONFIGS):
        variant = replace(hom_config, polarization_config=name)
        d0, d1, coalesced = _route(times, first_in_pulse, paired, variant, stream.substream(index))
        histograms[name] = correlate(d0, d1, bin_width_ps, window_ps, acquisition_time_s=duration_s)
        log_event('HOM', config=name, M=variant.effective_m, photons=times.size,
                  pairs=int((first_in_pulse & paired).sum()), coalesced=coalesced, d0=d0.size, d1=d1.size)

    return histograms['co'], histograms['cross']


# ============================================
# 可见度
# ============================================
def visibility(g_par_0, g_perp_0):
    """
    两光子干涉可见度（因子 2 重新归一化）：V = 2(1 − g∥(0)/g⊥(0))

    V > 1 记 WARNING 但仍返回。
    """
    if g_perp_0 <= 0:
        raise InvalidParameterError(f"g_perp_0 must be > 0, got {g_perp_0}")
    v = 2.0 * (1.0 - g_par_0 / g_perp_0)
    if v > 1:
        log_event('HOM', level='WARNING', action='unphysical_visibility', V=v, g_par_0=g_par_0, g_perp_0=g_perp_0)
    return v


def hom_report(hist_co, hist_cross, rep_rate_hz, k_range=10):
    """
    可见度报告：g∥(0)、g⊥(0)（中心峰/平均旁峰）、V 及其泊松误差

    Returns:
        dict
    """
    a0_co, a_co, g_par = peak_areas(hist_co, rep_rate_hz, k_range)
    a0_cross, a_cross, g_perp = peak_areas(hist_cross, rep_rate_hz, k_range)
    n_side = 2 * k_range

    err_par = peak_area_error(a0_co, a_co, n_side)
    err_perp = peak_area_error(a0_cross, a_cross, n_side)

    v = visibility(g_par, g_perp)
    ratio = g_par / g_perp
    v_err = 2.0 * ratio * np.sqrt((err_par / g_par) ** 2 + (err_perp / g_perp) ** 2)

    report = {
        'g_par_0': g_par,
        'g_par_0_err': err_par,
        'g_perp_0': g_perp,
        'g_perp_0_err': err_perp,
        'ratio': ratio,
        'V': v,
        'V_err': v_err,
        'k_range': k_range,
        'rep_rate_hz': rep_rate_hz,
    }
    log_event('HOM', action='report', V=v, V_err=v_err, ratio=ratio)
    return report
