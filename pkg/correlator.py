"""
时间标签关联器
符合直方图、g² 归一化、脉冲峰面积比、IRF 卷积模型拟合（去卷积），以及 α 与孪生光子速率
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import config
from error_handler import (DivideByZeroError, InvalidParameterError, PreconditionError,
                           log_event)
from model_core import (G2Curve, InstrumentResponse, RateSet, composite_curve, convolve_irf,
                        zero_delay_value)
from numerics import FitProblem, central_difference_jacobian, least_squares

# 每批处理的起始标签数（控制成对展开的内存）
_CHUNK = 200000


# ============================================
# 数据类型
# ============================================
@dataclass
class CoincidenceHistogram:
    """
    符合直方图

    - bin_width_ps: bin 宽度（默认 4 ps）
    - window_ps: 半窗口，τ ∈ [−window, +window]
    - counts: 每个 bin 的计数（奇数个 bin，τ=0 居中）
    - rate_a_hz / rate_b_hz: 两路计数率
    - acquisition_time_s: 采集时长 T
    """
    bin_width_ps: int
    window_ps: int
    counts: np.ndarray
    rate_a_hz: Optional[float] = None
    rate_b_hz: Optional[float] = None
    acquisition_time_s: Optional[float] = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_ps <= 0:
            raise InvalidParameterError("bin width must be > 0")
        if self.counts.size % 2 != 1:
            raise InvalidParameterError(f"histogram must have an odd number of bins, got {self.counts.size}")
        if np.any(self.counts < 0):
            raise InvalidParameterError("histogram counts must be >= 0")

    @property
    def half_bins(self):
        return self.counts.size // 2

    @property
    def tau_ps(self):
        return (np.arange(self.counts.size, dtype=np.int64) - self.half_bins) * self.bin_width_ps

    def mirrored(self):
        """交换两路输入后的直方图"""
        return CoincidenceHistogram(self.bin_width_ps, self.window_ps, self.counts[::-1].copy(),
                                    self.rate_b_hz, self.rate_a_hz, self.acquisition_time_s)


@dataclass(frozen=True)
class TwinBudget:
    """
    孪生光子速率预算

    - alpha: 孪生比例 α
    - twin_detect_fraction: α/(2−α)（孪生事件被计了两次的重新归一化）
    - tpr_hz: 进入第一透镜的孪生光子速率
    """
    alpha: float
    twin_detect_fraction: float
    tpr_hz: float
    n_spcm_hz: float = 0.0
    eps_setup: float = 0.0
    eta_lens: float = 0.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise InvalidParameterError(f"alpha must lie in [0,1], got {self.alpha}")
        if not 0 <= self.twin_detect_fraction <= 1:
            raise InvalidParameterError("twin detect fraction must lie in [0,1]")

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'twin_detect_fraction': self.twin_detect_fraction,
            'single_fraction': 1.0 - self.twin_detect_fraction,
            'tpr_hz': self.tpr_hz,
            'n_spcm_hz': self.n_spcm_hz,
            'eps_setup': self.eps_setup,
            'eta_lens': self.eta_lens,
        }


@dataclass
class FitReport:
    """g² 拟合结果（区间为协方差 ±1σ，68%）"""
    kind: str
    weighting: str
    rates: RateSet
    g_fit_0: float
    g_fit_0_stderr: float
    residual_norm: float
    iterations: int
    stderr: dict = field(default_factory=dict)
    irf_fwhm_ps: float = 0.0

    def interval(self, name):
        if name == 'g_fit_0':
            return (self.g_fit_0 - self.g_fit_0_stderr, self.g_fit_0 + self.g_fit_0_stderr)
        value = getattr(self.rates, name)
        return (value - self.stderr[name], value + self.stderr[name])

    def to_dict(self):
        return {
            'kind': self.kind,
            'weighting': self.weighting,
            'irf_fwhm_ps': self.irf_fwhm_ps,
            'rates': self.rates.to_dict(),
            'g_fit_0': self.g_fit_0,
            'residual_norm': self.residual_norm,
            'iterations': self.iterations,
            'confidence_intervals': {
                'method': 'covariance_1sigma',
                'g_fit_0': list(self.interval('g_fit_0')),
                **{name: list(self.interval(name)) for name in ('gamma_b', 'gamma_x', 'p_b')},
            },
        }


# ============================================
# 直方图
# ============================================
def _check_sorted(tags, name):
    if tags.size > 1 and np.any(np.diff(tags) < 0):
        raise PreconditionError(f"time tags '{name}' must be sorted ascending")


def _bin_index(delays, bin_width_ps):
    """τ → bin 序号，半整数处远离 0 取整（保证交换两路时严格镜像）"""
    magnitude = (np.abs(delays) + bin_width_ps // 2) // bin_width_ps
    return np.sign(delays) * magnitude


def correlate(tags_a, tags_b, bin_width_ps=None, window_ps=20000, acquisition_time_s=None):
    """
    全关联符合直方图：所有满足 |t_b − t_a| ≤ window 的标签对都计入 τ = t_b − t_a

    Args:
        tags_a / tags_b: 升序 int64 时间标签（ps）
        bin_width_ps: bin 宽度（默认 config.BIN_WIDTH_PS）
        window_ps: 半窗口
        acquisition_time_s: 采集时长；None 时取两路标签覆盖的时间跨度

    Returns:
        CoincidenceHistogram

    Raises:
        PreconditionError: 标签未排序
    """
    bin_width_ps = int(bin_width_ps or config.BIN_WIDTH_PS)
    window_ps = int(window_ps)
    if window_ps < 0:
        raise InvalidParameterError("window must be >= 0")

    tags_a = np.asarray(tags_a, dtype=np.int64)
    tags_b = np.asarray(tags_b, dtype=np.int64)
    _check_sorted(tags_a, 'a')
    _check_sorted(tags_b, 'b')

    half = int(round(window_ps / bin_width_ps))
    counts = np.zeros(2 * half + 1, dtype=np.int64)

    for start in range(0, tags_a.size, _CHUNK):
        block = tags_a[start:start + _CHUNK]
        lo = np.searchsorted(tags_b, block - window_ps, side='left')
        hi = np.searchsorted(tags_b, block + window_ps, side='right')
        per_start = hi - lo
        total = int(per_start.sum())
        if total == 0:
            continue
        first = np.repeat(lo, per_start)
        offsets = np.arange(total) - np.repeat(np.cumsum(per_start) - per_start, per_start)
        delays = tags_b[first + offsets] - np.repeat(block, per_start)
        k = _bin_index(delays, bin_width_ps)
        k = k[np.abs(k) <= half]
        counts += np.bincount(k + half, minlength=counts.size)

    if acquisition_time_s is None:
        if tags_a.size or tags_b.size:
            first_tag = min(t[0] for t in (tags_a, tags_b) if t.size)
            last_tag = max(t[-1] for t in (tags_a, tags_b) if t.size)
            acquisition_time_s = (last_tag - first_tag + 1) * 1e-12
        else:
            acquisition_time_s = 0.0

    rate_a = tags_a.size / acquisition_time_s if acquisition_time_s > 0 else 0.0
    rate_b = tags_b.size / acquisition_time_s if acquisition_time_s > 0 else 0.0

    log_event('CORR', tags_a=tags_a.size, tags_b=tags_b.size, bins=counts.size,
              coincidences=int(counts.sum()), T_s=acquisition_time_s)
    return CoincidenceHistogram(bin_width_ps, window_ps, counts, rate_a, rate_b, acquisition_time_s)


def merge_histograms(histograms):
    """分片直方图求和（整数计数，顺序无关）"""
    histograms = list(histograms)
    if not histograms:
        raise InvalidParameterError("nothing to merge")
    head = histograms[0]
    for other in histograms[1:]:
        if other.bin_width_ps != head.bin_width_ps or other.counts.size != head.counts.size:
            raise InvalidParameterError("histograms must share bin width and window")
    counts = np.sum([h.counts for h in histograms], axis=0)
    total_time = sum(h.acquisition_time_s or 0.0 for h in histograms)
    rate_a = sum((h.rate_a_hz or 0.0) * (h.acquisition_time_s or 0.0) for h in histograms) / total_time if total_time else 0.0
    rate_b = sum((h.rate_b_hz or 0.0) * (h.acquisition_time_s or 0.0) for h in histograms) / total_time if total_time else 0.0
    return CoincidenceHistogram(head.bin_width_ps, head.window_ps, counts, rate_a, rate_b, total_time)


def normalize_cw(hist: CoincidenceHistogram, kind='cross'):
    """
    CW 直方图 → g²：g²(τ_k) = counts_k / (r_a · r_b · T · Δτ)

    Raises:
        DivideByZeroError: 计数率或采集时长为零
    """
    rate_a, rate_b, duration = hist.rate_a_hz, hist.rate_b_hz, hist.acquisition_time_s
    if not rate_a or not rate_b or not duration:
        raise DivideByZeroError(f"normalization needs positive rates and time (r_a={rate_a}, r_b={rate_b}, T={duration})")

    expected = rate_a * rate_b * duration * hist.bin_width_ps * 1e-12
    values = hist.counts / expected
    return G2Curve(tau_grid=hist.tau_ps.astype(float), values=values, kind=kind, counts=hist.counts.copy())


# ============================================
# 脉冲峰面积
# ============================================
def peak_areas(hist: CoincidenceHistogram, rep_rate_hz, k_range=10, integration_window_ps=None):
    """
    脉冲关联直方图的峰面积

    在 k·τ_rep 处积分一个窗口（默认一个周期）内的计数，
    A0 为 k=0，A_mean 为 1 ≤ |k| ≤ k_range 的平均。

    Returns:
        (A0, A_mean, ratio)

    Raises:
        InvalidParameterError: 积分窗口大于重复周期，或直方图窗口不足 k_range 个周期
        DivideByZeroError: 旁峰面积为零
    """
    if rep_rate_hz <= 0 or k_range < 1:
        raise InvalidParameterError("rep rate must be > 0 and k_range >= 1")
    period_ps = 1e12 / rep_rate_hz
    window = period_ps if integration_window_ps is None else float(integration_window_ps)
    if window > period_ps:
        raise InvalidParameterError(f"integration window {window:g} ps overlaps neighbours (period {period_ps:g} ps)")
    if hist.window_ps < k_range * period_ps + window / 2 - hist.bin_width_ps:
        raise InvalidParameterError(f"histogram window {hist.window_ps} ps does not cover {k_range} periods")

    tau = hist.tau_ps.astype(float)

    def area(k):
        offset = tau - k * period_ps
        return int(hist.counts[(offset >= -window / 2) & (offset < window / 2)].sum())

    a0 = area(0)
    side = [area(k) for k in range(-k_range, k_range + 1) if k != 0]
    a_mean = float(np.mean(side))
    if a_mean == 0:
        raise DivideByZeroError("side peaks are empty")

    ratio = a0 / a_mean
    log_event('CORR', action='peak_areas', A0=a0, A_mean=a_mean, ratio=ratio, k_range=k_range)
    return float(a0), a_mean, ratio


def peak_area_error(a0, a_mean, n_side_peaks):
    """泊松误差传播：σ(A0/A) = (A0/A)·√(1/A0 + 1/(n·A))"""
    if a0 <= 0 or a_mean <= 0 or n_side_peaks < 1:
        raise InvalidParameterError("areas must be > 0 and at least one side peak")
    ratio = a0 / a_mean
    return ratio * np.sqrt(1.0 / a0 + 1.0 / (a_mean * n_side_peaks))


# ============================================
# 拟合
# ============================================
def _poisson_weights(curve: G2Curve):
    """权重 1/σ，σ = √max(counts,1) 乘以 counts→g² 的比例"""
    if curve.counts is None:
        return None
    counts = np.asarray(curve.counts, dtype=float)
    if counts.sum() == 0:
        return None
    scale = curve.values.sum() / counts.sum()
    return 1.0 / (scale * np.sqrt(np.maximum(counts, 1.0)))


def fit_g2(curve: G2Curve, kind, irf: InstrumentResponse, init: RateSet, weighting='equal'):
    """
    把 IRF 卷积后的复合模型拟合到测得的 g² 曲线（前向卷积去卷积）

    自由参数为 (P, Γ_B, Γ_X)，p_X = p_B = P；τ→∞ 背景固定为 1。
    g_fit_0 为未卷积模型在 τ=0 的值。

    Args:
        curve: 已归一化的 G2Curve（均匀网格）
        kind: 'auto' 或 'cross'
        irf: InstrumentResponse
        init: 初始速率
        weighting: 自关联权重（'equal' / 'flux'）

    Returns:
        FitReport

    Raises:
        FitFailure: 未收敛
        ResolutionError: 网格非均匀或过粗
    """
    if kind not in ('auto', 'auto-composite', 'cross'):
        raise InvalidParameterError(f"fit kind must be 'auto' or 'cross', got '{kind}'")
    if not curve.is_uniform():
        raise PreconditionError("fit_g2 needs a uniform tau grid")

    tau = curve.tau_grid
    data = curve.values

    def model(params):
        pump, gamma_b, gamma_x = params
        rates = RateSet.equal_pumps(gamma_b, gamma_x, pump)
        return convolve_irf(composite_curve(kind, rates, tau, weighting=weighting), irf).values

    problem = FitProblem(
        residual=lambda params: model(params) - data,
        initial=[init.p_b, init.gamma_b, init.gamma_x],
        lower=[1e-6, 1e-6, 1e-6],
        upper=[1e3, 1e3, 1e3],
        weights=_poisson_weights(curve),
        max_iterations=config.FIT_MAX_ITERATIONS,
    )
    result = least_squares(problem)

    pump, gamma_b, gamma_x = result.params
    rates = RateSet.equal_pumps(gamma_b, gamma_x, pump)

    def g0(params):
        return np.array([zero_delay_value(kind, RateSet.equal_pumps(params[1], params[2], params[0]), weighting)])

    gradient = central_difference_jacobian(g0, result.params)[0]
    g0_stderr = float(np.sqrt(max(gradient @ result.covariance @ gradient, 0.0)))
    stderr = dict(zip(('p_b', 'gamma_b', 'gamma_x'), result.stderr))

    report = FitReport(
        kind='cross' if kind == 'cross' else 'auto',
        weighting=weighting,
        rates=rates,
        g_fit_0=float(g0(result.params)[0]),
        g_fit_0_stderr=g0_stderr,
        residual_norm=result.residual_norm,
        iterations=result.iterations,
        stderr=stderr,
        irf_fwhm_ps=irf.fwhm_ps,
    )
    log_event('FIT', kind=report.kind, g_fit_0=report.g_fit_0, stderr=g0_stderr,
              P=pump, gamma_b=gamma_b, gamma_x=gamma_x, iterations=result.iterations)
    if report.kind == 'auto' and weighting == 'equal':
        _warn_equal_weighting(result, pump, gamma_x)
    return report


def _warn_equal_weighting(result, pump, gamma_x):
    """等权自关联模型只在 p_B = Γ_X 时描述单偏振探测；偏离超过 1σ 时记 WARNING"""
    cov = result.covariance
    # 参数顺序 (P, Γ_B, Γ_X)
    difference_stderr = float(np.sqrt(max(cov[0, 0] + cov[2, 2] - 2 * cov[0, 2], 0.0)))
    difference = pump - gamma_x
    if abs(difference) > difference_stderr:
        log_event('FIT', level='WARNING', action='equal_weighting_mismatch', p_b=pump, gamma_x=gamma_x,
                  difference=difference, stderr=difference_stderr, hint='use weighting=flux')


# ============================================
# α 与孪生光子速率
# ============================================
def alpha_ratio(g_auto_0, g_cross_0):
    """α = g²_auto(0) / g²_cross(0)"""
    if g_auto_0 <= 0 or g_cross_0 <= 0:
        raise InvalidParameterError(f"g2 values must be > 0, got ({g_auto_0}, {g_cross_0})")
    return g_auto_0 / g_cross_0


def twin_rate_cw(n_spcm_hz, eps_setup, eta_lens, alpha):
    """
    CW 孪生光子速率：TPR = n_SPCM/(ε·η) · α/(2−α) · η²

    Args:
        n_spcm_hz: 单光子探测器计数率
        eps_setup: 装置效率 ε
        eta_lens: 第一透镜收集效率 η
        alpha: 孪生比例

    Returns:
        TwinBudget
    """
    if n_spcm_hz <= 0:
        raise InvalidParameterError("n_spcm must be > 0")
    for name, value in (('eps_setup', eps_setup), ('eta_lens', eta_lens), ('alpha', alpha)):
        if not 0 < value <= 1:
            raise InvalidParameterError(f"{name} must lie in (0,1], got {value}")

    fraction = alpha / (2.0 - alpha)
    tpr = n_spcm_hz / (eps_setup * eta_lens) * fraction * eta_lens ** 2
    return TwinBudget(alpha=alpha, twin_detect_fraction=fraction, tpr_hz=tpr,
                      n_spcm_hz=n_spcm_hz, eps_setup=eps_setup, eta_lens=eta_lens)


def twin_rate_pulsed(rep_rate_hz, p_twin, eta_lens):
    """脉冲孪生光子速率：TPR = f · p_twin · η²"""
    if rep_rate_hz <= 0:
        raise InvalidParameterError("rep rate must be > 0")
    if not 0 <= p_twin <= 1 or not 0 <= eta_lens <= 1:
        raise InvalidParameterError("p_twin and eta must lie in [0,1]")
    return rep_rate_hz * p_twin * eta_lens ** 2
