"""
光子数分辨（TES）分析
二项损耗、脉冲面积模拟与分类、本底扣除、源端光子数分布重建（Poisson bootstrap 区间）
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

import config
from correlator import twin_rate_pulsed
from error_handler import (InfeasibleDataError, InsufficientDataError, InvalidParameterError,
                           log_event)
from numerics import RandomStream

PLANES = ('source', 'detector')
TRIGGER_MODES = ('photon-triggered', 'laser-sync')
MAX_PHOTONS = 3


# ============================================
# 数据类型
# ============================================
@dataclass
class PhotonNumberDist:
    """
    光子数分布 p_n（n = 0..3）

    - probabilities: p_n
    - plane: 'source'（源端）或 'detector'（探测端）
    - lower / upper: 每个 n 的不确定度区间（可选）
    """
    probabilities: Sequence[float]
    plane: str = 'source'
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    method: str = ''

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.plane not in PLANES:
            raise InvalidParameterError(f"unknown plane '{self.plane}'")
        if self.probabilities.ndim != 1 or not 1 <= self.probabilities.size <= MAX_PHOTONS + 1:
            raise InvalidParameterError("photon number support must be 0..3")
        if np.any(self.probabilities < -1e-12) or np.any(self.probabilities > 1 + 1e-12):
            raise InvalidParameterError(f"probabilities must lie in [0,1], got {self.probabilities}")
        if abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"probabilities must sum to 1, got {self.probabilities.sum():.12g}")

    def p(self, n):
        return float(self.probabilities[n]) if n < self.probabilities.size else 0.0

    def padded(self, size=MAX_PHOTONS + 1):
        values = np.zeros(size)
        values[:self.probabilities.size] = self.probabilities
        return values

    def to_dict(self):
        result = {
            'plane': self.plane,
            'p': [float(v) for v in self.probabilities],
            'method': self.method,
        }
        if self.lower is not None:
            result['intervals'] = [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)]
        return result


@dataclass(frozen=True)
class TesModel:
    """
    TES 脉冲面积模型

    - unit_area: 单光子平均脉冲面积
    - sigma: 每个光子数峰的高斯宽度（标量或逐 n 列表）
    - thresholds: 分类边界（默认相邻峰均值的中点）
    """
    unit_area: float = 1.0
    sigma: object = 0.1
    thresholds: Optional[tuple] = None

    def __post_init__(self):
        if not self.unit_area > 0:
            raise InvalidParameterError("unit area must be > 0")
        if np.any(self.sigma_per_n < 0):
            raise InvalidParameterError("peak widths must be >= 0")
        means = self.means
        edges = self.boundaries
        if edges.size != MAX_PHOTONS or np.any(np.diff(edges) <= 0):
            raise InvalidParameterError("thresholds must be strictly increasing, one per adjacent peak pair")
        if np.any(edges <= means[:-1]) or np.any(edges >= means[1:]):
            raise InvalidParameterError("each threshold must lie strictly between adjacent peak means")

    @property
    def means(self):
        return np.arange(MAX_PHOTONS + 1) * self.unit_area

    @property
    def sigma_per_n(self):
        return np.broadcast_to(np.asarray(self.sigma, dtype=float), (MAX_PHOTONS + 1,)).copy()

    @property
    def boundaries(self):
        if self.thresholds is None:
            return (np.arange(MAX_PHOTONS) + 0.5) * self.unit_area
        return np.asarray(self.thresholds, dtype=float)


@dataclass
class CountRecord:
    """
    按探测光子数分类的计数

    - counts: c_n（n = 0..3；本底扣除后可为小数）
    - acquisition_time_s: 采集时长
    - trigger_mode: 'photon-triggered' / 'laser-sync'
    - background_per_hour: 每个 n 的本底率（counts/h）
    - clamped: 本底扣除时被钳位到 0 的 n
    """
    counts: Sequence[float]
    acquisition_time_s: float = 0.0
    trigger_mode: str = 'laser-sync'
    background_per_hour: Optional[Sequence[float]] = None
    clamped: list = field(default_factory=list)
    background_subtracted: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if np.any(self.counts < 0):
            raise InvalidParameterError("counts must be >= 0")
        if self.trigger_mode not in TRIGGER_MODES:
            raise InvalidParameterError(f"unknown trigger mode '{self.trigger_mode}'")

    def count(self, n):
        return float(self.counts[n]) if n < self.counts.size else 0.0

    def to_dict(self):
        return {
            'counts': [float(c) for c in self.counts],
            'acquisition_time_s': self.acquisition_time_s,
            'trigger_mode': self.trigger_mode,
            'background_per_hour': None if self.background_per_hour is None else [float(b) for b in self.background_per_hour],
            'background_subtracted': self.background_subtracted,
            'clamped': list(self.clamped),
        }


# ============================================
# 二项损耗
# ============================================
def _check_success(s, closed_upper=True):
    upper_ok = s <= 1 if closed_upper else s < 1
    if not (s > 0 and upper_ok):
        raise InvalidParameterError(f"success probability s must lie in (0,1{']' if closed_upper else ')'}, got {s}")


def thin_binomial(source: PhotonNumberDist, s):
    """
    二项稀释：q_k = Σ_{n≥k} p_n·C(n,k)·s^k·(1−s)^{n−k}

    Returns:
        探测端 PhotonNumberDist
    """
    _check_success(s)
    p = source.probabilities
    n = np.arange(p.size)
    # pmf[k, n] = P(k | n)
    pmf = stats.binom.pmf(n[:, None], n[None, :], s)
    q = pmf @ p
    q = q / q.sum()
    return PhotonNumberDist(q, plane='detector', method='binomial_thinning')


def _solve(r21, r10, s):
    """两个比值方程 + 归一化的线性解（支持数组输入）；返回 (p0, p1, p2) 及可行性"""
    r21 = np.asarray(r21, dtype=float)
    r10 = np.asarray(r10, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        c2 = r21 / s
        c1 = 1.0 - 2.0 * (1.0 - s) * c2
        c0 = s / r10 - c1 * (1.0 - s) - c2 * (1.0 - s) ** 2
        total = c0 + c1 + c2
        p = np.stack([c0, c1, c2]) / total
    feasible = np.all(np.isfinite(p), axis=0) & np.all(p >= -1e-12, axis=0) & np.all(p <= 1 + 1e-12, axis=0) & (total > 0)
    return p, feasible


def ratios_from_records(photon_triggered: Optional[CountRecord] = None, laser_sync: Optional[CountRecord] = None):
    """
    从两次测量取比值："2/1" 取自光子触发记录，"1/0" 取自激光同步记录
    （缺一时用另一条记录补齐，需含对应类别）

    Returns:
        (r21, r10)
    """
    source_21 = photon_triggered if photon_triggered is not None else laser_sync
    source_10 = laser_sync if laser_sync is not None else photon_triggered
    if source_21 is None:
        raise InsufficientDataError("at least one count record is required")
    if source_21.count(1) <= 0 or source_10.count(0) <= 0:
        raise InsufficientDataError("ratios need non-zero '1' and '0' classes")
    return source_21.count(2) / source_21.count(1), source_10.count(1) / source_10.count(0)


def reconstruct(data, s, support_max=2, n_resamples=None, seed=None):
    """
    反演二项损耗，重建源端光子数分布（支撑 {0,1,2}）

    解 q₂/q₁ = s·p₂/(p₁ + 2p₂(1−s))，q₁/q₀ = s(p₁+2p₂(1−s))/(p₀+p₁(1−s)+p₂(1−s)²)，Σp = 1。
    输入为 CountRecord 时附带 Poisson bootstrap 的 16/84 分位区间。

    Args:
        data: (r21, r10) 比值对，或 CountRecord，或 (photon_triggered, laser_sync) 两条记录
        s: 端到端成功概率 ε_PNR·η
        support_max: 只支持 2
        n_resamples: bootstrap 次数（默认 config.BOOTSTRAP_RESAMPLES）
        seed: bootstrap 随机种子

    Returns:
        源端 PhotonNumberDist

    Raises:
        InfeasibleDataError: 不存在所有 p_n ∈ [0,1] 的解
    """
    _check_success(s, closed_upper=False)
    if support_max != 2:
        raise InvalidParameterError("reconstruction support is truncated at n = 2")

    records = None
    if isinstance(data, CountRecord):
        records = (data, data)
        r21, r10 = ratios_from_records(data, data)
    elif isinstance(data, tuple) and len(data) == 2 and all(isinstance(d, (CountRecord, type(None))) for d in data):
        records = (data[0] or data[1], data[1] or data[0])
        r21, r10 = ratios_from_records(*data)
    else:
        r21, r10 = data

    if r21 < 0 or r10 <= 0:
        raise InvalidParameterError(f"ratios must be positive, got r21={r21}, r10={r10}")

    p, feasible = _solve(r21, r10, s)
    if not feasible:
        raise InfeasibleDataError(f"no distribution with p_n in [0,1] matches r21={r21:.6g}, r10={r10:.6g}, s={s:.6g}")
    p = np.clip(p, 0.0, 1.0)
    p = p / p.sum()

    lower = upper = None
    method = 'ratio_inversion'
    if records is not None:
        lower, upper = _bootstrap(records, s, n_resamples or config.BOOTSTRAP_RESAMPLES,
                                  config.DEFAULT_SEED if seed is None else seed)
        method = 'ratio_inversion+poisson_bootstrap_16_84'

    log_event('PNR', action='reconstruct', r21=float(r21), r10=float(r10), s=s,
              p0=float(p[0]), p1=float(p[1]), p2=float(p[2]))
    return PhotonNumberDist(p, plane='source', lower=lower, upper=upper, method=method)


def _bootstrap(records, s, n_resamples, seed):
    """对原始计数做 Poisson 重采样，向量化求解，返回 16/84 分位"""
    photon_triggered, laser_sync = records
    rng = RandomStream(seed).substream(0).generator()

    c1_pt = rng.poisson(photon_triggered.count(1), size=n_resamples)
    c2_pt = rng.poisson(photon_triggered.count(2), size=n_resamples)
    if photon_triggered is laser_sync:
        c0_ls = rng.poisson(laser_sync.count(0), size=n_resamples)
        c1_ls = c1_pt
    else:
        c0_ls = rng.poisson(laser_sync.count(0), size=n_resamples)
        c1_ls = rng.poisson(laser_sync.count(1), size=n_resamples)

    with np.errstate(divide='ignore', invalid='ignore'):
        r21 = c2_pt / c1_pt
        r10 = c1_ls / c0_ls
    p, feasible = _solve(r21, r10, s)

    skipped = int((~feasible).sum())
    if skipped:
        log_event('PNR', level='WARNING', action='bootstrap_skipped', skipped=skipped, resamples=n_resamples)
    if feasible.sum() < 2:
        raise InsufficientDataError("too few feasible bootstrap resamples")

    samples = p[:, feasible]
    lower = np.percentile(samples, 16, axis=1)
    upper = np.percentile(samples, 84, axis=1)
    return lower, upper


# ============================================
# TES 模拟与分类
# ============================================
def simulate_tes(detector_dist: PhotonNumberDist, model: TesModel, n_triggers, seed):
    """
    每次触发按 q 抽光子数 k，面积 ~ Normal(k·unit_area, σ_k)

    Returns:
        np.ndarray: 脉冲面积样本
    """
    if n_triggers < 0:
        raise InvalidParameterError("n_triggers must be >= 0")
    q = detector_dist.padded()
    rng = RandomStream(seed).generator()
    k = rng.choice(q.size, size=n_triggers, p=q / q.sum())
    noise = rng.standard_normal(n_triggers)
    areas = model.means[k] + model.sigma_per_n[k] * noise
    log_event('PNR', action='simulate_tes', triggers=n_triggers, seed=seed)
    return areas


def classify(samples, model: TesModel, acquisition_time_s=0.0, trigger_mode='laser-sync'):
    """按阈值区间计数（恰在峰均值处的样本计入本类）"""
    samples = np.asarray(samples, dtype=float)
    classes = np.searchsorted(model.boundaries, samples, side='right')
    counts = np.bincount(classes, minlength=MAX_PHOTONS + 1)
    return CountRecord(counts=counts, acquisition_time_s=acquisition_time_s, trigger_mode=trigger_mode)


def background_subtract(record: CountRecord):
    """
    c_n' = max(0, c_n − rate_n·T)，被钳位的 n 记录在 clamped 中并记 WARNING

    Raises:
        InsufficientDataError: 缺少本底率或采集时长
    """
    if record.background_per_hour is None or record.acquisition_time_s <= 0:
        raise InsufficientDataError("background subtraction needs background rates and acquisition time")

    hours = record.acquisition_time_s / 3600.0
    background = np.zeros(record.counts.size)
    rates = np.asarray(record.background_per_hour, dtype=float)
    background[:min(rates.size, background.size)] = rates[:background.size]

    raw = record.counts - background * hours
    clamped = [int(n) for n in np.flatnonzero(raw < 0)]
    if clamped:
        log_event('PNR', level='WARNING', action='background_clamped', classes=clamped)

    log_event('PNR', action='background_subtract', hours=hours, removed=float((background * hours).sum()))
    return CountRecord(
        counts=np.maximum(raw, 0.0),
        acquisition_time_s=record.acquisition_time_s,
        trigger_mode=record.trigger_mode,
        background_per_hour=record.background_per_hour,
        clamped=clamped,
        background_subtracted=True,
    )


def pulsed_twin_rate_from_distribution(dist: PhotonNumberDist, rep_rate_hz, eta_lens):
    """以重建的 p₂ 作为 p_twin 计算脉冲孪生光子速率"""
    return twin_rate_pulsed(rep_rate_hz, dist.p(2), eta_lens)
