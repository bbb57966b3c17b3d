"""
蒙特卡罗量子跳跃轨迹
CW 与脉冲激发下的带标签发射事件，以及探测链（滤波、效率稀释、分束、抖动、死时间、暗计数）

事件流与时间标签流在内存中都以整数 ps 表示。
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from error_handler import InvalidParameterError, log_event
from model_core import PS_PER_NS, RateSet, steady_state
from numerics import RandomStream

SPECIES = ('X', 'XX')
POLARIZATIONS = ('H', 'V')
EVENT_COLUMNS = ['time_ps', 'species', 'polarization', 'pulse_index']

# 随机数批量大小
_BATCH = 65536

G, H, V, B = range(4)

# 每个态的两个出口：(目标态, 发射的 species 编码 或 -1, 偏振编码)
# species: 0 = X, 1 = XX；pol: 0 = H, 1 = V
_EXITS = {
    G: ((H, -1, 0), (V, -1, 1)),
    H: ((B, -1, 0), (G, 0, 0)),
    V: ((B, -1, 1), (G, 0, 1)),
    B: ((H, 1, 0), (V, 1, 1)),
}


# ============================================
# 数据类型
# ============================================
@dataclass(frozen=True)
class EmissionEvent:
    """单个发射事件（pulse_index 为 None 表示 CW）"""
    time_ps: int
    species: str
    polarization: str
    pulse_index: Optional[int] = None

    def __post_init__(self):
        if self.species not in SPECIES:
            raise InvalidParameterError(f"unknown species '{self.species}'")
        if self.polarization not in POLARIZATIONS:
            raise InvalidParameterError(f"unknown polarization '{self.polarization}'")


@dataclass(frozen=True)
class DecayRates:
    """只含衰减的速率（脉冲模拟用，单位 1/ns）"""
    gamma_b: float
    gamma_x: float

    def __post_init__(self):
        if not (self.gamma_b > 0 and self.gamma_x > 0):
            raise InvalidParameterError("decay rates must be positive")

    @classmethod
    def from_lifetimes(cls, tau_xx_ns, tau_x_ns):
        """τ_XX = 1/(2γ_B)，τ_X = 1/γ_X"""
        if tau_xx_ns <= 0 or tau_x_ns <= 0:
            raise InvalidParameterError("lifetimes must be positive")
        return cls(gamma_b=1.0 / (2.0 * tau_xx_ns), gamma_x=1.0 / tau_x_ns)


def lifetimes_to_decay_rates(tau_xx_ns, tau_x_ns):
    """τ_XX, τ_X (ns) → DecayRates"""
    return DecayRates.from_lifetimes(tau_xx_ns, tau_x_ns)


@dataclass(frozen=True)
class PulsePrep:
    """
    脉冲后的制备概率

    - repetition_rate_hz: 激发重复频率 f
    - prob_b / prob_h / prob_v: 脉冲后处于 B / H / V 的概率（其余留在 G）
    """
    repetition_rate_hz: float
    prob_b: float = 1.0
    prob_h: float = 0.0
    prob_v: float = 0.0

    def __post_init__(self):
        if not self.repetition_rate_hz > 0:
            raise InvalidParameterError("repetition rate must be > 0")
        probabilities = (self.prob_b, self.prob_h, self.prob_v)
        if any(p < 0 or p > 1 for p in probabilities):
            raise InvalidParameterError(f"preparation probabilities must lie in [0,1], got {probabilities}")
        if sum(probabilities) > 1 + 1e-12:
            raise InvalidParameterError(f"preparation probabilities sum to {sum(probabilities):.6g} > 1")

    @property
    def period_ps(self):
        return 1e12 / self.repetition_rate_hz


@dataclass(frozen=True)
class DetectionConfig:
    """
    探测链配置

    - polarization_filter: 'H' / 'V' / 'none'
    - species_filter: 'X' / 'XX' / 'none'
    - efficiency: 总效率 ε·η ∈ [0,1]
    - jitter_fwhm_ps: 探测器高斯抖动
    - splitter: 'none' / '50:50'（HBT 分束器）
    - dark_rate_hz: 每个探测器的泊松暗计数率
    - dead_time_ps: 每个探测器的死时间
    """
    polarization_filter: str = 'none'
    species_filter: str = 'none'
    efficiency: float = 1.0
    jitter_fwhm_ps: float = 0.0
    splitter: str = 'none'
    dark_rate_hz: float = 0.0
    dead_time_ps: float = 0.0

    def __post_init__(self):
        if self.polarization_filter not in ('H', 'V', 'none'):
            raise InvalidParameterError(f"unknown polarization filter '{self.polarization_filter}'")
        if self.species_filter not in ('X', 'XX', 'none'):
            raise InvalidParameterError(f"unknown species filter '{self.species_filter}'")
        if not 0 <= self.efficiency <= 1:
            raise InvalidParameterError(f"efficiency must lie in [0,1], got {self.efficiency}")
        if self.splitter not in ('none', '50:50'):
            raise InvalidParameterError(f"unknown splitter '{self.splitter}'")
        if self.jitter_fwhm_ps < 0 or self.dark_rate_hz < 0 or self.dead_time_ps < 0:
            raise InvalidParameterError("jitter, dark rate and dead time must be >= 0")


@dataclass
class Trajectory:
    """跳跃轨迹：各段所处态、进入时间与驻留时间（ns）"""
    states: np.ndarray
    entry_ns: np.ndarray
    dwell_ns: np.ndarray

    def occupancy(self):
        """各态的时间占比（G, H, V, B）"""
        total = self.dwell_ns.sum()
        return np.array([self.dwell_ns[self.states == s].sum() / total for s in range(4)])


# ============================================
# 事件流工具
# ============================================
def empty_events():
    return events_frame(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int8))


def events_frame(times_ps, species_codes, pol_codes, pulse_index=None):
    """由编码数组构造事件 DataFrame（按时间稳定排序）"""
    order = np.argsort(times_ps, kind='stable')
    frame = pd.DataFrame({
        'time_ps': np.asarray(times_ps, dtype=np.int64)[order],
        'species': pd.Categorical.from_codes(np.asarray(species_codes)[order], categories=list(SPECIES)),
        'polarization': pd.Categorical.from_codes(np.asarray(pol_codes)[order], categories=list(POLARIZATIONS)),
        'pulse_index': pd.array(
            np.asarray(pulse_index)[order] if pulse_index is not None else [pd.NA] * len(order),
            dtype='Int64'),
    })
    return frame


def event_rates(events, duration_ps):
    """各 (species, polarization) 的发射率，单位 1/ns"""
    duration_ns = duration_ps / PS_PER_NS
    counts = events.groupby(['species', 'polarization'], observed=False).size()
    return {f"{sp}_{pol}": counts.get((sp, pol), 0) / duration_ns for sp in SPECIES for pol in POLARIZATIONS}


# ============================================
# CW 轨迹
# ============================================
def _run_chain(rate_table, state, t_start, t_end, rng, record_path=False):
    """
    Gillespie 主循环

    rate_table[state] = (总出射速率, 第一个出口的概率)。
    返回发射 (时间 ns, species, pol) 列表以及可选的跳跃路径。
    """
    times, species, pols = [], [], []
    path_states, path_entry, path_dwell = [], [], []

    t = t_start
    exponentials = rng.standard_exponential(_BATCH)
    uniforms = rng.random(_BATCH)
    cursor = 0

    while True:
        if cursor == _BATCH:
            exponentials = rng.standard_exponential(_BATCH)
            uniforms = rng.random(_BATCH)
            cursor = 0

        total_rate, first_probability = rate_table[state]
        dwell = exponentials[cursor] / total_rate
        choice = 0 if uniforms[cursor] < first_probability else 1
        cursor += 1

        if record_path:
            path_states.append(state)
            path_entry.append(t)
            path_dwell.append(min(dwell, t_end - t))

        t += dwell
        if t >= t_end:
            break

        target, sp, pol = _EXITS[state][choice]
        if sp >= 0 and t >= 0:
            times.append(t)
            species.append(sp)
            pols.append(pol)
        state = target

    path = (path_states, path_entry, path_dwell) if record_path else None
    return times, species, pols, path


def _rate_table(gamma_b, gamma_x, p_b, p_x):
    """每个态的 (总出射速率, 第一个出口概率)；第一个出口顺序见 _EXITS"""
    return {
        G: (2 * p_x, 0.5),
        H: (p_b + gamma_x, p_b / (p_b + gamma_x)),
        V: (p_b + gamma_x, p_b / (p_b + gamma_x)),
        B: (2 * gamma_b, 0.5),
    }


def _initial_state(rates, rng):
    probabilities = steady_state(rates).as_vector()
    return int(rng.choice(4, p=probabilities / probabilities.sum()))


def _simulate_shard(rates, start_ns, length_ns, warmup_ns, stream):
    """单个时间段：从稳态抽初态，丢弃 warmup 后记录 [0, length)"""
    rng = stream.generator()
    table = _rate_table(rates.gamma_b, rates.gamma_x, rates.p_b, rates.p_x)
    state = _initial_state(rates, rng)
    times, species, pols, _ = _run_chain(table, state, -warmup_ns, length_ns, rng)
    times_ps = np.rint((np.asarray(times, dtype=float) + start_ns) * PS_PER_NS).astype(np.int64)
    return times_ps, np.asarray(species, dtype=np.int8), np.asarray(pols, dtype=np.int8)


def simulate_trajectory(rates: RateSet, duration_ns, seed):
    """
    记录完整跳跃路径（驻留时间/占据率诊断用）

    Returns:
        (Trajectory, 事件 DataFrame)
    """
    rng = RandomStream(seed).generator()
    table = _rate_table(rates.gamma_b, rates.gamma_x, rates.p_b, rates.p_x)
    state = _initial_state(rates, rng)
    times, species, pols, path = _run_chain(table, state, 0.0, duration_ns, rng, record_path=True)

    trajectory = Trajectory(
        states=np.asarray(path[0], dtype=np.int8),
        entry_ns=np.asarray(path[1], dtype=float),
        dwell_ns=np.asarray(path[2], dtype=float),
    )
    times_ps = np.rint(np.asarray(times, dtype=float) * PS_PER_NS).astype(np.int64)
    return trajectory, events_frame(times_ps, np.asarray(species, dtype=np.int8), np.asarray(pols, dtype=np.int8))


def simulate_cw(rates: RateSet, duration_ps, seed, shards=1, threads=1):
    """
    CW 激发下的连续时间马尔可夫跳跃过程

    时长被切成 shards 段，每段使用派生随机流并丢弃一个弛豫时间（1/最小速率）的预热；
    结果只取决于 (rates, duration, seed, shards)，与 threads 无关。

    Args:
        rates: RateSet
        duration_ps: 模拟时长（ps）
        seed: 随机种子
        shards: 分段数
        threads: 最大并行进程数

    Returns:
        pd.DataFrame: time_ps, species, polarization, pulse_index
    """
    if duration_ps <= 0:
        return empty_events()
    if shards < 1:
        raise InvalidParameterError("shards must be >= 1")

    duration_ns = duration_ps / PS_PER_NS
    length_ns = duration_ns / shards
    warmup_ns = 1.0 / rates.min_rate
    base = RandomStream(seed)

    jobs = [(rates, k * length_ns, length_ns, warmup_ns, base.shard(k)) for k in range(shards)]
    log_event('MC', action='simulate_cw', duration_ns=duration_ns, shards=shards, threads=threads, seed=seed)

    if threads > 1 and shards > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_simulate_shard, *zip(*jobs)))
    else:
        parts = [_simulate_shard(*job) for job in jobs]

    times = np.concatenate([p[0] for p in parts])
    species = np.concatenate([p[1] for p in parts])
    pols = np.concatenate([p[2] for p in parts])

    keep = times < int(round(duration_ps))
    events = events_frame(times[keep], species[keep], pols[keep])
    log_event('MC', action='simulate_cw_done', events=len(events))
    return events


# ============================================
# 脉冲激发
# ============================================
def simulate_pulsed(prep: PulsePrep, rates, n_pulses, seed):
    """
    脉冲激发：每个脉冲按 PulsePrep 重新制备（覆盖当前态），之后仅有衰减

    级联脉冲先发 XX 再发同偏振的 X；下一个脉冲到来时未衰减的布居被覆盖。

    Args:
        prep: PulsePrep
        rates: RateSet 或 DecayRates（只用 gamma_b, gamma_x）
        n_pulses: 脉冲数
        seed: 随机种子

    Returns:
        pd.DataFrame: time_ps, species, polarization, pulse_index
    """
    if n_pulses < 0:
        raise InvalidParameterError("n_pulses must be >= 0")
    if n_pulses == 0:
        return empty_events()

    rng = RandomStream(seed).generator()
    period_ns = prep.period_ps / PS_PER_NS

    # 每个脉冲固定抽取同样数量的随机数，保证可复现
    u_state = rng.random(n_pulses)
    t_first = rng.standard_exponential(n_pulses)
    u_pol = rng.random(n_pulses)
    t_second = rng.standard_exponential(n_pulses)

    in_b = u_state < prep.prob_b
    in_h = (u_state >= prep.prob_b) & (u_state < prep.prob_b + prep.prob_h)
    in_v = (u_state >= prep.prob_b + prep.prob_h) & (u_state < prep.prob_b + prep.prob_h + prep.prob_v)

    pulses = np.arange(n_pulses, dtype=np.int64)
    offsets_ns = pulses * period_ns

    # 级联：B → i（XX_i），i → G（X_i）
    t_xx = t_first / (2 * rates.gamma_b)
    t_x_after = t_xx + t_second / rates.gamma_x
    pol_cascade = (u_pol >= 0.5).astype(np.int8)

    xx_mask = in_b & (t_xx < period_ns)
    x_cascade_mask = in_b & (t_x_after < period_ns)

    # 直接制备到激子：只发 X
    t_x_direct = t_first / rates.gamma_x
    x_direct_mask = (in_h | in_v) & (t_x_direct < period_ns)
    pol_direct = np.where(in_v, 1, 0).astype(np.int8)

    times_ns = np.concatenate([
        offsets_ns[xx_mask] + t_xx[xx_mask],
        offsets_ns[x_cascade_mask] + t_x_after[x_cascade_mask],
        offsets_ns[x_direct_mask] + t_x_direct[x_direct_mask],
    ])
    species = np.concatenate([
        np.ones(xx_mask.sum(), dtype=np.int8),
        np.zeros(x_cascade_mask.sum(), dtype=np.int8),
        np.zeros(x_direct_mask.sum(), dtype=np.int8),
    ])
    pols = np.concatenate([pol_cascade[xx_mask], pol_cascade[x_cascade_mask], pol_direct[x_direct_mask]])
    pulse_index = np.concatenate([pulses[xx_mask], pulses[x_cascade_mask], pulses[x_direct_mask]])

    times_ps = np.rint(times_ns * PS_PER_NS).astype(np.int64)
    events = events_frame(times_ps, species, pols, pulse_index)
    log_event('MC', action='simulate_pulsed', pulses=n_pulses, events=len(events),
              rep_rate_hz=prep.repetition_rate_hz, seed=seed)
    return events


# ============================================
# 探测链
# ============================================
def _apply_dead_time(times, dead_time_ps):
    """逐个扫描：距离上一个被接受的计数小于死时间的计数被丢弃"""
    if dead_time_ps <= 0 or times.size == 0:
        return times
    kept = np.empty_like(times)
    count = 0
    last = None
    for t in times:
        if last is None or t - last >= dead_time_ps:
            kept[count] = t
            count += 1
            last = t
    return kept[:count]


def detect(events, config: DetectionConfig, seed, duration_ps=None):
    """
    探测链：滤波 → 效率稀释 → 50:50 分束 → 高斯抖动 → 死时间 → 暗计数

    Args:
        events: 按时间排序的事件 DataFrame
        config: DetectionConfig
        seed: 随机种子
        duration_ps: 采集时长（暗计数所用；默认取最后事件时间 + 1）

    Returns:
        (tags_d0, tags_d1): 两个按升序排列的 int64 数组（ps）
    """
    stream = RandomStream(seed)
    times = events['time_ps'].to_numpy(dtype=np.int64)

    mask = np.ones(times.size, dtype=bool)
    if config.polarization_filter != 'none':
        mask &= (events['polarization'] == config.polarization_filter).to_numpy()
    if config.species_filter != 'none':
        mask &= (events['species'] == config.species_filter).to_numpy()
    times = times[mask]

    thinning = stream.substream(0).generator()
    times = times[thinning.random(times.size) < config.efficiency]

    if config.splitter == '50:50':
        routing = stream.substream(1).generator()
        detector = routing.integers(0, 2, size=times.size)
    else:
        detector = np.zeros(times.size, dtype=np.int64)

    jitter = stream.substream(2).generator()
    if config.jitter_fwhm_ps > 0:
        sigma = config.jitter_fwhm_ps / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        times = times + np.rint(jitter.normal(0.0, sigma, size=times.size)).astype(np.int64)

    if duration_ps is None:
        duration_ps = int(events['time_ps'].iloc[-1]) + 1 if len(events) else 0

    active = (0, 1) if config.splitter == '50:50' else (0,)
    dark = stream.substream(3).generator()
    outputs = []
    for d in (0, 1):
        tags = np.sort(times[detector == d], kind='stable')
        tags = _apply_dead_time(tags, config.dead_time_ps)
        if d in active and config.dark_rate_hz > 0 and duration_ps > 0:
            n_dark = dark.poisson(config.dark_rate_hz * duration_ps * 1e-12)
            dark_tags = dark.integers(0, duration_ps, size=n_dark, dtype=np.int64)
            tags = np.sort(np.concatenate([tags, dark_tags]), kind='stable')
        outputs.append(tags.astype(np.int64))

    log_event('DETECT', events_in=len(events), after_filter=int(mask.sum()),
              d0=outputs[0].size, d1=outputs[1].size, efficiency=config.efficiency)
    return outputs[0], outputs[1]


def iter_emission_events(events):
    """事件 DataFrame 逐行转为 EmissionEvent"""
    for time_ps, species, polarization, pulse_index in events[EVENT_COLUMNS].itertuples(index=False):
        yield EmissionEvent(
            time_ps=int(time_ps),
            species=str(species),
            polarization=str(polarization),
            pulse_index=None if pd.isna(pulse_index) else int(pulse_index),
        )
