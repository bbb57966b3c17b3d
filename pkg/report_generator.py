"""
报告与数据文件
事件/标签/直方图/曲线/面积/光谱图的 CSV 读写、JSON 报告与运行溯源记录

所有写入都经过 FileLock；CSV 浮点格式固定为 %.9g，JSON 按键排序，保证重复运行逐字节一致。
"""

import json
import os

import matplotlib
import numpy as np
import pandas as pd
import scipy
from filelock import FileLock, Timeout

import config
from correlator import CoincidenceHistogram
from error_handler import DataFormatError, log_event
from mc_sim import EVENT_COLUMNS, POLARIZATIONS, SPECIES, events_frame
from model_core import ALL_KINDS, G2Curve
from spectra import SpectralMap

FLOAT_FORMAT = '%.9g'
DETECTORS = ('D0', 'D1')


# ============================================
# 通用读写
# ============================================
def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _lock(path):
    return FileLock(f"{path}.lock", timeout=config.LOCK_TIMEOUT_S)


def write_csv(frame: pd.DataFrame, path):
    """加锁写 CSV（无索引，\\n 换行，固定浮点格式）"""
    _ensure_parent(path)
    try:
        with _lock(path):
            frame.to_csv(path, index=False, lineterminator='\n', float_format=FLOAT_FORMAT, na_rep='')
    except Timeout:
        log_event('IO', level='ERROR', action='lock_timeout', path=path)
        raise
    log_event('IO', action='write_csv', path=path, rows=len(frame))
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(data, path):
    """加锁写 JSON（sort_keys，indent=2）"""
    _ensure_parent(path)
    with _lock(path):
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(_jsonable(data), f, sort_keys=True, indent=2, ensure_ascii=False)
            f.write('\n')
    log_event('IO', action='write_json', path=path)
    return path


def read_json(path):
    if not os.path.exists(path):
        raise DataFormatError(f"file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON ({e})") from e


def read_csv(path, columns, dtypes=None):
    """
    读 CSV 并检查表头

    Raises:
        DataFormatError: 文件缺失、表头不符或无法解析
    """
    if not os.path.exists(path):
        raise DataFormatError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=dtypes, keep_default_na=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise DataFormatError(f"{path}: cannot parse CSV ({e})") from e
    if list(frame.columns) != list(columns):
        raise DataFormatError(f"{path}: expected header {','.join(columns)}, got {','.join(map(str, frame.columns))}")
    return frame


# ============================================
# 事件与时间标签
# ============================================
def write_events(events: pd.DataFrame, path):
    """发射事件 CSV：time_ps,species,polarization,pulse_index"""
    return write_csv(events[EVENT_COLUMNS], path)


def read_events(path):
    frame = read_csv(path, EVENT_COLUMNS, dtypes={'species': str, 'polarization': str})
    if frame.empty:
        return events_frame(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int8))
    if not set(frame['species']).issubset(SPECIES) or not set(frame['polarization']).issubset(POLARIZATIONS):
        raise DataFormatError(f"{path}: unknown species or polarization labels")
    try:
        times = frame['time_ps'].to_numpy(dtype=np.int64)
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: time_ps must be integer picoseconds") from e

    species = frame['species'].map(SPECIES.index).to_numpy(dtype=np.int8)
    pols = frame['polarization'].map(POLARIZATIONS.index).to_numpy(dtype=np.int8)
    pulse = frame['pulse_index']
    pulse_index = None if pulse.isna().all() else pulse.to_numpy(dtype=np.int64)
    return events_frame(times, species, pols, pulse_index)


def write_tags(tags_d0, tags_d1, path):
    """时间标签 CSV：time_ps,detector（按时间排序，同时间时 D0 在前）"""
    times = np.concatenate([np.asarray(tags_d0, dtype=np.int64), np.asarray(tags_d1, dtype=np.int64)])
    detector = np.concatenate([np.zeros(len(tags_d0), dtype=np.int8), np.ones(len(tags_d1), dtype=np.int8)])
    order = np.lexsort((detector, times))
    frame = pd.DataFrame({
        'time_ps': times[order],
        'detector': np.array(DETECTORS, dtype=object)[detector[order]],
    })
    return write_csv(frame, path)


def read_tags(path):
    """返回 (tags_d0, tags_d1)"""
    frame = read_csv(path, ['time_ps', 'detector'], dtypes={'detector': str})
    if not set(frame['detector']).issubset(DETECTORS):
        raise DataFormatError(f"{path}: detector must be D0 or D1")
    times = frame['time_ps'].to_numpy(dtype=np.int64)
    detector = frame['detector'].to_numpy()
    return np.sort(times[detector == 'D0']), np.sort(times[detector == 'D1'])


# ============================================
# 直方图与 g² 曲线
# ============================================
def _sidecar(path):
    return f"{os.path.splitext(path)[0]}.meta.json"


def write_histogram(hist: CoincidenceHistogram, path, g2_values=None):
    """
    直方图 CSV：tau_ps,counts,g2；bin 宽度、窗口、计数率与时长写入 .meta.json
    """
    if g2_values is None:
        g2_values = np.full(hist.counts.size, np.nan)
    frame = pd.DataFrame({'tau_ps': hist.tau_ps, 'counts': hist.counts, 'g2': np.asarray(g2_values, dtype=float)})
    write_csv(frame, path)
    write_json({
        'bin_width_ps': hist.bin_width_ps,
        'window_ps': hist.window_ps,
        'rate_a_hz': hist.rate_a_hz,
        'rate_b_hz': hist.rate_b_hz,
        'acquisition_time_s': hist.acquisition_time_s,
    }, _sidecar(path))
    return path


def read_histogram(path):
    frame = read_csv(path, ['tau_ps', 'counts', 'g2'])
    tau = frame['tau_ps'].to_numpy(dtype=np.int64)
    counts = frame['counts'].to_numpy(dtype=np.int64)
    if tau.size % 2 != 1:
        raise DataFormatError(f"{path}: histogram must have an odd number of bins")

    meta = read_json(_sidecar(path)) if os.path.exists(_sidecar(path)) else {}
    bin_width = int(meta.get('bin_width_ps') or (tau[1] - tau[0] if tau.size > 1 else config.BIN_WIDTH_PS))
    window = int(meta.get('window_ps') or tau[-1])
    return CoincidenceHistogram(bin_width, window, counts, meta.get('rate_a_hz'), meta.get('rate_b_hz'),
                                meta.get('acquisition_time_s'))


def write_curve(curve: G2Curve, path):
    """g² 曲线 CSV：tau_ps,g2"""
    return write_csv(pd.DataFrame({'tau_ps': curve.tau_grid, 'g2': curve.values}), path)


def read_curve(path, kind='cross'):
    """读 g² 曲线；若为直方图 CSV（含 counts 列）则保留计数作拟合权重"""
    if kind not in ALL_KINDS:
        raise DataFormatError(f"unknown g2 kind '{kind}'")
    if not os.path.exists(path):
        raise DataFormatError(f"file not found: {path}")
    header = pd.read_csv(path, nrows=0).columns.tolist()
    if header == ['tau_ps', 'counts', 'g2']:
        frame = read_csv(path, header)
        if frame['g2'].isna().any():
            raise DataFormatError(f"{path}: histogram is not normalized (empty g2 column)")
        return G2Curve(frame['tau_ps'].to_numpy(dtype=float), frame['g2'].to_numpy(dtype=float), kind,
                       counts=frame['counts'].to_numpy(dtype=np.int64))
    frame = read_csv(path, ['tau_ps', 'g2'])
    return G2Curve(frame['tau_ps'].to_numpy(dtype=float), frame['g2'].to_numpy(dtype=float), kind)


# ============================================
# PNR 与光谱
# ============================================
def write_areas(samples, path):
    """脉冲面积 CSV：area_au"""
    return write_csv(pd.DataFrame({'area_au': np.asarray(samples, dtype=float)}), path)


def read_areas(path):
    return read_csv(path, ['area_au'])['area_au'].to_numpy(dtype=float)


def write_spectral_map(spectral_map: SpectralMap, path):
    """光谱图 CSV（长表）：angle_deg,energy_ueV,intensity"""
    angles = np.repeat(spectral_map.angles_deg, spectral_map.energy_grid.size)
    energy = np.tile(spectral_map.energy_grid, spectral_map.angles_deg.size)
    frame = pd.DataFrame({'angle_deg': angles, 'energy_ueV': energy, 'intensity': spectral_map.intensity.ravel()})
    return write_csv(frame, path)


def read_spectral_map(path, binding_sign='binding', resolution_uev=None):
    frame = read_csv(path, ['angle_deg', 'energy_ueV', 'intensity'])
    table = frame.pivot_table(index='angle_deg', columns='energy_ueV', values='intensity', aggfunc='first')
    if table.isna().any().any():
        raise DataFormatError(f"{path}: every angle must share the same energy grid")
    return SpectralMap(table.index.to_numpy(dtype=float), table.columns.to_numpy(dtype=float),
                       table.to_numpy(dtype=float), binding_sign=binding_sign, resolution_uev=resolution_uev)


# ============================================
# 溯源
# ============================================
def package_versions():
    return {
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'matplotlib': matplotlib.__version__,
    }


def build_provenance(command, arguments, config_values=None, seed=None, threads=None, outputs=None):
    """
    运行溯源记录（不含墙钟时间）

    Args:
        command: 子命令名
        arguments: 命令行参数 dict
        config_values: 运行配置（可为空）
        seed / threads: 全局参数
        outputs: 输出文件列表
    """
    config_values = dict(config_values or {})
    return {
        'program': config.PROGRAM_NAME,
        'version': config.PROGRAM_VERSION,
        'command': command,
        'arguments': {key: arguments[key] for key in sorted(arguments)},
        'config_hash': config.config_hash(config_values),
        'seed': seed,
        'threads': threads,
        'outputs': sorted(outputs or []),
        'packages': package_versions(),
    }


def provenance_path(output_path):
    return f"{os.path.splitext(output_path)[0]}.provenance.json"


def write_provenance(record, output_path):
    """写 <输出文件名>.provenance.json"""
    return write_json(record, provenance_path(output_path))
