"""
配置文件
管理运行环境默认值（.env）与运行配置文件（key = value）
"""

import hashlib
import os

import pytz
from dotenv import load_dotenv

from error_handler import ConfigError

# 加载 .env 文件（如果存在）
load_dotenv()

# ============================================
# 程序版本
# ============================================
PROGRAM_NAME = 'twinphoton'
PROGRAM_VERSION = '1.0.0'

# ============================================
# 输出配置
# ============================================
OUTPUT_DIR = os.getenv('OUTPUT_DIR', os.path.join(os.path.dirname(__file__), 'output'))

# ============================================
# 运行默认值
# ============================================
DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '20240101'))
DEFAULT_THREADS = int(os.getenv('DEFAULT_THREADS', '1'))

# TCSPC 直方图 bin 宽度（ps）
BIN_WIDTH_PS = int(os.getenv('BIN_WIDTH_PS', '4'))

# 系统时间分辨率（高斯 FWHM, ps）
IRF_FWHM_PS = float(os.getenv('IRF_FWHM_PS', '350'))

# 拟合最大迭代次数
FIT_MAX_ITERATIONS = int(os.getenv('FIT_MAX_ITERATIONS', '200'))

# PNR bootstrap 重采样次数
BOOTSTRAP_RESAMPLES = int(os.getenv('BOOTSTRAP_RESAMPLES', '10000'))

# 文件锁超时（秒）
LOCK_TIMEOUT_S = float(os.getenv('LOCK_TIMEOUT_S', '10'))

# ============================================
# 运行台账（SQLite）配置
# ============================================
LEDGER_ENABLED = os.getenv('LEDGER_ENABLED', 'false').lower() == 'true'
LEDGER_DB_PATH = os.getenv('LEDGER_DB_PATH', os.path.join(os.path.dirname(__file__), 'data', 'runs.db'))
LEDGER_TIMEZONE = os.getenv('LEDGER_TIMEZONE', 'UTC')
DB_BUSY_TIMEOUT = int(os.getenv('DB_BUSY_TIMEOUT', '10000'))  # 10秒超时

# ============================================
# 日志配置
# ============================================
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

# ============================================
# 运行配置文件的键表：name -> (类型, 单位/说明)
# ============================================
RUN_CONFIG_KEYS = {
    # 模型速率
    'gamma_b': (float, '每个双激子衰减通道的速率, 1/ns'),
    'gamma_x': (float, '激子衰减速率, 1/ns'),
    'p_b': (float, '激子→双激子泵浦速率, 1/ns'),
    'p_x': (float, '基态→激子泵浦速率（每个偏振）, 1/ns'),
    # 模拟
    'duration_ns': (float, 'CW 模拟时长, ns'),
    'shards': (int, 'CW 轨迹分段数（决定随机流划分）'),
    'n_pulses': (int, '脉冲数'),
    'rep_rate_hz': (float, '激发重复频率, Hz'),
    'prob_b': (float, '脉冲后处于 B 的概率'),
    'prob_h': (float, '脉冲后处于 H 的概率'),
    'prob_v': (float, '脉冲后处于 V 的概率'),
    'tau_xx_ns': (float, '双激子寿命, ns'),
    'tau_x_ns': (float, '激子寿命, ns'),
    # 探测链
    'polarization_filter': (str, 'H / V / none'),
    'species_filter': (str, 'X / XX / none'),
    'efficiency': (float, '总探测效率 ε·η'),
    'jitter_fwhm_ps': (float, '探测器时间抖动 FWHM, ps'),
    'splitter': (str, 'none / 50:50'),
    'dark_rate_hz': (float, '暗计数率, Hz'),
    'dead_time_ps': (float, '探测器死时间, ps'),
    # 关联
    'bin_width_ps': (int, '直方图 bin 宽度, ps'),
    'window_ps': (int, '关联窗口半宽, ps'),
    'irf_fwhm_ps': (float, '仪器响应 FWHM, ps'),
    'k_range': (int, '旁峰范围 |k|'),
    # HOM
    'mode_overlap_m': (float, '有效不可区分度 M'),
    # PNR
    'n_triggers': (int, 'TES 触发次数'),
    's': (float, '单光子端到端成功概率 ε_PNR·η'),
    'unit_area': (float, '单光子平均脉冲面积, a.u.'),
    'sigma_area': (float, '每个光子数峰的高斯宽度, a.u.'),
    'p0': (float, '源端 p0'),
    'p1': (float, '源端 p1'),
    'p2': (float, '源端 p2'),
    'p3': (float, '源端 p3'),
    # 光谱
    'center_energy_uev': (float, '参考能量, μeV'),
    'delta_fss_uev': (float, '精细结构分裂, μeV'),
    'binding_sign': (str, 'binding / antibinding'),
    'linewidth_x_uev': (float, '激子线宽, μeV'),
    'linewidth_xx_uev': (float, '双激子线宽, μeV'),
    'intensity_ratio': (float, 'I_X / I_XX'),
    'principal_axis_deg': (float, 'H 偏振方向, 度'),
    'n_angles': (int, '偏振角采样数'),
    'noise_level': (float, '加性高斯噪声标准差, a.u.'),
    # 通用
    'seed': (int, '随机种子'),
    'threads': (int, '最大工作进程数'),
    'output': (str, '输出文件路径'),
}


def _parse_value(key, raw, line_no):
    """按键表类型解析配置值"""
    value_type, _ = RUN_CONFIG_KEYS[key]
    try:
        if value_type is int:
            # 允许 1e6 这类写法，但必须是整数
            number = float(raw)
            if not number.is_integer():
                raise ValueError(raw)
            return int(number)
        if value_type is float:
            return float(raw)
        if value_type is bool:
            return raw.lower() in ('1', 'true', 'yes', 'on')
        return raw
    except ValueError as e:
        raise ConfigError(f"line {line_no}: key '{key}' expects {value_type.__name__}, got '{raw}'") from e


def load_run_config(path):
    """
    读取运行配置文件

    格式：UTF-8，每行 `key = value`，`#` 开头为注释，空行忽略。

    Args:
        path: 配置文件路径

    Returns:
        dict: 已按类型解析的配置

    Raises:
        ConfigError: 未知键、重复键或无法解析的值
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    values = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.split('#', 1)[0].strip()
            if not stripped:
                continue
            if '=' not in stripped:
                raise ConfigError(f"line {line_no}: expected 'key = value'")

            key, raw = (part.strip() for part in stripped.split('=', 1))
            key = key.lower()
            if key not in RUN_CONFIG_KEYS:
                raise ConfigError(f"line {line_no}: unknown key '{key}'")
            if key in values:
                raise ConfigError(f"line {line_no}: duplicate key '{key}'")
            values[key] = _parse_value(key, raw, line_no)

    return values


def config_hash(values):
    """配置内容的 SHA-256（按键排序的规范文本）"""
    canonical = '\n'.join(f"{key}={values[key]!r}" for key in sorted(values))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def validate_config():
    """验证环境配置是否合理"""
    errors = []

    if DEFAULT_THREADS < 1:
        errors.append(f"DEFAULT_THREADS 必须 ≥ 1 (当前 {DEFAULT_THREADS})")

    if BIN_WIDTH_PS <= 0:
        errors.append(f"BIN_WIDTH_PS 必须 > 0 (当前 {BIN_WIDTH_PS})")

    if IRF_FWHM_PS <= 0:
        errors.append(f"IRF_FWHM_PS 必须 > 0 (当前 {IRF_FWHM_PS})")

    if LEDGER_TIMEZONE not in pytz.all_timezones_set:
        errors.append(f"LEDGER_TIMEZONE 未知时区: {LEDGER_TIMEZONE}")

    if LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
        errors.append(f"LOG_LEVEL 未知级别: {LOG_LEVEL}")

    if errors:
        print("\n⚠ 配置警告:")
        for error in errors:
            print(f"  - {error}")
        return False

    return True


def print_config():
    """打印当前配置"""
    print("=" * 60)
    print("当前配置:")
    print("=" * 60)
    print(f"PROGRAM: {PROGRAM_NAME} {PROGRAM_VERSION}")
    print(f"OUTPUT_DIR: {OUTPUT_DIR}")
    print(f"DEFAULT_SEED: {DEFAULT_SEED}")
    print(f"DEFAULT_THREADS: {DEFAULT_THREADS}")
    print(f"BIN_WIDTH_PS: {BIN_WIDTH_PS}")
    print(f"IRF_FWHM_PS: {IRF_FWHM_PS}")
    print(f"FIT_MAX_ITERATIONS: {FIT_MAX_ITERATIONS}")
    print(f"BOOTSTRAP_RESAMPLES: {BOOTSTRAP_RESAMPLES}")
    print(f"LEDGER_ENABLED: {LEDGER_ENABLED}")
    print(f"LEDGER_DB_PATH: {LEDGER_DB_PATH}")
    print(f"LEDGER_TIMEZONE: {LEDGER_TIMEZONE}")
    print(f"LOG_LEVEL: {LOG_LEVEL}")
    print("=" * 60)


if __name__ == '__main__':
    """测试配置"""
    print_config()
    print()
    if validate_config():
        print("\n✓ 配置验证通过！")
    else:
        print("\n✗ 配置验证失败，请修正上述问题")
