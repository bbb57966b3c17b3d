#!/usr/bin/env python3
"""
错误处理和日志
异常层级、退出码映射、结构化日志行，以及台账写入的指数退避
"""

import sqlite3
import sys
import time
from datetime import datetime
from functools import wraps

from sqlalchemy.exc import DatabaseError, OperationalError

_LEVELS = {'DEBUG': 10, 'INFO': 20, 'WARNING': 30, 'ERROR': 40}


# ============================================
# 异常层级
# ============================================
class TwinPhotonError(Exception):
    """所有领域错误的基类"""


class InvalidParameterError(TwinPhotonError, ValueError):
    """参数越界或不合法（非正速率、概率和 > 1 等）"""


class ComplexBranchError(TwinPhotonError):
    """闭式表达式在判别式 D < 0 时进入复数分支"""


class ResolutionError(TwinPhotonError):
    """网格相对于核宽度过粗"""


class PreconditionError(TwinPhotonError):
    """输入违反前置条件（例如时间标签未排序）"""


class DivideByZeroError(TwinPhotonError, ZeroDivisionError):
    """归一化所需的速率或时长为零"""


class AccuracyError(TwinPhotonError):
    """数值积分未达到要求精度"""


class InfeasibleDataError(TwinPhotonError):
    """数据不存在所有概率都在 [0,1] 内的解"""


class InsufficientDataError(TwinPhotonError):
    """有效样本数不足"""


class ConfigError(TwinPhotonError):
    """配置文件或命令行用法错误"""


class DataFormatError(TwinPhotonError):
    """输入文件格式错误"""


class FitFailure(TwinPhotonError):
    """拟合未收敛（附带诊断信息）"""

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations

    def __str__(self):
        base = super().__str__()
        return f"{base} (residual_norm={self.residual_norm} iterations={self.iterations})"


# 退出码：0 成功；2 用法；3 数据/格式；4 拟合失败
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FIT = 4


def exit_code_for(error):
    """
    异常 → 命令行退出码

    Args:
        error: 异常对象

    Returns:
        int: 退出码
    """
    if isinstance(error, FitFailure):
        return EXIT_FIT
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, (TwinPhotonError, OSError, ValueError, KeyError)):
        return EXIT_DATA
    return 1


# ============================================
# 结构化日志
# ============================================
def _timestamp():
    return datetime.now().strftime('%Y-%m-%d %H:%M:%S')


def _format_value(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    text = str(value)
    return f"'{text}'" if ' ' in text else text


def log_event(tag, level='INFO', **fields):
    """
    输出一行结构化日志到 stderr

    格式：[YYYY-mm-dd HH:MM:SS] [TAG] key=value key=value

    Args:
        tag: 模块标签（MODEL / MC / CORR / FIT ...）
        level: 日志级别
        **fields: 键值对
    """
    import config

    if _LEVELS.get(level, 20) < _LEVELS.get(config.LOG_LEVEL, 20):
        return

    parts = ' '.join(f"{key}={_format_value(value)}" for key, value in fields.items())
    prefix = f"[{_timestamp()}] [{tag}]"
    if level in ('WARNING', 'ERROR'):
        prefix += f" [{level}]"
    print(f"{prefix} {parts}".rstrip(), file=sys.stderr)


def log_exception(error, context=""):
    """
    记录异常日志（结构化格式）

    Args:
        error: 异常对象
        context: 上下文描述
    """
    error_type = type(error).__name__
    error_msg = str(error)

    print(f"[{_timestamp()}] [ERROR] context={context} type={error_type} msg={error_msg}", file=sys.stderr)

    # 台账写入错误额外标记
    if is_db_write_error(error):
        print(f"[{_timestamp()}] [ERROR] category=db_write_error", file=sys.stderr)


# ============================================
# 台账写入重试
# ============================================
class ExponentialBackoff:
    """指数退避管理器"""

    def __init__(self, initial_delay=0.5, max_delay=8.0, multiplier=2.0):
        """
        初始化指数退避

        Args:
            initial_delay: 初始延迟（秒）
            max_delay: 最大延迟（秒）
            multiplier: 延迟倍数
        """
        self.initial_delay = initial_delay
        self.max_delay = max_delay
        self.multiplier = multiplier
        self.current_delay = initial_delay
        self.failure_count = 0

    def wait(self):
        """执行等待"""
        if self.failure_count > 0:
            log_event('BACKOFF', delay_s=self.current_delay, failures=self.failure_count)
            time.sleep(self.current_delay)
            self.current_delay = min(self.current_delay * self.multiplier, self.max_delay)

    def record_failure(self):
        """记录失败"""
        self.failure_count += 1

    def reset(self):
        """重置（成功后）"""
        if self.failure_count > 0:
            log_event('BACKOFF', action='reset', after_failures=self.failure_count)
        self.current_delay = self.initial_delay
        self.failure_count = 0


def is_db_write_error(error):
    """
    判断是否为 SQLite 写入错误

    Args:
        error: 异常对象

    Returns:
        bool: 是否为数据库写入错误
    """
    error_str = str(error).lower()

    db_write_keywords = [
        'readonly database',
        'database is locked',
        'database disk image is malformed',
        'unable to open database',
    ]

    return any(keyword in error_str for keyword in db_write_keywords)


def handle_db_write_error(max_retries=3):
    """
    装饰器：台账写入遇到锁错误时按指数退避重试

    Usage:
        @handle_db_write_error(max_retries=3)
        def record_run(...):
            ...
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            backoff = ExponentialBackoff()
            for attempt in range(1, max_retries + 1):
                try:
                    result = func(*args, **kwargs)
                    backoff.reset()
                    return result
                except (OperationalError, DatabaseError, sqlite3.OperationalError) as e:
                    if not is_db_write_error(e) or attempt == max_retries:
                        raise
                    backoff.record_failure()
                    log_event('LEDGER', level='WARNING', action='retry', attempt=attempt, error=type(e).__name__)
                    backoff.wait()
        return wrapper
    return decorator
