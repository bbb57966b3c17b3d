"""
运行台账
使用 SQLAlchemy 管理 SQLite 数据库，为每次命令行运行保存溯源记录

- 健康检测（PRAGMA integrity_check，损坏时只告警+备份，不自动重建）
- WAL 模式与 busy_timeout
- 写入遇到锁错误按指数退避重试
"""

import json
import os
import shutil
import sqlite3
from datetime import datetime

import pytz
from sqlalchemy import Column, DateTime, Index, Integer, String, Text, create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

from error_handler import handle_db_write_error, log_event

# 创建基类
Base = declarative_base()


class RunRecord(Base):
    """
    运行记录表

    字段说明：
    - id: 主键，自增
    - command: 子命令名（有索引）
    - config_hash: 运行配置 SHA-256
    - seed: 随机种子
    - output_path: 主输出文件
    - provenance_json: 完整溯源记录（JSON）
    - created_at: 记录时间（LEDGER_TIMEZONE）
    """
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String(40), nullable=False, index=True)
    config_hash = Column(String(64), nullable=False)
    seed = Column(String(24), nullable=True)
    output_path = Column(Text, nullable=True)
    provenance_json = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), nullable=False)

    __table_args__ = (
        Index('idx_runs_command_created', 'command', 'created_at'),
    )

    def __repr__(self):
        return f"<RunRecord(id={self.id}, command={self.command}, seed={self.seed})>"

    def to_dict(self):
        """转换为字典格式"""
        return {
            'id': self.id,
            'command': self.command,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'output_path': self.output_path,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


# 全局引擎和会话工厂（按数据库路径）
engines = {}
session_factories = {}


def get_db_path(db_path=None):
    """
    获取台账文件路径（默认 config.LEDGER_DB_PATH），并确保目录存在
    """
    import config

    db_path = db_path or config.LEDGER_DB_PATH
    db_dir = os.path.dirname(db_path)
    if db_dir:
        os.makedirs(db_dir, exist_ok=True)
    return db_path


def ensure_ledger_health(db_path):
    """
    台账健康检测（只读模式 - 不自动修复）

    Returns:
        True: 健康或尚不存在
        False: 无法访问

    Raises:
        RuntimeError: 数据库损坏（已备份，需人工处理）
    """
    if not os.path.exists(db_path):
        log_event('LEDGER', action='new_db', path=db_path)
        return True

    try:
        conn = sqlite3.connect(db_path, timeout=5)
        try:
            result = conn.execute("PRAGMA integrity_check").fetchone()
        finally:
            conn.close()
    except sqlite3.DatabaseError as e:
        log_event('LEDGER', level='ERROR', action='access_error', error=str(e))
        return False

    if result and result[0] == 'ok':
        log_event('LEDGER', action='integrity_check', status='ok')
        return True

    integrity_msg = result[0] if result else 'FAILED'
    backup_path = f"{db_path}.corrupt.{datetime.now().strftime('%Y%m%d_%H%M%S')}"
    shutil.copy2(db_path, backup_path)
    log_event('LEDGER', level='ERROR', action='corrupt_detected', integrity=integrity_msg, backup=backup_path)
    raise RuntimeError(f"Ledger corrupt (integrity={integrity_msg}), manual recovery required. Backup: {backup_path}")


@event.listens_for(Engine, "connect")
def set_sqlite_pragma(dbapi_conn, connection_record):
    """每次连接设置 WAL 与 busy_timeout"""
    import config

    if not isinstance(dbapi_conn, sqlite3.Connection):
        return
    cursor = dbapi_conn.cursor()
    cursor.execute("PRAGMA journal_mode = WAL")
    cursor.execute("PRAGMA synchronous = NORMAL")
    cursor.execute(f"PRAGMA busy_timeout = {config.DB_BUSY_TIMEOUT}")
    cursor.close()


def init_ledger(db_path=None):
    """
    初始化台账数据库

    Returns:
        数据库引擎
    """
    db_path = get_db_path(db_path)
    if not ensure_ledger_health(db_path):
        raise RuntimeError(f"ledger init failed: {db_path}")

    engine = create_engine(f'sqlite:///{db_path}', echo=False, connect_args={'check_same_thread': False})
    Base.metadata.create_all(engine)

    engines[db_path] = engine
    session_factories[db_path] = sessionmaker(bind=engine)
    log_event('LEDGER', action='init_ok', path=db_path)
    return engine


def get_session(db_path=None):
    """
    获取台账会话

    使用示例：
        session = get_session()
        try:
            ...
        finally:
            session.close()
    """
    db_path = get_db_path(db_path)
    if db_path not in session_factories:
        init_ledger(db_path)
    return session_factories[db_path]()


def _now():
    import config
    return datetime.now(pytz.timezone(config.LEDGER_TIMEZONE))


@handle_db_write_error(max_retries=3)
def record_run(provenance, output_path=None, db_path=None):
    """
    保存一次运行的溯源记录

    Args:
        provenance: report_generator.build_provenance 的结果
        output_path: 主输出文件
        db_path: 台账路径（默认 config.LEDGER_DB_PATH）

    Returns:
        int: 新记录 id
    """
    session = get_session(db_path)
    try:
        record = RunRecord(
            command=provenance['command'],
            config_hash=provenance['config_hash'],
            seed=None if provenance.get('seed') is None else str(provenance['seed']),
            output_path=output_path,
            provenance_json=json.dumps(provenance, sort_keys=True, ensure_ascii=False),
            created_at=_now(),
        )
        session.add(record)
        session.commit()
        log_event('LEDGER', action='record_run', id=record.id, command=record.command)
        return record.id
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def list_runs(limit=20, command=None, db_path=None):
    """最近的运行记录（新的在前）"""
    session = get_session(db_path)
    try:
        query = session.query(RunRecord)
        if command:
            query = query.filter(RunRecord.command == command)
        return [run.to_dict() for run in query.order_by(RunRecord.id.desc()).limit(limit).all()]
    finally:
        session.close()


def get_ledger_stats(db_path=None):
    """
    台账统计信息

    Returns:
        dict: 总运行数、按命令计数、最近一次运行、文件大小
    """
    path = get_db_path(db_path)
    session = get_session(path)
    try:
        total = session.query(RunRecord).count()
        by_command = {}
        for (command,) in session.query(RunRecord.command).all():
            by_command[command] = by_command.get(command, 0) + 1
        latest = session.query(RunRecord).order_by(RunRecord.id.desc()).first()
    finally:
        session.close()

    db_size = os.path.getsize(path) if os.path.exists(path) else 0
    return {
        'total_runs': total,
        'runs_by_command': dict(sorted(by_command.items())),
        'latest_run': latest.to_dict() if latest else None,
        'database_size_mb': round(db_size / (1024 * 1024), 2),
    }
