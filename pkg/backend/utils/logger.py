"""
日志工具模块
使用loguru实现统一的日志管理

控制台日志写stderr, stdout只留给命令输出 (JSON报告、真值)
"""
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from core.config import LogSettings, settings


CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}"
WORKER_FORMAT = "{time:HH:mm:ss} | {level: <8} | worker {process} | {message}"

_worker_configured = False


def _add_file_sinks(log_settings: LogSettings) -> None:
    """主日志 + 错误日志, 按天轮转"""
    log_file = Path(log_settings.file)
    log_file.parent.mkdir(parents=True, exist_ok=True)

    logger.add(
        log_file,
        format=FILE_FORMAT,
        level=log_settings.level,
        rotation="00:00",
        retention="30 days",
        compression="zip",
        encoding="utf-8",
        enqueue=True,
        backtrace=True,
        diagnose=False,
    )
    logger.add(
        log_file.parent / f"{log_file.stem}_error{log_file.suffix}",
        format=FILE_FORMAT,
        level="ERROR",
        rotation="00:00",
        retention="90 days",
        compression="zip",
        encoding="utf-8",
        enqueue=True,
    )


def setup_logger(log_settings: Optional[LogSettings] = None):
    """
    配置日志系统

    Args:
        log_settings: 日志配置, 默认使用全局配置
    """
    log_settings = log_settings or settings.log

    logger.remove()
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=log_settings.level, colorize=True)
    if log_settings.to_file:
        _add_file_sinks(log_settings)

    logger.debug(
        f"日志系统初始化完成 - 级别: {log_settings.level}, "
        f"文件: {log_settings.file if log_settings.to_file else '关闭'}"
    )
    return logger


def setup_worker_logger(log_settings: LogSettings):
    """
    joblib子进程的日志配置

    子进程只写stderr, 文件由主进程独占; 每个进程只配置一次
    """
    global _worker_configured
    if _worker_configured:
        return logger

    logger.remove()
    logger.add(sys.stderr, format=WORKER_FORMAT, level=log_settings.level, colorize=False)
    _worker_configured = True
    return logger


# 初始化日志
setup_logger()


# 导出logger
__all__ = ["logger", "setup_logger", "setup_worker_logger"]
