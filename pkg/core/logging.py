"""
ロギング設定モジュール
loguruの設定を一か所にまとめる

ログは標準エラーに出す（標準出力は要約表と CSV 専用）
各行には実行中のシナリオと seed を "run" として付ける
"""
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from loguru import logger


NO_RUN = "-"

_CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[run]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - "
    "<level>{message}</level>"
)

_FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[run]} | {name}:{function}:{line} - {message}"


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[Path] = None,
    rotation: str = "10 MB",
    retention: str = "14 days",
) -> None:
    """
    ロギングを設定する（何度呼んでも既存のシンクを置き換える）

    Args:
        log_level: ログレベル (DEBUG, INFO, WARNING, ERROR)
        log_file: 指定時のみファイルにも書く
        rotation: ファイルのローテーション条件
        retention: ローテーション済みファイルの保持期間
    """
    logger.remove()
    logger.configure(extra={"run": NO_RUN})

    logger.add(sys.stderr, format=_CONSOLE_FORMAT, level=log_level, colorize=True)

    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_file,
            format=_FILE_FORMAT,
            level=log_level,
            rotation=rotation,
            retention=retention,
            encoding="utf-8",
            enqueue=True,  # サンプリングのワーカースレッドからも書く
        )

    logger.debug(f"Logging configured: level={log_level} file={log_file or 'none'}")


@contextmanager
def run_context(scenario: str, seed: Optional[int] = None) -> Iterator[str]:
    """
    ブロック内のログにシナリオ名と seed を付ける

    >>> with run_context("example4", 7):
    ...     logger.info("...")   # run=example4#7
    """
    label = scenario if seed is None else f"{scenario}#{seed}"
    with logger.contextualize(run=label):
        yield label


def get_logger(name: str):
    """
    モジュール名を束縛したロガー

    Args:
        name: 通常は __name__
    """
    return logger.bind(name=name)


def log_error_with_context(error: Exception, context: dict):
    """コマンドの失敗を文脈付きで記録する"""
    details = ", ".join(f"{key}={value}" for key, value in context.items())
    logger.error(f"{type(error).__name__}: {error} ({details})")
