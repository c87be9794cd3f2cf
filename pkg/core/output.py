"""
ファイル出力モジュール
レポートやCSVを一時ファイル経由でアトミックに書き出す
"""
import os
import tempfile
from pathlib import Path
from loguru import logger


def atomic_write_text(path: Path, text: str) -> Path:
    """
    テキストをアトミックに書き込む

    Args:
        path: 出力先パス
        text: 書き込む内容

    Returns:
        書き込んだパス

    同じディレクトリに一時ファイルを作ってから rename するので、
    途中で失敗しても中途半端なファイルは残らない
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        # newline="" で改行コードを変換しない（CSVのバイト一致のため）
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    logger.debug(f"Wrote {len(text)} chars to {path}")
    return path
