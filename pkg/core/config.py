"""
設定管理モジュール
環境変数から実行環境の設定を読み込み、Pydanticでバリデーションする
数値計算の既定値テーブルもここで一元管理する
"""
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pathlib import Path
from typing import Literal, Optional
import os
from dotenv import load_dotenv


class NumericDefaults(BaseModel):
    """
    数値検証の既定値テーブル

    全ての既定値をここに集約し、実行設定（TOML）から個別に上書きできるようにする
    サンプリングによる検証は証拠であって証明ではない点に注意
    """
    model_config = ConfigDict(frozen=True)

    t_max: float = Field(default=50.0, gt=0, description="時間軸の打ち切り T_max")
    grid_per_axis: int = Field(default=21, ge=2, description="状態空間グリッドの1軸あたり点数")
    grid_t: int = Field(default=11, ge=1, description="時間グリッドの点数")
    random_samples: int = Field(default=10_000, ge=0, description="一様乱数サンプル数")
    epsilon: float = Field(default=0.05, ge=0, description="原点除外半径")
    delta_strict: float = Field(default=1e-9, ge=0, description="厳密判定の帯幅")
    delta_tol: float = Field(default=1e-9, ge=0, description="非厳密判定の許容幅")
    exclusion_tol: float = Field(default=1e-6, ge=0, description="軸ゼロ述語の許容幅")
    kink_tol: float = Field(default=1e-10, gt=0, description="|∇S| をゼロとみなす閾値")
    sigma_multiplier: float = Field(default=3.0, gt=0, description="積分符号判定の σ 倍率")
    inconclusive_fraction: float = Field(default=0.1, gt=0, le=1, description="判定不能とする特異点除外率")
    integral_samples: int = Field(default=40_000, ge=1, description="モンテカルロ積分のサンプル数")
    eps_conv: float = Field(default=1e-3, gt=0, description="収束判定の距離")
    window_fraction: float = Field(default=0.1, gt=0, le=1, description="収束判定に使う末尾区間の割合")
    tf: float = Field(default=50.0, gt=0, description="シミュレーション終了時刻")
    divergence_bound: float = Field(default=1e9, gt=0, description="発散とみなすノルム")
    chunk_size: int = Field(default=16_384, ge=1, description="サンプル処理のチャンクサイズ")


# モジュール全体で共有する既定値
DEFAULTS = NumericDefaults()


class AppConfig(BaseModel):
    """
    アプリケーション全体の設定クラス

    環境変数（または .env）から読み込む実行環境の設定
    """
    model_config = ConfigDict(validate_assignment=True)

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO",
        description="ログレベル"
    )
    log_file: Optional[Path] = Field(default=None, description="ログファイルのパス")
    threads: Optional[int] = Field(default=None, ge=1, description="ワーカー数の上限")
    output_dir: Path = Field(default=Path("./output"), description="レポート出力先ディレクトリ")

    @field_validator("log_file")
    @classmethod
    def ensure_log_dir(cls, v: Optional[Path]) -> Optional[Path]:
        """
        ログファイルの親ディレクトリが存在しない場合は作成
        """
        if v is not None and not v.parent.exists():
            v.parent.mkdir(parents=True, exist_ok=True)
        return v

    @classmethod
    def load(cls) -> "AppConfig":
        """
        環境変数から設定を読み込む
        .envファイルがある場合は自動的に読み込まれる
        """
        load_dotenv()

        threads = os.getenv("DIVCHECK_THREADS")
        log_file = os.getenv("LOG_FILE")
        config_dict = {
            "log_level": os.getenv("LOG_LEVEL", "INFO"),
            "log_file": Path(log_file) if log_file else None,
            "threads": threads if threads else None,
            "output_dir": Path(os.getenv("DIVCHECK_OUTPUT_DIR", "./output")),
        }

        try:
            return cls(**config_dict)
        except Exception as e:
            error_msg = f"設定エラー: {str(e)}\n"
            error_msg += "LOG_LEVEL / DIVCHECK_THREADS などの環境変数を確認してください。"
            raise ValueError(error_msg) from e


def worker_count(config: Optional[AppConfig] = None) -> int:
    """
    並列ワーカー数を決定する

    DIVCHECK_THREADS が設定されていればそれを上限とする
    """
    available = os.cpu_count() or 1
    if config is None:
        raw = os.getenv("DIVCHECK_THREADS")
        cap = int(raw) if raw and raw.isdigit() and int(raw) > 0 else None
    else:
        cap = config.threads
    return max(1, min(available, cap)) if cap else available
