"""
発散条件による安定性検証 コマンドラインアプリケーション

使い方:
    python app.py check --scenario example1 --theorem 3 --case 1 --alpha 2 --json out/example1.json
    python app.py simulate --scenario example5 --csv out/traj.csv --verdicts out/verdicts.csv
    python app.py report out/example1.json
    python app.py scenarios [--export example4]

終了コード:
    0: 全ての条件が成立 / consistent
    1: どれかが violated
    2: 残りに inconclusive がある
    3: 設定・入出力のエラー
"""
import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# プロジェクトルートをパスに追加
sys.path.insert(0, str(Path(__file__).parent))

from pydantic import ValidationError

from core.config import DEFAULTS, AppConfig, NumericDefaults
from core.logging import get_logger, log_error_with_context, run_context, setup_logging
from core.output import atomic_write_text
from dynamics import runconfig, scenarios
from dynamics.expr import EvaluationDomainError, ExpressionSyntaxError
from dynamics.fields import SingularPointError
from dynamics.integrals import SamplingError
from dynamics.linalg import AsymmetricMatrixError, EigenConvergenceError
from dynamics.ode import SweepResult, cross_validate
from dynamics.report import ReportDocument, exit_code, render_summary
from dynamics.results import CheckReport, Verdict
from dynamics.runner import parse_check, run_check, run_sweep
from dynamics.scenarios import Scenario, UnknownScenarioError


EXIT_CONFIG_ERROR = 3

logger = get_logger(__name__)


class UsageError(ValueError):
    """コマンドライン引数の組み合わせの誤り"""


# 設定・入出力の問題として終了コード 3 にする例外
_CONFIG_ERRORS = (
    runconfig.ConfigError,
    UnknownScenarioError,
    ExpressionSyntaxError,
    EvaluationDomainError,
    AsymmetricMatrixError,
    ValidationError,
    UsageError,
    OSError,
    ValueError,
)

# 数値的に判定できなかった条件として inconclusive にする例外
_NUMERICAL_ERRORS = (SamplingError, EigenConvergenceError, SingularPointError)


def _output_path(config: AppConfig, path: Path) -> Path:
    """相対パスは DIVCHECK_OUTPUT_DIR の下に置く"""
    path = Path(path)
    return path if path.is_absolute() else config.output_dir / path


def _input_path(config: AppConfig, path: Path) -> Path:
    """相対パスはカレントディレクトリ、なければ出力先ディレクトリで探す"""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    return config.output_dir / path


def _parse_params(items: Optional[Sequence[str]]) -> Dict[str, str]:
    params = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"--param expects NAME=EXPR, got {item!r}")
        params[name.strip()] = value.strip()
    return params


def load_scenario(args: argparse.Namespace):
    """
    --scenario（組み込み）か --config（TOML）からシナリオと既定値を用意する

    Returns:
        (Scenario, NumericDefaults, 設定ファイルの requests)
    """
    if bool(args.scenario) == bool(args.config):
        raise UsageError("give exactly one of --scenario or --config")
    if args.scenario:
        scenario = scenarios.builtin(args.scenario)
        defaults, requests = DEFAULTS, []
    else:
        config = runconfig.load(args.config)
        scenario = config.to_scenario()
        defaults, requests = config.numeric_defaults(), list(config.checks.requests)

    params = _parse_params(getattr(args, "param", None))
    if params:
        scenario = scenario.with_params(params)
    if getattr(args, "alpha", None) is not None:
        scenario = scenario.with_alpha(args.alpha)
    if getattr(args, "control", None):
        scenario = scenario.with_control(args.control)
    return scenario, defaults, requests


def _requested_checks(args: argparse.Namespace, scenario: Scenario, configured: List[str]) -> List[str]:
    checks = list(args.check or [])
    if args.theorem is not None or args.case is not None:
        if args.theorem is None or args.case is None:
            raise UsageError("--theorem and --case must be given together")
        checks.append(f"th{args.theorem}-case{args.case}")
    if not checks:
        checks = configured
    if not checks:
        # 期待判定表に現れる条件を順に実行する
        checks = list(dict.fromkeys(e.check for e in scenario.expected))
    if not checks:
        raise UsageError(f"no checks requested for scenario {scenario.name}")
    return [parse_check(c) for c in checks]


def _cross_validation_note(scenario: Scenario, report: CheckReport, defaults: NumericDefaults) -> Optional[str]:
    if scenario.simulation is None:
        return None
    results = run_sweep(scenario, defaults=defaults)
    outcome = cross_validate(report, results, scenario.certificate_field(), scenario.domain())
    if not outcome.applicable:
        return None
    if outcome.agrees:
        return f"simulation agrees: {outcome.n_checked} trajectories inside S < {outcome.level:.4g} converged"
    return (
        f"simulation disagrees: {len(outcome.failures)} of {outcome.n_checked} trajectories inside "
        f"S < {outcome.level:.4g} did not converge"
    )


def cmd_check(args: argparse.Namespace, config: AppConfig) -> int:
    """条件を実行して要約を表示し、必要なら JSON レポートを書く"""
    scenario, defaults, configured = load_scenario(args)
    checks = _requested_checks(args, scenario, configured)
    seed = scenario.sampling.seed if args.seed is None else args.seed

    document = ReportDocument(
        scenario=scenario.name,
        alpha=scenario.alpha,
        seed=seed,
        control=scenario.control_name,
        parameters=dict(scenario.params),
        bounds={k: v for k, v in scenario.bounds},
    )
    with run_context(scenario.name, seed):
        for check in checks:
            try:
                report = run_check(scenario, check, seed=seed, defaults=defaults, integral_samples=args.samples)
            except _NUMERICAL_ERRORS as e:
                logger.warning(f"{check}: {type(e).__name__}: {e}")
                report = CheckReport(condition=check, verdict=Verdict.INCONCLUSIVE, seed=seed, notes=[str(e)])
            if args.cross_validate and isinstance(report, CheckReport) and check.startswith(("th3", "th4")):
                note = _cross_validation_note(scenario, report, defaults)
                if note:
                    report.notes.append(note)
            logger.info(f"{check}: {report.verdict.value}")
            document.add(report)

        if args.json:
            path = atomic_write_text(_output_path(config, args.json), document.to_json())
            logger.info(f"Report written to {path}")
    sys.stdout.write(render_summary(document))
    return exit_code(document.verdicts())


def trajectories_csv(results: Sequence[SweepResult], dimension: int) -> str:
    """軌道の CSV（trajectory_id, t, x1..xn）"""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["trajectory_id", "t"] + [f"x{i + 1}" for i in range(dimension)])
    for index, result in enumerate(results):
        traj = result.trajectory
        for t, state in zip(traj.times, traj.states):
            writer.writerow([index, repr(float(t))] + [repr(float(v)) for v in state])
    return buffer.getvalue()


def verdicts_csv(results: Sequence[SweepResult], dimension: int) -> str:
    """収束判定の CSV（trajectory_id, x0_1..x0_n, class, final_norm）"""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["trajectory_id"] + [f"x0_{i + 1}" for i in range(dimension)] + ["class", "final_norm"])
    for index, result in enumerate(results):
        writer.writerow(
            [index]
            + [repr(float(v)) for v in result.x0]
            + [result.verdict.cls.value, repr(float(result.verdict.final_norm))]
        )
    return buffer.getvalue()


def cmd_simulate(args: argparse.Namespace, config: AppConfig) -> int:
    """初期値格子を積分し、軌道と収束判定を CSV に書く"""
    scenario, defaults, _ = load_scenario(args)
    with run_context(scenario.name):
        results = run_sweep(scenario, tf=args.tf, per_axis=args.grid, defaults=defaults)

    table = verdicts_csv(results, scenario.dimension)
    if args.csv:
        atomic_write_text(_output_path(config, args.csv), trajectories_csv(results, scenario.dimension))
        logger.info(f"Trajectories written to {args.csv}")
    if args.verdicts:
        atomic_write_text(_output_path(config, args.verdicts), table)
        logger.info(f"Verdicts written to {args.verdicts}")
    else:
        sys.stdout.write(table)
    return 0


def cmd_report(args: argparse.Namespace, config: AppConfig) -> int:
    """JSON レポートを読み込んで要約を表示する"""
    document = ReportDocument.load(_input_path(config, args.path))
    sys.stdout.write(render_summary(document))
    return exit_code(document.verdicts())


def cmd_scenarios(args: argparse.Namespace, config: AppConfig) -> int:
    """組み込みシナリオの一覧、または TOML への書き出し"""
    if args.export:
        scenario = scenarios.builtin(args.export)
        text = runconfig.export_scenario(scenario)
        if args.out:
            atomic_write_text(_output_path(config, args.out), text)
            logger.info(f"Scenario {scenario.name} exported to {args.out}")
        else:
            sys.stdout.write(text)
        return 0

    for name in scenarios.names():
        scenario = scenarios.builtin(name)
        sys.stdout.write(f"{name:<10} n={scenario.dimension}  {scenario.description}\n")
    return 0


class _Parser(argparse.ArgumentParser):
    """引数の誤りを終了コード 2 ではなく UsageError にする（サブコマンドにも継承される）"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_scenario_options(parser: argparse.ArgumentParser):
    source = parser.add_argument_group("scenario")
    source.add_argument("--scenario", help="組み込みシナリオ名 (example1..example5)")
    source.add_argument("--config", type=Path, help="TOML 実行設定のパス")
    source.add_argument("--param", action="append", metavar="NAME=EXPR", help="パラメータ関数の上書き")
    source.add_argument("--alpha", type=float, help="証明書の指数 α")
    source.add_argument("--control", help="制御則の名前 (example5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="divcheck",
        description="Divergence-based stability checks for nonautonomous systems (sampled evidence, not proofs)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="十分条件・必要条件・線形条件を検証する")
    _add_scenario_options(check)
    check.add_argument("--theorem", type=int, choices=(1, 2, 3, 4))
    check.add_argument("--case", type=int, choices=(1, 2, 3))
    check.add_argument("--check", action="append", help="条件名 (th3-case1, linear, positivity など)")
    check.add_argument("--seed", type=int, help="乱数シード")
    check.add_argument("--samples", type=int, help="積分条件のサンプル数")
    check.add_argument("--cross-validate", action="store_true", help="厳密に成立した条件をシミュレーションと突き合わせる")
    check.add_argument("--json", type=Path, help="JSON レポートの出力先")
    check.set_defaults(handler=cmd_check)

    simulate = sub.add_parser("simulate", help="軌道をシミュレーションする")
    _add_scenario_options(simulate)
    simulate.add_argument("--tf", type=float, help="終了時刻")
    simulate.add_argument("--grid", type=int, help="初期値格子の1軸あたり点数 (0 で格子なし)")
    simulate.add_argument("--csv", type=Path, help="軌道 CSV の出力先")
    simulate.add_argument("--verdicts", type=Path, help="収束判定 CSV の出力先（省略時は標準出力）")
    simulate.set_defaults(handler=cmd_simulate)

    report = sub.add_parser("report", help="JSON レポートの要約を表示する")
    report.add_argument("path", type=Path)
    report.set_defaults(handler=cmd_report)

    listing = sub.add_parser("scenarios", help="組み込みシナリオを一覧・書き出しする")
    listing.add_argument("--export", metavar="NAME", help="TOML として書き出すシナリオ")
    listing.add_argument("--out", type=Path, help="書き出し先（省略時は標準出力）")
    listing.set_defaults(handler=cmd_scenarios)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    メイン関数

    Returns:
        終了コード
    """
    try:
        args = build_parser().parse_args(argv)
        config = AppConfig.load()
    except ValueError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_CONFIG_ERROR
    setup_logging(config.log_level, config.log_file)

    try:
        return args.handler(args, config)
    except _CONFIG_ERRORS + _NUMERICAL_ERRORS as e:
        log_error_with_context(e, {"command": args.command})
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
