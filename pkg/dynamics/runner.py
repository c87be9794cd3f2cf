"""
チェック実行モジュール
"th3-case1" のような条件名をシナリオに対して実行する
"""
from __future__ import annotations

import re
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from core.config import DEFAULTS, NumericDefaults
from dynamics.conditions import check_control, check_linear, check_sufficient
from dynamics.fields import positivity_check
from dynamics.integrals import NecessaryReport, check_necessary
from dynamics.ode import SweepResult, initial_grid, sweep
from dynamics.results import CheckReport
from dynamics.scenarios import Scenario


CHECK_PATTERN = re.compile(r"th([1-4])-case([1-3])|linear|positivity")

Report = Union[CheckReport, NecessaryReport]


def parse_check(name: str) -> str:
    """
    条件名を検証する（th1/th2 は case 1-2、th3/th4 は case 1-3）

    Raises:
        ValueError: 未知の条件名
    """
    match = CHECK_PATTERN.fullmatch(name)
    if match is None or (match.group(1) in ("1", "2") and match.group(2) == "3"):
        raise ValueError(f"unknown check {name!r}: use th1-case1..2, th2-case1..2, th3-case1..3, th4-case1..3, linear, positivity")
    return name


def run_check(
    scenario: Scenario,
    check: str,
    seed: Optional[int] = None,
    defaults: NumericDefaults = DEFAULTS,
    levels: Optional[Sequence[float]] = None,
    integral_samples: Optional[int] = None,
) -> Report:
    """
    シナリオに対して1つの条件を実行する

    Args:
        scenario: シナリオ
        check: 条件名
        seed: 乱数シード（None ならシナリオの設定）
        levels: 積分条件のレベル C（None ならシナリオの設定）
        integral_samples: 積分のサンプル数（None ならシナリオの設定）
    """
    parse_check(check)
    plan = scenario.plan(seed)
    logger.info(f"Running {check} on {scenario.name} (alpha={scenario.alpha}, seed={plan.seed})")

    if check == "positivity":
        return positivity_check(scenario.certificate_field(), scenario.domain(), plan)

    if check == "linear":
        if scenario.linear is None:
            raise ValueError(f"scenario {scenario.name} has no linear-system data")
        setup = scenario.linear
        return check_linear(
            [[scenario.render(e) for e in row] for row in setup.a],
            [[scenario.render(e) for e in row] for row in setup.p],
            scenario.alpha,
            setup.t_samples,
            defaults,
        )

    theorem, case = int(check[2]), int(check[-1])
    s_field = scenario.certificate_field()
    if theorem == 3:
        return check_sufficient(case, scenario.vector_field(), s_field, scenario.domain(), plan, defaults)
    if theorem == 4:
        return check_control(case, scenario.controlled_system(), s_field, scenario.domain(), plan, defaults)

    setup = scenario.integral
    if setup is None:
        raise ValueError(f"scenario {scenario.name} has no integral setup")
    return check_necessary(
        theorem,
        case,
        scenario.vector_field(),
        s_field,
        scenario.weight_spec(),
        list(levels) if levels is not None else list(setup.levels),
        setup.box,
        setup.t_range,
        n=integral_samples or setup.samples,
        seed=plan.seed,
        epsilon=setup.epsilon,
        defaults=defaults,
    )


def run_sweep(
    scenario: Scenario,
    tf: Optional[float] = None,
    per_axis: Optional[int] = None,
    defaults: NumericDefaults = DEFAULTS,
) -> Sequence[SweepResult]:
    """シナリオの初期値格子（と追加の初期値）を積分・分類する"""
    setup = scenario.simulation
    if setup is None:
        raise ValueError(f"scenario {scenario.name} has no simulation setup")
    grid = initial_grid(setup.box, setup.per_axis if per_axis is None else per_axis)
    extra = np.array(setup.initial_states, dtype=float).reshape(-1, scenario.dimension)
    starts = np.concatenate([grid, extra], axis=0)
    return sweep(scenario.vector_field(), starts, tf or setup.tf, setup.integrator(), defaults=defaults)
