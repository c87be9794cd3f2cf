"""
実行設定（TOML）の読み込みと書き出しのテスト
"""
import pytest

from dynamics.runconfig import ConfigError, RunConfig, export_scenario, load, loads
from dynamics.scenarios import builtin, names


MINIMAL = """
name = "decay"

[system]
dimension = 2
components = ["-x1", "-2*x2"]

[certificate]
S = "(x1^2 + x2^2)^{alpha}"
alpha = 2.0

[domain]
box = [[-2.0, 2.0], [-2.0, 2.0]]
grid_per_axis = 5
samples = 100

[checks]
requests = ["th3-case3", "positivity"]
"""


class TestLoading:
    """設定の読み込みのテスト"""

    def test_minimal_config(self):
        """最小限の設定のテスト"""
        config = loads(MINIMAL)
        scenario = config.to_scenario()
        assert scenario.name == "decay"
        assert scenario.alpha == 2.0
        assert scenario.sampling.grid_per_axis == 5
        assert scenario.sampling.random_samples == 100
        assert config.checks.requests == ["th3-case3", "positivity"]
        assert scenario.vector_field().value([1.0, 1.0], 0.0).tolist() == [-1.0, -2.0]

    def test_defaults_override(self):
        """[defaults] による既定値の上書きテスト"""
        config = loads(MINIMAL + "\n[defaults]\ndelta_strict = 1e-6\ngrid_t = 3\n")
        defaults = config.numeric_defaults()
        assert defaults.delta_strict == 1e-6
        assert defaults.grid_t == 3
        assert defaults.epsilon == 0.05

    def test_controlled_system(self):
        """制御系の設定のテスト"""
        text = """
[system]
dimension = 2
drift = ["x2", "-x1"]
input_matrix = [["0"], ["1"]]
control = ["-x2"]
control_name = "damping"

[certificate]
S = "x1^2 + x2^2"

[domain]
box = [[-1.0, 1.0], [-1.0, 1.0]]
"""
        scenario = loads(text).to_scenario()
        assert scenario.is_controlled
        assert scenario.vector_field().value([1.0, 2.0], 0.0).tolist() == [2.0, -3.0]

    def test_load_from_file(self, tmp_path):
        """ファイルからの読み込みテスト"""
        path = tmp_path / "run.toml"
        path.write_text(MINIMAL, encoding="utf-8")
        assert load(path).name == "decay"

    def test_missing_file(self, tmp_path):
        """存在しないファイルのテスト"""
        with pytest.raises(ConfigError):
            load(tmp_path / "missing.toml")


class TestValidation:
    """設定の検証エラーのテスト"""

    @pytest.mark.parametrize(
        "text",
        [
            "this is = = not toml",
            MINIMAL + "\nunknown_key = 1\n",
            MINIMAL.replace("grid_per_axis = 5", "grid_per_axis = 5\ncolour = 'red'"),
            MINIMAL.replace('requests = ["th3-case3", "positivity"]', 'requests = ["th5-case1"]'),
            MINIMAL.replace('requests = ["th3-case3", "positivity"]', 'requests = ["th1-case3"]'),
            MINIMAL.replace("box = [[-2.0, 2.0], [-2.0, 2.0]]", "box = [[-2.0, 2.0]]"),
            MINIMAL.replace("alpha = 2.0", "alpha = -1.0"),
            MINIMAL.replace("alpha = 2.0", "alpha = 2.0\nweight = 'mu'"),
            MINIMAL.replace('components = ["-x1", "-2*x2"]', 'components = ["-x1"]'),
            MINIMAL.replace("dimension = 2", 'dimension = 2\ndrift = ["x2", "-x1"]'),
            MINIMAL + "\n[defaults]\nno_such_default = 1\n",
            MINIMAL.replace("[domain]", "[simulate]\nbox = [[-1.0, 1.0], [-1.0, 1.0]]\nmethod = 'euler'\n\n[domain]"),
        ],
        ids=[
            "bad-toml",
            "unknown-top-level-key",
            "unknown-section-key",
            "unknown-check",
            "necessary-case3",
            "box-dimension",
            "negative-alpha",
            "mu-without-expression",
            "component-count",
            "both-system-forms",
            "unknown-default",
            "unknown-method",
        ],
    )
    def test_rejected(self, text):
        """不正な設定を拒否するテスト"""
        with pytest.raises(ConfigError):
            loads(text)

    def test_expression_errors_surface_on_conversion(self):
        """式の構文エラーが変換時に ConfigError になるテスト"""
        config = loads(MINIMAL.replace('"-2*x2"', '"-2*x2 +"'))
        with pytest.raises(ConfigError):
            config.to_scenario()

    def test_unknown_template_parameter(self):
        """テンプレートの未知パラメータのテスト"""
        config = loads(MINIMAL.replace('"-x1"', '"-({k})*x1"'))
        with pytest.raises(ConfigError):
            config.to_scenario()

    def test_bad_exclusion(self):
        """不正な除外述語のテスト"""
        config = loads(MINIMAL.replace("grid_per_axis = 5", "grid_per_axis = 5\nexclusions = ['x7=0']"))
        with pytest.raises(ConfigError):
            config.to_scenario()


class TestExport:
    """シナリオの書き出しのテスト"""

    @pytest.mark.parametrize("name", names())
    def test_builtin_round_trip(self, name):
        """組み込みシナリオを書き出して読み直すと同じになるテスト"""
        scenario = builtin(name)
        assert loads(export_scenario(scenario)).to_scenario() == scenario

    def test_requests_are_exported(self):
        """実行する条件が書き出されるテスト"""
        text = export_scenario(builtin("example4"), ["linear", "th3-case3"])
        assert loads(text).checks.requests == ["linear", "th3-case3"]

    def test_from_scenario_model(self):
        """from_scenario がモデルを返すテスト"""
        config = RunConfig.from_scenario(builtin("example5"))
        assert config.system.control_name == "cubic"
        assert set(config.system.controls) == {"open_loop", "cubic", "cubic_cancel"}
        assert config.linear is None
