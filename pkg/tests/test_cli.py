import json

import pytest

from mvdsim.cli import main
from mvdsim.config import ConfigError, resolve
from mvdsim.experiments import run


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


GW_CONFIG = """
experiment = "gw-oracle"
seed = 1

[numerics]
K = 100000
"""

CLASSIFY_TEMPLATE = """
experiment = "classify"
seed = 1

[scenario]
dimension = 1
domain = "full"
p = {p}
A = {{ kind = "power", exponent = 2.8 }}
alpha = {{ kind = "constant", value = 1.0 }}
beta = {{ kind = "constant", value = 0.0 }}
"""

MC_CONFIG = """
experiment = "particle-mc"
seed = 42

[scenario]
dimension = 1
p = 2.0
A = { kind = "constant", value = 0.5 }
alpha = { kind = "constant", value = 0.5 }
beta = { kind = "constant", value = 0.0 }

[numerics]
n = 50
replicas = 20
t_end = 0.2
dt = 0.002
"""


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="fooo"):
            resolve({"experiment": "gw-oracle", "fooo": 1})

    def test_unknown_numerics_key(self):
        with pytest.raises(ConfigError, match="numerics.bogus"):
            resolve({"experiment": "gw-oracle", "numerics": {"bogus": 2}})

    def test_unknown_scenario_key(self):
        with pytest.raises(ConfigError, match="scenario.alpa"):
            resolve({"experiment": "classify",
                     "scenario": {"dimension": 3, "A": 1.0, "alpha": 1.0,
                                  "beta": 0.0, "alpa": 1.0}})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            resolve({"experiment": "frobnicate"})

    def test_missing_scenario(self):
        with pytest.raises(ConfigError, match="scenario"):
            resolve({"experiment": "classify"})

    def test_bad_coefficient_kind(self):
        with pytest.raises(ConfigError, match="scenario.A.kind"):
            resolve({"experiment": "classify",
                     "scenario": {"dimension": 3,
                                  "A": {"kind": "quadratic"},
                                  "alpha": 1.0, "beta": 0.0}})

    def test_defaults_filled(self):
        cfg = resolve({"experiment": "gw-oracle"})
        assert cfg["numerics"]["K"] == 100_000
        assert cfg["seed"] == 12345


class TestCLI:
    def test_gw_oracle_run(self, tmp_path):
        cfg = write(tmp_path, "gw.toml", GW_CONFIG)
        code = main(["--config", cfg, "--output", str(tmp_path / "out")])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert 1.99 <= summary["outputs"]["K_times_s_K"] <= 2.01
        assert (tmp_path / "out" / "results.csv").exists()

    def test_p_flip_pair_opposite_status(self, tmp_path):
        statuses = {}
        for p in (1.5, 2.0):
            cfg = write(tmp_path, f"c{p}.toml", CLASSIFY_TEMPLATE.format(p=p))
            out = tmp_path / f"out{p}"
            assert main(["--config", cfg, "--output", str(out)]) == 0
            summary = json.loads((out / "summary.json").read_text())
            statuses[p] = summary["outputs"]["status"]
        assert {statuses[1.5], statuses[2.0]} == {"Fails", "Holds"}

    def test_malformed_key_exits_1(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.toml",
                    GW_CONFIG + "\n[numerics2]\nx = 1\n")
        code = main(["--config", cfg, "--output", str(tmp_path / "o")])
        assert code == 1
        assert "numerics2" in capsys.readouterr().err

    def test_unknown_verdict_exits_2(self, tmp_path):
        cfg = write(tmp_path, "u.toml", """
experiment = "classify"
[scenario]
dimension = 3
p = 2.0
A = { kind = "power", exponent = 3.0 }
alpha = { kind = "constant", value = 1.0 }
beta = { kind = "constant", value = -5.0 }
""")
        assert main(["--config", cfg, "--output", str(tmp_path / "o")]) == 2

    def test_seed_override_and_reproducibility(self, tmp_path):
        cfg = write(tmp_path, "mc.toml", MC_CONFIG)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["--config", cfg, "--output", str(out)]) == 0
            outs.append((out / "results.csv").read_bytes())
        assert outs[0] == outs[1]            # identical bytes, same seed
        out_c = tmp_path / "c"
        assert main(["--config", cfg, "--output", str(out_c),
                     "--seed", "777"]) == 0
        assert (out_c / "results.csv").read_bytes() != outs[0]

    def test_summary_round_trips(self, tmp_path):
        cfg = write(tmp_path, "mc.toml", MC_CONFIG)
        out1 = tmp_path / "r1"
        assert main(["--config", cfg, "--output", str(out1)]) == 0
        summary = json.loads((out1 / "summary.json").read_text())
        echo = write(tmp_path, "echo.json", json.dumps(summary["config"]))
        out2 = tmp_path / "r2"
        assert main(["--config", echo, "--output", str(out2)]) == 0
        assert (out1 / "results.csv").read_bytes() == \
            (out2 / "results.csv").read_bytes()

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MVDSIM_OUTPUT_ROOT", str(tmp_path / "root"))
        monkeypatch.chdir(tmp_path)
        cfg = write(tmp_path, "gw.toml", GW_CONFIG)
        assert main(["--config", cfg]) == 0
        assert (tmp_path / "root" / "gw-oracle" / "summary.json").exists()

    def test_json_format(self, tmp_path):
        cfg = write(tmp_path, "gw.toml", GW_CONFIG)
        out = tmp_path / "o"
        assert main(["--config", cfg, "--output", str(out),
                     "--format", "json"]) == 0
        rows = json.loads((out / "results.json").read_text())
        assert isinstance(rows, list) and rows


class TestExperiments:
    def test_explosion_csv_columns(self, tmp_path):
        cfg = {"experiment": "explosion", "seed": 0,
               "scenario": {"dimension": 3, "p": 2.0,
                            "A": {"kind": "power", "exponent": 3.0},
                            "alpha": 1.0, "beta": 0.0},
               "numerics": {"truncation_count": 12}}
        res = run(cfg, output_dir=tmp_path / "exp")
        assert res.exit_code == 0
        header = (tmp_path / "exp" / "results.csv").read_text().splitlines()[0]
        assert header == "r,R,g"
        assert res.outputs["outputs"]["explosive"] is True

    def test_residual_check_writes_json(self, tmp_path):
        cfg = {"experiment": "residual-check", "seed": 0,
               "numerics": {"kind": "stationary_W",
                            "params": {"kappa": 1.0, "p": 2.0, "d": 3}}}
        res = run(cfg, output_dir=tmp_path / "res")
        assert res.exit_code == 0
        report = json.loads((tmp_path / "res" / "residual.json").read_text())
        assert report["max_abs_residual"] < 1e-12

    def test_empty_bundle(self, tmp_path):
        cfg = {"experiment": "compare-engines", "seed": 0,
               "bundle": {"fixtures": []}}
        res = run(cfg, output_dir=tmp_path / "cmp")
        assert res.exit_code == 0
        assert res.outputs["outputs"]["n_scenarios"] == 0

    def test_unknown_fixture_name(self):
        cfg = {"experiment": "compare-engines",
               "bundle": {"fixtures": ["no-such-fixture"]}}
        with pytest.raises(ConfigError, match="no-such-fixture"):
            run(cfg)

    def test_classify_bundle_subset(self, tmp_path):
        cfg = {"experiment": "compare-engines", "seed": 0,
               "bundle": {"fixtures": ["singular-beta-fails",
                                       "singular-beta-holds"]}}
        res = run(cfg, output_dir=tmp_path / "cmp2")
        assert res.exit_code == 0
        verdicts = res.outputs["outputs"]["verdicts"]
        assert verdicts["singular-beta-fails"]["classifier"] == "Fails"
        assert verdicts["singular-beta-holds"]["classifier"] == "Holds"

    def test_float_formatting_17_digits(self, tmp_path):
        from mvdsim.experiments import fmt_float
        x = 0.1234567890123456789
        s = fmt_float(x)
        assert float(s) == x

    def test_fixture_table_round_trip(self, tmp_path):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        from mvdsim.config import scenario_from_table
        from mvdsim.csp import classify
        from mvdsim.fixtures import builtin_fixtures, write_fixture_table
        path = tmp_path / "fixtures.toml"
        write_fixture_table(path)
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        assert len(data["fixture"]) == len(builtin_fixtures())
        for row in data["fixture"]:
            scenario = scenario_from_table(row["scenario"])
            verdict = classify(scenario)
            assert verdict.status == row["expected_status"]

    def test_maximal_solution_grid_artifacts(self, tmp_path):
        cfg = {"experiment": "maximal-solution", "seed": 0,
               "scenario": {"dimension": 3, "p": 2.0, "domain": "punctured",
                            "inner": 0.01,
                            "A": {"kind": "constant", "value": 0.5},
                            "alpha": 1.0, "beta": 0.0},
               "numerics": {"R_sweep": [15.0], "B_sweep": [100.0, 1000.0],
                            "eps_sweep": [0.01], "stabilize_tol": 0.9}}
        res = run(cfg, output_dir=tmp_path / "ms")
        assert (tmp_path / "ms" / "grid.csv").exists()
        key = res.outputs["outputs"]["grid_cache_key"]
        assert (tmp_path / "ms" / "cache" / f"{key}.npz").exists()
