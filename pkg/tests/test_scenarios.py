import json

import pytest
from pydantic import ValidationError

import config
from main import main
from scenarios import registry
from scenarios.models import ScenarioConfig
from scenarios.protocol import ExitCode, InvalidConfigError, ScenarioError, UnknownScenarioError, exit_code_for
from scenarios.report import build_report, render_report, replay, write_outputs
from stability.errors import ConfigError, NumericalToleranceError, SimulationError


def _write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def _cb_config(**overrides):
    data = {"scenario": "cb-feller", "b": 2.0, "N": 1000, "t": [0.5], "seed": 17, "csv_samples": 10}
    data.update(overrides)
    return data


def test_list_scenarios():
    lines = registry.list_scenarios()
    names = [line.split()[0] for line in lines]
    assert names[0] == "semigroup-validate"
    assert "cox-coupling" in names
    assert len(names) == len(set(names)) == 9
    assert any(line.startswith("dt-levy-probe") and "[probe, non-gating]" in line for line in lines)
    assert lines == registry.list_scenarios()


def test_cli_list(capsys):
    assert main(["--list"]) == 0
    assert "fstable-pp" in capsys.readouterr().out


@pytest.mark.parametrize("name,anchor", [
    ("fstable-rv", "Thm. 2.7"),
    ("das-pp", "Def. 2.9"),
    ("fstable-pp", "Thm. 3.2"),
    ("dt-pp", "Prop. 4.8"),
    ("cox-coupling", "Prop. 4.12"),
])
def test_citations_carry_anchors(name, anchor):
    line = next(line for line in registry.list_scenarios() if line.split()[0] == name)
    assert anchor in line


def test_cli_requires_an_action():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


@pytest.mark.parametrize("bad_seed", ["-1", str(2 ** 64)])
def test_cli_rejects_bad_seed(bad_seed):
    with pytest.raises(SystemExit):
        main(["--list", "--seed", bad_seed])


def test_config_shorthands():
    cfg = ScenarioConfig.model_validate(
        {"scenario": "fstable-rv", "kind": "LinearBirthDeath", "lambda": 1, "alpha": 0.5})
    assert cfg.semigroup.kind == "LinearBirthDeath"
    assert cfg.semigroup.lam == 1.0
    assert (cfg.stable.alpha, cfg.stable.c) == (0.5, 1.0)

    called = ScenarioConfig.model_validate({"scenario": "fstable-rv", "sg": "LinearBirthDeath(1)", "alpha": 0.5})
    assert called.semigroup == cfg.semigroup

    feller = ScenarioConfig.model_validate({"scenario": "cb-feller", "b": 3.0})
    assert feller.feller.b == 3.0


def test_report_dict_round_trip():
    cfg = ScenarioConfig.model_validate(
        {"scenario": "fstable-rv", "kind": "LinearBirthDeath", "lambda": 2, "alpha": 0.5, "out": "somewhere"})
    dumped = cfg.report_dict()
    assert dumped["sg"] == {"kind": "LinearBirthDeath", "lambda": 2.0}
    assert "out" not in dumped and "seed" not in dumped
    assert ScenarioConfig.model_validate(dumped).report_dict() == dumped


@pytest.mark.parametrize("data", [
    {"scenario": "fstable-rv", "schema_version": 2},
    {"scenario": "fstable-rv", "colour": "red"},
    {"scenario": "fstable-rv", "t": [1.0]},
    {"scenario": "fstable-rv", "t": []},
    {"scenario": "fstable-rv", "z_grid": [1.0]},
    {"scenario": "fstable-rv", "seed": -3},
    {"scenario": "fstable-rv", "kind": "PureDeath", "sg": "PureDeath"},
    {"scenario": "fstable-rv", "sg": "Linear Birth"},
])
def test_invalid_configs(data):
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(data)


def test_scaling_alpha_and_require():
    cfg = ScenarioConfig.model_validate({"scenario": "fstable-rv", "alpha": 0.5})
    assert cfg.scaling_alpha is None
    assert cfg.model_copy(update={"corrupt_alpha": 0.15}).scaling_alpha == pytest.approx(0.65)
    with pytest.raises(InvalidConfigError):
        cfg.require("feller")


def test_exit_code_mapping():
    assert exit_code_for(NumericalToleranceError("ode", 1e-3)) is ExitCode.NUMERICAL_ERROR
    assert exit_code_for(SimulationError("overflow", {"alpha": 0.35})) is ExitCode.NUMERICAL_ERROR
    assert exit_code_for(ConfigError("bad")) is ExitCode.CONFIG_ERROR
    assert exit_code_for(UnknownScenarioError("nope")) is ExitCode.UNKNOWN_SCENARIO
    with pytest.raises(RuntimeError):
        exit_code_for(RuntimeError("boom"))

    error = ScenarioError(ExitCode.REPLAY_MISMATCH, "differs", {"fields": ["seed"]})
    assert error.to_dict() == {"code": 4, "message": "differs", "data": {"fields": ["seed"]}}


def test_seed_resolution(monkeypatch):
    cfg = ScenarioConfig.model_validate({"scenario": "cb-feller", "b": 2.0, "seed": 5})
    assert registry.resolve_seed(cfg, 9) == 9
    assert registry.resolve_seed(cfg) == 5
    monkeypatch.setattr(config.settings, "default_seed", 123)
    assert registry.resolve_seed(cfg.model_copy(update={"seed": None})) == 123


def test_semigroup_validate_end_to_end(tmp_path):
    path = _write_config(tmp_path, {"scenario": "semigroup-validate", "kind": "PureDeath", "seed": 1})
    assert main(["--config", str(path), "--out", str(tmp_path / "out")]) == 0

    report = json.loads((tmp_path / "out" / "semigroup-validate-1.json").read_text())
    assert report["passed"] is True
    assert report["seed"] == 1
    assert report["config"]["sg"] == {"kind": "PureDeath"}
    assert [r["name"] for r in report["reports"]] == [
        "semigroup-conditions[PureDeath]", "semigroup-cocycles[PureDeath]",
        "yaglom-pgf[PureDeath]", "transition-pmf[PureDeath]"
    ]
    assert all(r["seed"] == 1 for r in report["reports"])

    raw = (tmp_path / "out" / "semigroup-validate-1-functions.csv").read_bytes()
    assert raw.startswith(b"# scenario=semigroup-validate,# seed=1,")
    assert b"\r\n" in raw


def test_linear_birth_death_call_form_passes(tmp_path):
    path = _write_config(tmp_path, {"scenario": "semigroup-validate", "sg": "LinearBirthDeath(1)", "seed": 2})
    assert main(["--config", str(path), "--out", str(tmp_path)]) == 0


def test_seed_flag_overrides_config(tmp_path):
    path = _write_config(tmp_path, {"scenario": "semigroup-validate", "kind": "PureDeath", "seed": 1})
    assert main(["--config", str(path), "--out", str(tmp_path), "--seed", "99"]) == 0
    assert (tmp_path / "semigroup-validate-99.json").exists()


def test_alpha_level_is_restored(tmp_path):
    before = config.settings.alpha_level
    path = _write_config(tmp_path, {"scenario": "semigroup-validate", "kind": "PureDeath", "alpha_level": 0.05})
    assert main(["--config", str(path), "--out", str(tmp_path)]) == 0
    assert config.settings.alpha_level == before


@pytest.mark.parametrize("data,needle", [
    ({"scenario": "semigroup-validate", "kind": "LinearBirthDeath"}, "lambda"),
    ({"scenario": "semigroup-validate", "kind": "PureDeath", "N": 0}, "Invalid config"),
    ({"scenario": "fstable-rv", "kind": "PureDeath"}, "stable"),
])
def test_config_errors_exit_2(tmp_path, capsys, data, needle):
    path = _write_config(tmp_path, data)
    assert main(["--config", str(path), "--out", str(tmp_path)]) == ExitCode.CONFIG_ERROR.value
    assert needle in capsys.readouterr().err


def test_unknown_scenario_has_its_own_exit_code(tmp_path, capsys):
    path = _write_config(tmp_path, {"scenario": "no-such-thing"})
    assert main(["--config", str(path), "--out", str(tmp_path)]) == ExitCode.UNKNOWN_SCENARIO.value
    assert "Unknown scenario" in capsys.readouterr().err
    assert ExitCode.UNKNOWN_SCENARIO.value != ExitCode.CONFIG_ERROR.value


def test_malformed_json_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["--config", str(path)]) == 2
    assert main(["--config", str(tmp_path / "missing.json")]) == 2


def test_replay(tmp_path):
    path = _write_config(tmp_path, _cb_config())
    main(["--config", str(path), "--out", str(tmp_path)])
    report_path = tmp_path / "cb-feller-17.json"
    assert report_path.exists()
    assert main(["--replay", str(report_path)]) == 0
    assert main(["--replay", str(report_path), "--workers", "2"]) == 0

    stored = json.loads(report_path.read_text())
    tampered_seed = dict(stored, seed=18)
    seed_path = tmp_path / "tampered-seed.json"
    seed_path.write_text(render_report(tampered_seed))
    assert main(["--replay", str(seed_path)]) == ExitCode.REPLAY_MISMATCH.value

    tampered_n = dict(stored, config=dict(stored["config"], N=1001))
    n_path = tmp_path / "tampered-n.json"
    n_path.write_text(render_report(tampered_n))
    assert main(["--replay", str(n_path)]) == ExitCode.REPLAY_MISMATCH.value


def test_replay_mismatch_names_fields(tmp_path):
    cfg, outcome = registry.run(ScenarioConfig.model_validate(_cb_config()))
    outputs = write_outputs(cfg, outcome, tmp_path)
    stored = json.loads(outputs.report_path.read_text())
    stored["reports"][0]["p_value"] = 0.123
    outputs.report_path.write_text(render_report(stored))
    with pytest.raises(ScenarioError) as exc:
        replay(outputs.report_path, registry)
    assert exc.value.code is ExitCode.REPLAY_MISMATCH
    assert exc.value.data["fields"] == ["reports"]
    assert exc.value.data["reports"] == [stored["reports"][0]["name"]]


def test_reports_do_not_depend_on_worker_count(monkeypatch):
    monkeypatch.setattr(config.settings, "block_size", 500)
    cfg = ScenarioConfig.model_validate(_cb_config(N=2000))
    rendered = []
    for workers in (1, 3):
        run_cfg, outcome = registry.run(cfg, workers=workers)
        rendered.append(render_report(build_report(run_cfg, outcome)))
    assert rendered[0] == rendered[1]


def test_cb_feller_reports(tmp_path):
    cfg, outcome = registry.run(ScenarioConfig.model_validate(_cb_config(N=5000, t=[0.3, 0.7])))
    names = [r.name for r in outcome.reports]
    assert names == [
        "feller-transition-laplace", "cb-yaglom", "cb-yaglom-cocycle", "cb-thinning[t=0.3]", "cb-thinning[t=0.7]"
    ]
    by_name = {r.name: r for r in outcome.reports}
    assert by_name["cb-yaglom-cocycle"].passed
    assert by_name["feller-transition-laplace"].statistic < 4.5
    assert by_name["cb-yaglom"].p_value > 1e-4
    assert len(outcome.samples["transitions"][1]) == 10


def test_corrupted_exponent_fails(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "fstable-rv", "kind": "LinearBirthDeath", "lambda": 1, "alpha": 0.5,
        "N": 10_000, "t": [0.5], "corrupt_alpha": 0.15, "seed": 3
    })
    assert main(["--config", str(path), "--out", str(tmp_path)]) == ExitCode.STATISTICAL_FAILURE.value
    report = json.loads((tmp_path / "fstable-rv-3.json").read_text())
    stability = [r for r in report["reports"] if r["name"].startswith("fstable-rv-stability")]
    assert stability[0]["p_value"] < 1e-3


def test_fstable_rv_null(tmp_path):
    cfg, outcome = registry.run(ScenarioConfig.model_validate({
        "scenario": "fstable-rv", "kind": "LinearBirthDeath", "lambda": 1, "alpha": 0.5, "N": 10_000, "seed": 4
    }))
    stability = [r for r in outcome.reports if r.name.startswith("fstable-rv-stability")]
    assert len(stability) == 3
    assert all(r.p_value > 1e-4 for r in stability)
    assert outcome.reports[0].name == "fstable-pgf"
    assert outcome.reports[0].statistic < 4.5


@pytest.mark.slow
def test_fstable_pp_scenario():
    cfg, outcome = registry.run(ScenarioConfig.model_validate({
        "scenario": "fstable-pp", "kind": "LinearBirthDeath", "lambda": 1, "alpha": 0.6,
        "N": 10_000, "t": [0.5], "partition": 2, "seed": 5
    }))
    by_name = {r.name: r for r in outcome.reports}
    assert by_name["fstable-pp-stability[t=0.5]"].p_value > 1e-4
    superposition = by_name["fstable-pp-superposition[m=3]"]
    assert superposition.p_value > 1e-4
    assert superposition.details["weights"] == [0.5, 0.3, 0.2]
    assert by_name["pgfl-forms"].passed
    assert by_name["functional-stability"].passed
    assert by_name["fstable-pp-pgfl"].statistic < 4.5


@pytest.mark.slow
def test_levy_probe_scenario():
    cfg, outcome = registry.run(ScenarioConfig.model_validate({
        "scenario": "dt-levy-probe", "alpha": 0.5, "epsilon": 0.1, "N": 10_000, "t": [0.5], "partition": 2, "seed": 6
    }))
    assert [r.name for r in outcome.reports] == ["levy-radial-law"]
    assert outcome.reports[0].p_value > 1e-4
    assert len(outcome.probes) == 1
    assert outcome.probes[0].details["eps"] == 0.1
    assert outcome.probes[0].details["truncated_mass"] == pytest.approx(0.5 * 0.1 ** 0.5 / 0.5)


def test_levy_probe_rejects_alpha_one():
    cfg = ScenarioConfig.model_validate({"scenario": "dt-levy-probe", "alpha": 1.0, "N": 10_000})
    with pytest.raises(ConfigError):
        registry.run(cfg)


@pytest.mark.slow
def test_das_pp_superposition_detects_wrong_exponent():
    cfg, outcome = registry.run(ScenarioConfig.model_validate({
        "scenario": "das-pp", "alpha": 0.5, "c": 2.0, "N": 10_000, "t": [0.5], "partition": 2,
        "corrupt_alpha": 0.3, "seed": 8
    }))
    by_name = {r.name: r for r in outcome.reports}
    assert by_name["das-pp-superposition[m=3]"].p_value < 1e-3
    assert by_name["das-pp-superposition[m=3]"].details["scaling_alpha"] == pytest.approx(0.8)
