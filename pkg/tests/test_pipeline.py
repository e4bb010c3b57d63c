"""
End-to-end tests for the pipeline and the command-line interface.
"""
import json
import logging

import pandas as pd
import pytest

from attestation_forecast.cli import (
    build_parser,
    build_run_config,
    load_config_file,
    main,
    parse_config_text,
    render_default_config,
)
from attestation_forecast.errors import ConfigError
from attestation_forecast.models import (
    BaselineComparison,
    Frequency,
    GrangerResult,
    PanelFit,
    RunConfig,
    SimTruth,
)
from attestation_forecast.pipeline import Pipeline, feasible_k_max
from attestation_forecast.preprocess import aggregate_weekly
from attestation_forecast.storage import compute_sha256, load_json_artifact


def _input_flags(paths) -> list:
    return [
        "--attestations", str(paths["attestations"]),
        "--census", str(paths["census"]),
        "--zipmap", str(paths["zipmap"]),
    ]


def test_parse_config_text():
    """Test flat key = value parsing."""
    text = "# comment\n\nk_max = 9\nfixed_k =\nfrequency=weekly\n"
    assert parse_config_text(text) == {"k_max": "9", "fixed_k": None, "frequency": "weekly"}

    with pytest.raises(ConfigError, match="unknown setting"):
        parse_config_text("kmax = 3")
    with pytest.raises(ConfigError, match="set twice"):
        parse_config_text("k_max = 3\nk_max = 4")
    with pytest.raises(ConfigError, match="expected"):
        parse_config_text("just words")


def test_flags_override_config_file(tmp_path):
    """Test precedence: defaults < config file < flags."""
    config = tmp_path / "run.cfg"
    config.write_text("k_max = 9\nma_window = 3\nholdout_len = 5\n")
    args = build_parser().parse_args(["fit", "--config", str(config), "--k-max", "5", "--smooth-target"])
    cfg = build_run_config(args)

    assert cfg.k_max == 5
    assert cfg.ma_window == 3
    assert cfg.holdout_len == 5
    assert cfg.smooth_target is True
    assert cfg.horizon == 7


def test_invalid_settings_are_config_errors(tmp_path, capsys):
    """Out-of-range values and missing config files exit with code 2."""
    args = build_parser().parse_args(["fit", "--ci-level", "1.5"])
    with pytest.raises(ConfigError):
        build_run_config(args)

    missing = tmp_path / "absent.cfg"
    assert main(["fit", "--config", str(missing)]) == 2
    assert "code=config" in capsys.readouterr().err


def test_generated_config_parses_back_to_defaults(tmp_path):
    """--generate-config writes every setting at its default."""
    path = tmp_path / "defaults.cfg"
    assert main(["--generate-config", str(path)]) == 0

    values = load_config_file(str(path))
    assert set(values) == set(RunConfig.model_fields)
    assert RunConfig(**{k: v for k, v in values.items() if v is not None}) == RunConfig()
    assert path.read_text() == render_default_config()


def test_feasible_k_max():
    """Cap K so both estimation and the fixed-T moments are defined."""
    assert feasible_k_max(16, 14) == 2
    assert feasible_k_max(200, 14) == 14
    assert feasible_k_max(8, 14) == 0


def test_simulate_then_run_all(tmp_path):
    """Test the full chain from simulated inputs to evaluation."""
    data, out = tmp_path / "data", tmp_path / "out"
    assert main(["simulate", "--seed", "11", "--n-units", "4", "--n-days", "120", "--output-dir", str(data)]) == 0
    assert load_json_artifact(data / "truth.json", SimTruth, kind="sim_truth").seed == 11

    paths = {name: data / f"{name}.csv" for name in ("attestations", "census", "zipmap")}
    code = main(["run-all", *_input_flags(paths), "--output-dir", str(out), "--k-max", "10",
                 "--rolling-origin", "--plot-data"])
    assert code == 0

    for name in (
        "panel.csv", "lag_curve.csv", "fit.json", "coefficients.csv", "doubling_effects.csv",
        "granger.json", "granger.txt", "forecast.json", "forecast.csv", "forecast_network.csv",
        "forecast_rolling.csv", "forecast_rolling_network.csv",
        "plot_data.csv", "description.json", "evaluation.json", "table.txt", "manifest.json",
    ):
        assert (out / name).exists(), name

    panel_fit = load_json_artifact(out / "fit.json", PanelFit, kind="panel_fit")
    assert [score.K for score in panel_fit.bic_curve] == list(range(1, 11))
    granger = load_json_artifact(out / "granger.json", GrangerResult, kind="granger")
    assert granger.N == 4
    comparison = load_json_artifact(out / "evaluation.json", BaselineComparison, kind="evaluation")
    assert comparison.model.horizon == 7
    assert "Total network" in (out / "table.txt").read_text()

    per_unit = pd.read_csv(out / "forecast.csv")
    assert list(per_unit.columns) == ["unit_id", "date", "predicted_census"]
    assert sorted(per_unit["unit_id"].unique()) == ["H1", "H2", "H3", "H4"]
    assert len(per_unit) == 4 * 7
    network = pd.read_csv(out / "forecast_network.csv")
    assert list(network.columns) == ["date", "predicted_census"]
    totals = per_unit.groupby("date")["predicted_census"].sum()
    assert totals.to_numpy() == pytest.approx(network["predicted_census"].to_numpy())

    manifest = json.loads((out / "manifest.json").read_text())["data"]
    assert "generated_at" not in manifest
    listed = {a["name"]: a["sha256"] for a in manifest["artifacts"]}
    assert "manifest.json" not in listed
    assert listed["granger.json"] == compute_sha256(out / "granger.json")
    assert set(manifest["inputs"]) == {"attestations", "census", "zipmap"}


def test_run_all_is_byte_reproducible(sim_inputs, tmp_path):
    """Reruns and worker counts leave every artifact byte-identical."""
    paths, _, _ = sim_inputs
    out = tmp_path / "out"
    argv = ["run-all", *_input_flags(paths), "--output-dir", str(out), "--k-max", "8"]

    assert main(argv) == 0
    first = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert main(argv + ["--jobs", "3"]) == 0
    second = {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    # jobs is part of the hashed config; every other artifact must match
    assert set(first) == set(second)
    for name in first:
        if name != "manifest.json":
            assert first[name] == second[name], name
    assert main(argv) == 0
    assert (out / "manifest.json").read_bytes() == first["manifest.json"]


def test_missing_census_exits_with_data_error(sim_inputs, tmp_path, capsys):
    paths, _, _ = sim_inputs
    missing = tmp_path / "nowhere" / "census.csv"
    code = main([
        "ingest", "--attestations", str(paths["attestations"]), "--census", str(missing),
        "--zipmap", str(paths["zipmap"]), "--output-dir", str(tmp_path / "out"),
    ])
    err = capsys.readouterr().err
    assert code == 3
    assert "code=missing_input exit=3" in err
    assert str(missing) in err


def test_missing_input_path_is_config_error(tmp_path):
    """Running without input paths is a configuration error."""
    assert main(["ingest", "--output-dir", str(tmp_path)]) == 2


def test_weekly_granger_test(sim_inputs, tmp_path):
    """16 ISO weeks with a 4-week holdout leave 12 training weeks, enough for K = 1."""
    paths, _, _ = sim_inputs
    out = tmp_path / "weekly"
    argv = ["test", *_input_flags(paths), "--frequency", "weekly", "--holdout-len", "4", "--output-dir", str(out)]
    assert main(argv) == 0

    result = load_json_artifact(out / "granger.json", GrangerResult, kind="granger")
    assert result.frequency is Frequency.WEEKLY
    assert result.K == 1
    assert result.T_eff == 16 - 1
    assert pd.read_csv(out / "lag_curve.csv")["K"].tolist() == [1]
    assert "Z-tilde" in (out / "granger.txt").read_text()


def test_horizon_differs_from_holdout(sim_inputs, tmp_path, caplog):
    """A horizon other than the holdout skips scoring but still forecasts."""
    paths, _, _ = sim_inputs
    out = tmp_path / "out"
    cfg = RunConfig(
        attestations_path=str(paths["attestations"]),
        census_path=str(paths["census"]),
        zipmap_path=str(paths["zipmap"]),
        output_dir=str(out),
        k_max=6,
        horizon=3,
    )
    with caplog.at_level(logging.WARNING):
        result = Pipeline(cfg).evaluate()

    assert "skipping accuracy scores" in caplog.text
    assert result.network_mae is None
    assert not (out / "evaluation.json").exists()
    assert (out / "table.txt").exists()
    forecast = json.loads((out / "forecast.json").read_text())["data"]
    assert forecast["horizon"] == 3


def test_provided_exogenous_path(sim_inputs, tmp_path):
    """Supplied indicator paths drive the forecast; fixed K skips selection."""
    paths, panel, _ = sim_inputs
    exogenous = tmp_path / "exogenous.csv"
    rows = [f"{unit},{step},2.5" for unit in panel.units for step in range(1, 8)]
    exogenous.write_text("unit_id,step,value\n" + "\n".join(rows) + "\n")

    out = tmp_path / "out"
    code = main([
        "forecast", *_input_flags(paths), "--output-dir", str(out), "--fixed-k", "3",
        "--exogenous-policy", "provided", "--exogenous-path", str(exogenous),
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())["data"]
    assert "exogenous" in manifest["inputs"]
    assert not (out / "lag_curve.csv").exists()


def test_oracle_command_with_no_experiments(tmp_path, capsys):
    """All replication counts at zero still write a report."""
    args = ["oracle", "--output-dir", str(tmp_path), "--size-reps", "0", "--power-reps", "0",
            "--lag-reps", "0", "--coefficient-reps", "0", "--forecast-reps", "0"]
    assert main(args) == 0
    assert "No experiments run." in capsys.readouterr().out
    assert (tmp_path / "oracle_report.json").exists()


def test_smooth_target_precedence(tmp_path):
    """The census is unsmoothed by default; config and flags can change that."""
    assert RunConfig().smooth_target is False
    assert RunConfig().transform_spec().smooth_target is False

    config = tmp_path / "run.cfg"
    config.write_text("smooth_target = true\n")
    assert build_run_config(build_parser().parse_args(["fit", "--config", str(config)])).smooth_target is True
    args = build_parser().parse_args(["fit", "--config", str(config), "--no-smooth-target"])
    assert build_run_config(args).smooth_target is False
    assert build_run_config(build_parser().parse_args(["fit", "--smooth-target"])).smooth_target is True


def test_test_and_run_all_choose_the_same_k(sim_inputs, tmp_path):
    """Both commands select K on the training window."""
    paths, _, _ = sim_inputs
    flags = [*_input_flags(paths), "--k-max", "8"]
    assert main(["test", *flags, "--output-dir", str(tmp_path / "test")]) == 0
    assert main(["run-all", *flags, "--output-dir", str(tmp_path / "all")]) == 0

    alone = load_json_artifact(tmp_path / "test" / "granger.json", GrangerResult, kind="granger")
    full = load_json_artifact(tmp_path / "all" / "granger.json", GrangerResult, kind="granger")
    panel_fit = load_json_artifact(tmp_path / "all" / "fit.json", PanelFit, kind="panel_fit")
    assert alone.K == full.K == panel_fit.spec.K
    assert alone == full


def test_weekly_run_all_caps_k_max(sim_inputs, tmp_path, caplog):
    """Weekly runs drop the moving average and cap k_max to what the weeks support."""
    paths, _, _ = sim_inputs
    out = tmp_path / "weekly"
    argv = ["run-all", *_input_flags(paths), "--frequency", "weekly", "--holdout-len", "4",
            "--horizon", "4", "--output-dir", str(out)]
    with caplog.at_level(logging.INFO):
        assert main(argv) == 0

    assert "ma_window 7 replaced by 1" in caplog.text
    assert "k_max=14 capped at 1" in caplog.text
    panel_fit = load_json_artifact(out / "fit.json", PanelFit, kind="panel_fit")
    assert panel_fit.spec.K == 1
    comparison = load_json_artifact(out / "evaluation.json", BaselineComparison, kind="evaluation")
    assert comparison.model.horizon == 4


def test_weekly_run_all_with_long_holdout_is_numerical_error(sim_inputs, tmp_path, capsys):
    """Nine training weeks cannot support any lag order."""
    paths, _, _ = sim_inputs
    code = main(["run-all", *_input_flags(paths), "--frequency", "weekly", "--output-dir", str(tmp_path)])
    assert code == 4
    assert "9 training periods" in capsys.readouterr().err


def _write_weekly_cases(panel, path):
    weekly = aggregate_weekly(panel)
    rows = [
        f"{week.isoformat()},{unit},{int(weekly.y[i][w])}"
        for i, unit in enumerate(weekly.units)
        for w, week in enumerate(weekly.calendar)
    ]
    path.write_text("date,unit_id,cases\n" + "\n".join(rows) + "\n")
    return weekly


def test_weekly_cases_target(sim_inputs, tmp_path):
    """Weekly positive cases replace the census as the target."""
    paths, panel, _ = sim_inputs
    cases = tmp_path / "cases.csv"
    weekly = _write_weekly_cases(panel, cases)
    out = tmp_path / "cases"
    code = main([
        "run-all", "--attestations", str(paths["attestations"]), "--cases", str(cases),
        "--zipmap", str(paths["zipmap"]), "--frequency", "weekly", "--holdout-len", "4",
        "--horizon", "4", "--output-dir", str(out),
    ])
    assert code == 0

    written = pd.read_csv(out / "panel.csv")
    assert written["y"].sum() == pytest.approx(sum(map(sum, weekly.y)))
    assert written["x"].sum() == pytest.approx(sum(map(sum, weekly.x)))
    granger = load_json_artifact(out / "granger.json", GrangerResult, kind="granger")
    assert granger.frequency is Frequency.WEEKLY
    manifest = json.loads((out / "manifest.json").read_text())["data"]
    assert set(manifest["inputs"]) == {"attestations", "cases", "zipmap"}


def test_cases_require_weekly_frequency(sim_inputs, tmp_path, capsys):
    """A weekly case file with a daily panel is a configuration error."""
    paths, panel, _ = sim_inputs
    cases = tmp_path / "cases.csv"
    _write_weekly_cases(panel, cases)
    code = main(["ingest", "--attestations", str(paths["attestations"]), "--cases", str(cases),
                 "--zipmap", str(paths["zipmap"]), "--output-dir", str(tmp_path / "out")])
    assert code == 2
    assert "code=config" in capsys.readouterr().err


def test_oracle_help_documents_replication_flags(capsys, monkeypatch):
    """Every replication flag in the oracle command has help text."""
    monkeypatch.setenv("COLUMNS", "240")
    with pytest.raises(SystemExit):
        main(["oracle", "--help"])
    text = capsys.readouterr().out
    for flag, words in (
        ("--size-reps", "test size"),
        ("--power-reps", "test power"),
        ("--lag-reps", "lag-order recovery"),
        ("--coefficient-reps", "coefficient recovery"),
        ("--forecast-reps", "forecast vs persistence"),
    ):
        assert flag in text
        assert words in text
