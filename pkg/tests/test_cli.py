import csv
import time
from dataclasses import replace
from pathlib import Path

import pytest

from torus_secagg.cli import EXIT_CONFIG, EXIT_DATASET, EXIT_OK, main
from torus_secagg.data import MNIST_DIR_ENV
from torus_secagg.errors import ConfigurationError
from torus_secagg.experiment import (
    PRESETS,
    Arm,
    ExperimentConfig,
    config_from_mapping,
    get_preset,
    load_config,
    parse_config_text,
    resolve_L,
    run_experiment,
    validate_config,
)
from torus_secagg.metrics import summarize

GOLDEN = Path(__file__).parent / "golden"


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_validate_k_too_small():
    problems = validate_config(replace(get_preset("smoke-synth"), K=(1,)))
    assert any("K ≥ 2" in p for p in problems)


def test_validate_k_too_large():
    problems = validate_config(replace(get_preset("smoke-synth"), K=(65,)))
    assert any("K ≤ 64" in p for p in problems)


def test_validate_zero_L():
    problems = validate_config(replace(get_preset("smoke-synth"), arms=(Arm("torus", L="0"),)))
    assert any("L > 0" in p for p in problems)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name):
    assert validate_config(PRESETS[name]) == []


def test_validate_other_fields():
    cfg = replace(get_preset("smoke-synth"), runs=0, precision=16, dataset="cifar", arms=(Arm("finite_field", p=10),))
    problems = validate_config(cfg)
    for needle in ("runs ≥ 1", "precision", "dataset", "p odd"):
        assert any(needle in p for p in problems), needle


def test_resolve_L():
    assert resolve_L("K", 10) == 10.0
    assert resolve_L("10K", 10) == 100.0
    assert resolve_L("100K", 10) == 1000.0
    assert resolve_L("1", 10) == 1.0
    assert resolve_L("strict", 10) == "strict"


def test_parse_config_text():
    text = "# comment\nK = 5, 10  # trailing\n\nmode = torus\nL = 1, K\n"
    assert parse_config_text(text) == {"K": "5, 10", "mode": "torus", "L": "1, K"}
    with pytest.raises(ConfigurationError):
        parse_config_text("just words")


def test_config_from_mapping_explicit():
    cfg = config_from_mapping({"K": "5,10", "mode": "torus", "L": "1, K", "rounds": "2", "deterministic": "yes"})
    assert cfg.K == (5, 10)
    assert [a.L for a in cfg.arms] == ["1", "K"]
    assert cfg.rounds == 2 and cfg.deterministic


def test_config_from_mapping_field_arm():
    cfg = config_from_mapping({"mode": "finite_field", "p": "32767", "d": "4"})
    assert cfg.arms == (Arm("finite_field", p=32767, d=4),)


def test_config_rejects_preset_plus_explicit_arms():
    with pytest.raises(ConfigurationError):
        config_from_mapping({"preset": "table5", "mode": "torus"})


def test_config_preset_with_overrides():
    cfg = config_from_mapping({"preset": "table5", "runs": "1"})
    assert cfg.runs == 1 and cfg.K == (10,)


def test_config_unknown_key():
    with pytest.raises(ConfigurationError):
        config_from_mapping({"colour": "blue"})


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        get_preset("table9")


def test_smoke_synth(tmp_path):
    start = time.perf_counter()
    result = run_experiment(get_preset("smoke-synth"), tmp_path)
    assert time.perf_counter() - start < 60
    rows = _rows(result.files["rounds"])
    torus = [r for r in rows if r["mode"] == "torus"]
    assert torus and all(float(r["cosine_vs_plain"]) >= 1 - 1e-9 for r in torus)


def test_output_headers_match_golden(tmp_path):
    result = run_experiment(replace(get_preset("smoke-synth"), rounds=1, runs=1), tmp_path)
    for kind, path in result.files.items():
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == (GOLDEN / f"{kind}_header.csv").read_text(encoding="utf-8").strip()


def test_outputs_are_byte_identical(tmp_path):
    cfg = replace(get_preset("smoke-synth"), rounds=2)
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for kind in a.files:
        assert a.files[kind].read_bytes() == b.files[kind].read_bytes()


def test_non_deterministic_seed_is_recorded(tmp_path):
    cfg = replace(get_preset("smoke-synth"), rounds=1, runs=1, deterministic=False)
    result = run_experiment(cfg, tmp_path)
    assert {r["seed"] for r in _rows(result.files["rounds"])} == {str(result.seeds[0])}


def test_summary_uses_population_std(tmp_path):
    result = run_experiment(replace(get_preset("smoke-synth"), rounds=2, runs=3), tmp_path)
    summary = _rows(result.files["summary"])
    rounds = _rows(result.files["rounds"])
    plain = [float(r["accuracy"]) for r in rounds if r["mode"] == "plain" and r["round"] == "1"]
    row = next(r for r in summary if r["mode"] == "plain")
    rep = summarize(plain)
    assert float(row["accuracy_mean"]) == rep.mean
    assert float(row["accuracy_std"]) == rep.std
    assert row["runs"] == "3"


def test_complexity_report(tmp_path):
    result = run_experiment(replace(get_preset("smoke-synth"), rounds=1, runs=1), tmp_path)
    rows = _rows(result.files["complexity"])
    torus = next(r for r in rows if r["mode"] == "torus")
    m, K = int(torus["m"]), int(torus["K"])
    assert torus["matches_closed_form"] == "true"
    assert int(torus["client_compute"]) == m * K
    assert int(torus["client_compute_closed_form"]) == m * m + m * (K - 1)


def test_precision_32_run(tmp_path):
    cfg = replace(get_preset("smoke-synth"), rounds=2, runs=1, precision=32)
    result = run_experiment(cfg, tmp_path)
    cell = result.cell(5, "torus", "strict")
    assert min(cell.min_cosine) > 0.9999


def test_table5_preset(tmp_path):
    result = run_experiment(replace(get_preset("table5-mnist"), runs=3), tmp_path)
    summary = {r["L_or_p"]: r for r in _rows(result.files["summary"]) if r["mode"] == "torus"}
    assert set(summary) == {"1.0", "10.0", "100.0", "1000.0"}
    for L in ("10.0", "100.0", "1000.0"):
        assert float(summary[L]["cosine_mean"]) >= 1 - 1e-9
    assert float(summary["1.0"]["cosine_mean"]) < 0.95


def test_cli_run_preset(tmp_path, capsys):
    assert main(["run", "--preset", "smoke-synth", "--out", str(tmp_path), "--runs", "1", "--rounds", "1"]) == EXIT_OK
    assert (tmp_path / "summary.csv").exists()
    assert "summary" in capsys.readouterr().out


def test_cli_unknown_preset(capsys):
    assert main(["run", "--preset", "nope"]) == EXIT_CONFIG
    assert "unknown preset" in capsys.readouterr().err


def test_cli_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("K = 1\nmode = torus\nL = 0\n")
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "K ≥ 2" in err and "L > 0" in err


def test_cli_unreadable_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_cli_missing_dataset(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(MNIST_DIR_ENV, raising=False)
    cfg = tmp_path / "full.cfg"
    cfg.write_text(f"dataset = mnist\nmnist_dir = {tmp_path / 'nowhere'}\nK = 2\nrounds = 1\nruns = 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DATASET
    assert "dataset" in capsys.readouterr().err
    assert main(["run", "--preset", "table2", "--full-scale", "--out", str(tmp_path / "o")]) == EXIT_DATASET


def test_cli_config_file_with_flag_overrides(tmp_path):
    cfg = tmp_path / "ok.cfg"
    cfg.write_text("dataset = synth\nK = 3\nmode = torus\nL = strict\nrounds = 5\nruns = 2\nsynth_samples = 300\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--rounds", "1", "--runs", "1", "--quiet"]) == 0
    rows = _rows(out / "rounds.csv")
    assert {r["round"] for r in rows} == {"0"}
    assert {r["run"] for r in rows} == {"0"}


def test_cli_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "table4-mnist" in capsys.readouterr().out


def test_load_config_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("preset = fig1\nout = x\n")
    cfg = load_config(path)
    assert cfg.name == "fig1" and cfg.out == "x"
    assert isinstance(cfg, ExperimentConfig)
