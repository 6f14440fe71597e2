import json

import pytest

from fracback.cli import main


def write_config(tmp_path, **overrides):
    cfg = dict(
        alpha=0.5, T=1.0, nonlinearity="sqrt1pu2", initial_data="smooth_sine",
        noise=dict(delta=1e-3, mode="paper_pointwise", seed=42),
        dim=1, n=16, N=20, n_ref=64, N_ref=50,
        backward=dict(gamma=1e-3),
        output_dir=str(tmp_path / "out"), repetitions=1)
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_mlf_value(capsys):
    assert main(["mlf", "--alpha", "1", "--beta", "1", "--x", "-1"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "0.367879441171442"


def test_params_preset(capsys):
    assert main(["params", "--preset", "paper-ex1", "--delta", "0.0125"]) == 0
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(out["gamma"]) == pytest.approx(0.0014907, rel=1e-4)
    assert float(out["tau"]) == pytest.approx(0.022361, rel=1e-4)
    assert float(out["h"]) == pytest.approx(0.069877, rel=1e-4)


def test_usage_error_unknown_flag(capsys):
    assert main(["mlf", "--alpha", "1", "--x", "-1", "--bogus", "2"]) == 1


def test_usage_error_bad_config(tmp_path, capsys):
    cfg = write_config(tmp_path)
    data = json.loads(cfg.read_text())
    data["mystery"] = True
    cfg.write_text(json.dumps(data))
    assert main(["backward", "--config", str(cfg)]) == 1


def test_missing_config_file():
    assert main(["backward", "--config", "/nonexistent/cfg.json"]) == 1


def test_forward_writes_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["forward", "--config", str(cfg), "--quiet"]) == 0
    out_dir = tmp_path / "out"
    assert (out_dir / "field_terminal.csv").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["N"] == 20 and manifest["mesh"]["n"] == 16


def test_backward_roundtrip(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = main(["backward", "--config", str(cfg), "--quiet"])
    assert code == 0
    out_dir = tmp_path / "out"
    assert (out_dir / "field_u0hat.csv").exists()
    assert (out_dir / "history.csv").exists()
    row = json.loads((out_dir / "row.json").read_text())
    assert row["converged"] and not row["diverged"]
    summary = capsys.readouterr().out
    assert "reconstruction: e_u=" in summary


def test_flag_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["backward", "--config", str(cfg), "--quiet",
                 "--gamma", "5e-3", "--seed", "7"]) == 0
    row = json.loads((tmp_path / "out" / "row.json").read_text())
    assert row["gamma"] == 5e-3
    assert row["seed"] == 7


def test_table_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path, repetitions=1)
    code = main(["table", "--config", str(cfg), "--quiet",
                 "--deltas", "0.002,0.001"])
    assert code == 0
    table = (tmp_path / "out" / "table.csv").read_text()
    assert table.splitlines()[0] == "alpha,metric,delta=0.002,delta=0.001"


def test_table_idempotent_bytes(tmp_path):
    cfg = write_config(tmp_path, repetitions=1)
    main(["table", "--config", str(cfg), "--quiet", "--deltas", "0.002,0.001"])
    first = (tmp_path / "out" / "table.csv").read_bytes()
    main(["table", "--config", str(cfg), "--quiet", "--deltas", "0.002,0.001"])
    assert (tmp_path / "out" / "table.csv").read_bytes() == first


def test_history_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, nonlinearity="L_sqrt1pu2:0.5")
    assert main(["history", "--config", str(cfg), "--quiet"]) == 0


def test_numerical_failure_exit_code(tmp_path, capsys):
    # starving the inner CG budget must surface as exit code 2
    cfg = write_config(tmp_path, backward=dict(gamma=1e-9, cg_max=1, cg_tol=1e-14))
    assert main(["backward", "--config", str(cfg), "--quiet"]) == 2


def test_divergence_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, nonlinearity="L_sqrt1pu2:30", T=10.0,
                       n=50, N=50, n_ref=100, N_ref=100,
                       backward=dict(gamma=1e-5))
    assert main(["backward", "--config", str(cfg), "--quiet"]) == 3


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["backward", "--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--out", "--seed", "--alpha", "--delta", "--gamma",
                 "--preset", "--mesh-n", "--steps", "--paper-scale", "--mode",
                 "--quiet"):
        assert flag in out
