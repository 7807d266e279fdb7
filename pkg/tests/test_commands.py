import json

import numpy as np
import pytest

from oppspec.main import main
from oppspec.services.ingest import read_model_file
from oppspec.services.reports import read_report


def _run(capsys, command, config, *extra):
    code = main([command, "--config", str(config), *extra])
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    return code, record


def _record(path):
    header, rows = read_report(path)
    return header, {row["key"]: row["value"] for row in rows}


def test_missing_config_gives_error_record(capsys, tmp_path):
    code, record = _run(capsys, "optimize", tmp_path / "absent.json")
    assert code == 1
    assert record["status"] == "error"
    assert record["command"] == "optimize"
    assert record["error"] == "ConfigError"


def test_malformed_trace_reports_path_and_line(capsys, tmp_path, write_config):
    trace = tmp_path / "bad.trace"
    trace.write_text("# sweep_period_ms=30\n-100\nnot-a-number\n", encoding="utf-8")
    config = write_config({"channels": [{"power_trace": "bad.trace"}]})
    code, record = _run(capsys, "fit", config)
    assert code == 1
    assert record["error"] == "IngestError"
    assert record["line"] == 3
    assert record["path"].endswith("bad.trace")


def test_optimize_agrees_with_analyze_grid(capsys, write_config, tmp_path):
    config = write_config({"analysis": {"grid_points": 60, "target_drop": 0.45}})
    assert _run(capsys, "analyze", config)[0] == 0
    code, record = _run(capsys, "optimize", config)
    assert code == 0
    assert [p.rsplit("/", 1)[-1] for p in record["outputs"]] == ["optimize.csv"]

    _, grid = read_report(tmp_path / "out" / "analyze.csv")
    chi = np.array([float(row["chi"]) for row in grid])
    header, best = _record(tmp_path / "out" / "optimize.csv")
    assert header["command"] == "optimize"
    assert float(best["chi_min"]) <= chi.min() + 1e-9
    assert float(best["t_opt_s"]) == pytest.approx(float(grid[int(chi.argmin())]["period_s"]), rel=0.2)
    assert best["at_boundary"] == "false"
    assert float(best["t_target_s"]) > float(best["t_opt_s"])


def test_simulate_is_reproducible(capsys, write_config, tmp_path):
    config = write_config()
    out = tmp_path / "out"
    assert _run(capsys, "simulate", config)[0] == 0
    first = {name: (out / name).read_bytes() for name in ("simulate_summary.csv", "simulate_cdf.csv")}
    assert _run(capsys, "simulate", config)[0] == 0
    for name, content in first.items():
        assert (out / name).read_bytes() == content

    header, summary = _record(out / "simulate_summary.csv")
    assert header["seed"] == "11"
    fractions = [float(summary[k]) for k in ("captured_fraction", "interfered_fraction", "no_opportunity_fraction")]
    assert sum(fractions) == pytest.approx(1.0, abs=1e-6)
    assert float(summary["mean_throughput_bps"]) == pytest.approx(float(summary["analytic_throughput_bps"]), rel=0.05)
    _, cdf = read_report(out / "simulate_cdf.csv")
    assert len(cdf) == 201


def test_seed_override_changes_run(capsys, write_config, tmp_path):
    config = write_config({"policy": {"num_channels": 2, "search": "wideband", "period_ms": 200}})
    assert _run(capsys, "simulate", config)[0] == 0
    default = (tmp_path / "out" / "simulate_summary.csv").read_text(encoding="utf-8")
    assert _run(capsys, "simulate", config, "--seed", "5", "--out", str(tmp_path / "seeded"))[0] == 0
    header, _ = _record(tmp_path / "seeded" / "simulate_summary.csv")
    assert header["seed"] == "5"
    assert (tmp_path / "seeded" / "simulate_summary.csv").read_text(encoding="utf-8") != default


def test_sweep_throughput_grows_with_channels(capsys, write_config, tmp_path):
    assert _run(capsys, "sweep", write_config())[0] == 0
    _, rows = read_report(tmp_path / "out" / "sweep.csv")
    assert [int(row["num_channels"]) for row in rows] == [1, 2, 3]
    means = [float(row["mean_bps"]) for row in rows]
    assert means[0] <= means[1] <= means[2]
    assert all(float(row["p5"]) <= float(row["p95"]) for row in rows)


def test_fit_from_dwell_files(capsys, write_config, tmp_path):
    rng = np.random.default_rng(3)
    for name in ("on", "off"):
        np.savetxt(tmp_path / f"{name}.dwells", rng.exponential(1.0, size=20_000), fmt="%.9g")
    config = write_config({
        "channels": [{"dwells_on": "on.dwells", "dwells_off": "off.dwells"}],
        "fit": {"k": 1, "c1_s": 1.0},
    })
    assert _run(capsys, "fit", config)[0] == 0

    out = tmp_path / "out"
    model = read_model_file(out / "ch1.model")
    assert model.duty_cycle == pytest.approx(0.5, abs=0.05)
    _, scores = read_report(out / "fit_scores.csv")
    assert {row["distribution"] for row in scores} == {"exp_mixture", "exponential", "lognormal", "genpareto"}
    assert len(scores) == 8
    _, summary = read_report(out / "fit_summary.csv")
    assert summary[0]["model_file"] == "ch1.model"


def test_fit_needs_measured_channels(capsys, write_config):
    code, record = _run(capsys, "fit", write_config())
    assert code == 1
    assert record["error"] == "ConfigError"


def test_validate_against_oracle(capsys, write_config, tmp_path):
    config = write_config({"oracle": {"dwells": 20_000, "periods_ms": [100, 500]}})
    assert _run(capsys, "validate", config)[0] == 0
    _, rows = read_report(tmp_path / "out" / "validate.csv")
    assert len(rows) == 4
    for row in rows:
        assert float(row["zeta_renewal"]) == pytest.approx(float(row["zeta_oracle"]), abs=0.02)
        assert row["classic_within_tolerance"] in ("true", "false")


def test_synthesized_trace_can_be_fitted(capsys, write_config, tmp_path):
    assert _run(capsys, "synthesize", write_config({"synthesis": {"hours": 0.1}}))[0] == 0
    assert (tmp_path / "out" / "ch2.trace").is_file()

    config = write_config(
        {"channels": [{"power_trace": "out/ch1.trace"}], "fit": {"k": 1, "c1_s": 0.5}, "output_dir": "fitted"},
        name="fit.json",
    )
    assert _run(capsys, "fit", config)[0] == 0
    model = read_model_file(tmp_path / "fitted" / "ch1.model")
    assert model.duty_cycle == pytest.approx(0.5, abs=0.15)


def test_unreachable_calibration_gives_error_record(capsys, write_config):
    code, record = _run(capsys, "optimize", write_config({"scenario": {"bandwidth_hz": 1000}}))
    assert code == 1
    assert record["status"] == "error"
    assert record["error"] == "DomainError"
    assert "not reachable" in record["message"]


def test_simulate_cdf_carries_interference_free_reference(capsys, write_config, tmp_path):
    assert _run(capsys, "simulate", write_config())[0] == 0
    _, cdf = read_report(tmp_path / "out" / "simulate_cdf.csv")
    c0 = np.array([float(row["interference_free_bps"]) for row in cdf])
    assert np.all(np.diff(c0) >= 0)
    assert float(cdf[100]["interference_free_bps"]) >= float(cdf[100]["access_bps"])
    # median of C0 sits near its mean for the reference scenario
    assert float(cdf[100]["interference_free_bps"]) == pytest.approx(100e6, rel=0.1)
