import csv
import json

import pytest

from refarm import cli
from refarm.analysis import QuadratureError
from refarm.cli import ResultBundle, main

FAST = """
rate: {n_drops: 3, n_tti_per_drop: 40}
outage: {n_drops: 3, n_tti_per_drop: 40, thresholds_db: [-5.0, 5.0]}
sweep: {n_drops: 2, n_tti_per_drop: 20}
"""


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.yaml"
    p.write_text(FAST)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_plan_smoke(tmp_path, capsys):
    assert main(["plan", "-o", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    plan = doc["curves"]["plan"]
    assert plan["carrier_grid"]["n_carriers"] == 48
    assert len(plan["reservations"]) == 3 and all(r["prbs"] for r in plan["reservations"])
    assert plan["P_l_w"] > 0
    assert "48 carriers" in capsys.readouterr().out


def test_plan_zero_reservation(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bands: {bandwidths_hz: [2.0e6, 3.0e6, 4.0e6], reserved_hz: 0.0}\n")
    assert main(["plan", "-c", str(cfg), "-o", str(tmp_path)]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())["curves"]["plan"]
    assert all(r["prbs"] == [] and r["carriers"] == [] for r in plan["reservations"])


def test_plan_infeasible_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bands: {bandwidths_hz: [1.5e6, 2.75e6, 2.75e6], reserved_hz: 2.0e6}\n")
    assert main(["plan", "-c", str(cfg), "-o", str(tmp_path)]) == cli.EXIT_INFEASIBLE
    assert "sync" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("radio: {alpha: 1.5}\n")
    assert main(["plan", "-c", str(cfg), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "radio.alpha" in capsys.readouterr().err
    assert main(["plan", "-c", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_usage_errors(tmp_path):
    assert main(["rate", "--ue-positions", "-o", str(tmp_path)]) == cli.EXIT_USAGE
    assert main(["rate", "--ue-positions", "1;2", "-o", str(tmp_path)]) == cli.EXIT_USAGE
    assert main(["rate", "--ue-positions", "100,0", "-o", str(tmp_path)]) == cli.EXIT_USAGE
    assert main(["rate", "--mode", "fast"]) == cli.EXIT_USAGE
    assert main([]) == cli.EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise QuadratureError("rate integral did not converge")

    monkeypatch.setattr(cli, "lte_user_rate", boom)
    assert main(["rate", "--mode", "analysis", "-o", str(tmp_path)]) == cli.EXIT_NUMERIC


def test_rate_both_table_and_files(tmp_path, fast_cfg, capsys):
    assert main(["rate", "-c", fast_cfg, "-o", str(tmp_path), "--mode", "both"]) == 0
    out = capsys.readouterr().out
    for head in ("UE Position", "Simulation", "Analysis", "Gap", "Gap/Sim"):
        assert head in out
    rows = read_csv(tmp_path / "rate.csv")
    assert rows[0] == ["ue_x", "ue_y", "mode", "rate_bps", "ci_halfwidth"]
    assert len(rows) == 1 + 8
    bundle = json.loads((tmp_path / "rate.json").read_text())
    h = bundle["meta"]["config_hash"]
    assert all(r["config_hash"] == h for t in bundle["tables"].values() for r in t)
    assert bundle["meta"]["seed"] == 20130601 and bundle["meta"]["timestamp"]
    assert len(bundle["tables"]["comparison"]) == 4


def test_rate_analysis_repeatable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["rate", "--mode", "analysis", "--ue-positions", "10,0", "0,30"]
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    for name in ("rate.csv", "rate.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_bundle_round_trip(tmp_path, fast_cfg):
    assert main(["rate", "-c", fast_cfg, "-o", str(tmp_path), "--mode", "sim"]) == 0
    text = (tmp_path / "rate.json").read_text()
    assert ResultBundle.from_json(text).to_json() == text


def test_outage_outputs(tmp_path, fast_cfg):
    assert main(["outage", "-c", fast_cfg, "-o", str(tmp_path), "--mode", "both", "--scenarios", "all"]) == 0
    for name in ("outage_analysis.csv", "outage_sim.csv", "outage_average.csv"):
        rows = read_csv(tmp_path / name)
        assert rows[0] == ["probe_r", "probe_psi", "scenario", "threshold_db", "p_out", "ci_lo", "ci_hi"]
    avg = read_csv(tmp_path / "outage_average.csv")[1:]
    by = {(r[3], r[2]): float(r[4]) for r in avg}
    for t in ("-5.0", "5.0"):
        assert by[(t, "no_lte")] <= by[(t, "dsr")] <= by[(t, "direct")]
    ana = read_csv(tmp_path / "outage_analysis.csv")[1:]
    assert len(ana) == 3 * 3 * 2
    assert all(0.0 <= float(r[4]) <= 1.0 for r in ana)
    sim = read_csv(tmp_path / "outage_sim.csv")[1:]
    assert all(float(r[5]) <= float(r[4]) <= float(r[6]) for r in sim)


def test_outage_dsr_equals_no_lte_without_annulus(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("geometry: {delta_R_s: 0.0}\n")
    assert main(["outage", "-c", str(cfg), "-o", str(tmp_path), "--thresholds", "0", "--scenarios", "no_lte,dsr"]) == 0
    avg = read_csv(tmp_path / "outage_average.csv")[1:]
    assert float(avg[0][4]) == pytest.approx(float(avg[1][4]), abs=1e-12)


def test_outage_bad_scenario(tmp_path):
    assert main(["outage", "-o", str(tmp_path), "--scenarios", "maybe"]) == cli.EXIT_USAGE


def test_sweep(tmp_path, fast_cfg, caplog):
    assert main(["sweep", "-c", fast_cfg, "-o", str(tmp_path), "--d-grid", "450", "--theta-grid", "0"]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0] == ["d", "theta", "mean_rate_bps", "ci"] and len(rows) == 2
    assert main(["sweep", "-c", fast_cfg, "-o", str(tmp_path), "--d-grid", "100,950", "--theta-grid", "0"]) == 0
    assert len(read_csv(tmp_path / "sweep.csv")) == 1
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert len(doc["tables"]["invalid_placements"]) == 2
    assert "no placement" in caplog.text


def test_debug_log(tmp_path, fast_cfg):
    log = tmp_path / "drops.log"
    assert main(["rate", "-c", fast_cfg, "-o", str(tmp_path), "--mode", "sim", "--debug-log", str(log)]) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "drop_id,tti,ue_id,band,sinr_db,scheduled"
    assert len(lines) == 1 + 3 * 40 * 4 * 3
