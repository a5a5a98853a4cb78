import csv
import subprocess
import sys

import numpy as np
import pytest

from carfollow.cli import FIG8_FRACTIONS, fig7_rows, fig8_rows, main, regime
from carfollow.config import RunConfig


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *args):
    return main([*args, "--out-dir", str(tmp_path)])


class TestCurves:
    def test_fig7(self, tmp_path):
        assert run(tmp_path, "curves", "fig7") == 0
        rows = read(tmp_path / "fig7.csv")
        assert list(rows[0]) == ["v_ratio", "v_mps", "v_kmh", "equilibrium_gap_m", "desired_gap_m", "gap_ratio"]
        assert (tmp_path / "fig7.svg").read_text().startswith("<svg")
        ratios = [r[5] for r in fig7_rows(RunConfig())]
        assert np.all(np.diff(ratios) > 0)
        assert ratios[-1] / ratios[0] > 2

    def test_fig8_equal_speed_ttc_blank(self, tmp_path):
        assert run(tmp_path, "curves", "fig8") == 0
        rows = read(tmp_path / "fig8.csv")
        equal = [r for r in rows if r["leader_fraction"] == "1"]
        assert equal and all(r["ttc_s"] == "" for r in equal)
        assert {r["leader_fraction"] for r in rows} == {"0.85", "0.9", "0.95", "1"}

    def test_fig8_low_risk_accelerations(self):
        rows = fig8_rows(RunConfig())
        assert len(rows) == len(FIG8_FRACTIONS) * 191
        safe = [r[6] for r in rows if r[5] is None or r[5] > 10]
        assert safe and max(safe) < 0.25


def test_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["scenario", "II", "--model", "SEIDM", "--out-dir", str(out)]) == 0
    for name in ("scenario_II_seidm_r0.6.csv", "trajectory_II_seidm_r0.6_trial0.csv", "platoon_II_seidm_r0.6.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert b"\r\n" not in (a / "scenario_II_seidm_r0.6.csv").read_bytes()


def test_scenario_iii_table(tmp_path, capsys):
    assert run(tmp_path, "scenario", "III", "--model", "IDM") == 0
    table = read(tmp_path / "platoon_III_idm.csv")
    assert [r["vehicle"] for r in table] == [str(i) for i in range(10)]
    assert table[-1]["final_spacing_m"] == ""
    finals = [float(r["final_spacing_m"]) for r in table[:-1]]
    assert max(finals) - min(finals) < 0.1
    summary = read(tmp_path / "scenario_III_idm.csv")
    assert [r["trial"] for r in summary] == ["0", "mean"]
    traj = read(tmp_path / "trajectory_III_idm_trial0.csv")
    assert list(traj[0])[:8] == ["t", "lane", "vehicle_id", "x_m", "v_mps", "a_mps2", "gap_m", "risk_factor"]
    assert all(r["risk_factor"] == "" for r in traj[:20])
    assert "vehicle 9: final -" in capsys.readouterr().out


def test_sweep_r(tmp_path, capsys):
    assert run(tmp_path, "sweep-r", "--r", "0,0.6,1") == 0
    rows = [r for r in read(tmp_path / "sweep_r.csv") if r["trial"] == "mean"]
    spacing = [float(r["spacing_m"]) for r in rows]
    assert spacing == pytest.approx([102.67, 83.64, 76.34], rel=5e-3)
    for r in rows:
        assert float(r["throughput_vph"]) * float(r["spacing_m"]) == pytest.approx(3600 * 95 / 3.6, rel=1e-5)
    assert (tmp_path / "sweep_r.svg").exists()
    out = capsys.readouterr().out
    assert "balanced" in out and "efficiency-priority" in out


@pytest.mark.parametrize("r,name", [(0.0, "plain IDM"), (0.2, "smoothness"), (0.4, "boundary"),
                                    (0.6, "balanced"), (0.8, "boundary"), (1.0, "efficiency")])
def test_regimes(r, name):
    assert name in regime(r)


def test_compare_models_equilibrium(tmp_path):
    args = ["compare-models", "--model", "IDM,Krauss", "--trials", "1", "--t-max", "60"]
    assert run(tmp_path, *args) == 4
    eq = read(tmp_path / "equilibrium.csv")
    assert eq[0]["model"] == "IDM" and float(eq[0]["equilibrium_spacing_m"]) == pytest.approx(102.678, abs=1e-3)
    assert eq[1]["equilibrium_spacing_m"] == ""
    rows = read(tmp_path / "compare_models.csv")
    assert [(r["model"], r["trial"]) for r in rows] == [("IDM", "0"), ("IDM", "mean"), ("Krauss", "0"), ("Krauss", "mean")]
    assert rows[0]["status"] == "timeout"
    assert rows[2]["status"] == "stabilized"


@pytest.mark.parametrize("args,code", [
    (["scenario", "I", "--model", "IDM", "--trials", "1", "--t-max", "5"], 4),
    (["scenario", "III", "--model", "IDM", "--profile", "ramp:-1000:0"], 3),
    (["scenario", "II", "--model", "IDM", "--dt", "-1"], 2),
    (["scenario", "II", "--model", "gipps"], 2),
    (["scenario", "II", "--set", "models.r"], 2),
])
def test_exit_codes(tmp_path, args, code):
    assert run(tmp_path, *args) == code


def test_config_error_message(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[models]\nT = -1\n")
    assert run(tmp_path, "curves", "fig7", "--config", str(cfg)) == 2
    err = capsys.readouterr().err
    assert "bad.ini:2" in err and "must be > 0" in err


def test_cli_overrides_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[models]\nr = 0.2\n")
    assert run(tmp_path, "scenario", "II", "--config", str(cfg), "--r", "1.0") == 0
    assert (tmp_path / "scenario_II_seidm_r1.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "carfollow", "defaults"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[models]" in proc.stdout and "T' = 1.0" in proc.stdout
