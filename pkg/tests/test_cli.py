import hashlib
import json
from math import radians

import numpy as np
import pytest

from rcmalign.cli import main
from rcmalign.kinematics import pivot_angles
from rcmalign.phantom import read_dataset_csv


def run(*argv):
    return main([str(a) for a in argv])


def simulate_pivot(path, d_mm=15.0, theta_deg=15.0, seed=0, duration=10.0, noise="1.0"):
    rc = run(
        "simulate", "--kind", "pivot", "--out", path,
        "--d-true-mm", d_mm, "--theta-star-deg", theta_deg,
        "--duration", duration, "--seed", seed, "--noise-scale", noise,
    )
    assert rc == 0


def simulate_teleop(path, d_mm=30.0, k=900.0, seed=0, duration=20.0, noise="1.0"):
    rc = run(
        "simulate", "--kind", "teleop", "--out", path,
        "--d-true-mm", d_mm, "--k-true", k,
        "--duration", duration, "--seed", seed, "--noise-scale", noise,
    )
    assert rc == 0


def train_model(data, model_path, report_path=None):
    argv = ["train", "--data", data, "--model-out", model_path]
    if report_path:
        argv += ["--report-out", report_path]
    assert run(*argv) == 0


class TestSimulate:
    def test_pivot_holds_declared_angle(self, tmp_path):
        out = tmp_path / "pivot.csv"
        simulate_pivot(out, theta_deg=15.0)
        ds = read_dataset_csv(out)
        theta = pivot_angles(ds.q[:, 0], ds.q[:, 1])
        assert np.abs(theta - radians(15.0)).max() <= 1e-9

    def test_free_space_teleop_has_zero_forces(self, tmp_path):
        out = tmp_path / "free.csv"
        rc = run("simulate", "--kind", "teleop", "--out", out, "--seed", 7,
                 "--k-true", 0, "--duration", 5)
        assert rc == 0
        ds = read_dataset_csv(out)
        assert np.all(ds.f_true == 0.0)

    def test_rerun_same_flags_identical_hash(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        simulate_teleop(a, seed=3, duration=2.0)
        simulate_teleop(b, seed=3, duration=2.0)
        assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()

    def test_seed_env_var(self, tmp_path, monkeypatch):
        a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
        monkeypatch.setenv("RCM_ALIGN_SEED", "11")
        assert run("simulate", "--kind", "teleop", "--out", a, "--duration", 1) == 0
        monkeypatch.delenv("RCM_ALIGN_SEED")
        assert run("simulate", "--kind", "teleop", "--out", b, "--duration", 1,
                   "--seed", 11) == 0
        assert run("simulate", "--kind", "teleop", "--out", c, "--duration", 1) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_missing_kind_is_config_error(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "x.csv") == 2

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("kind = teleop\nduration = 1\nseed = 5\nd_true = 0.02\n")
        out1 = tmp_path / "one.csv"
        assert run("simulate", "--config", cfg, "--out", out1) == 0
        out2 = tmp_path / "two.csv"
        assert run("simulate", "--config", cfg, "--out", out2, "--d-true-mm", 40) == 0
        ds1, ds2 = read_dataset_csv(out1), read_dataset_csv(out2)
        # same trajectory, different misalignment torque signature
        assert np.array_equal(ds1.q, ds2.q)
        assert not np.array_equal(ds1.tau, ds2.tau)


class TestTrain:
    def test_train_writes_model_and_report(self, tmp_path):
        data = tmp_path / "free.csv"
        simulate_teleop(data, k=0.0, seed=1, duration=20.0)
        model = tmp_path / "model.json"
        report = tmp_path / "report.json"
        train_model(data, model, report)
        payload = json.loads(model.read_text())
        assert len(payload["weights"]) == 3
        rep = json.loads(report.read_text())
        assert rep["fractions"] == [0.7, 0.2, 0.1]
        assert rep["n_train"] + rep["n_val"] + rep["n_test"] == 4000

    def test_refuses_contact_data(self, tmp_path):
        data = tmp_path / "contact.csv"
        simulate_teleop(data, k=900.0, seed=2, duration=2.0)
        assert run("train", "--data", data, "--model-out", tmp_path / "m.json") == 1

    def test_deterministic_model_file(self, tmp_path):
        data = tmp_path / "free.csv"
        simulate_teleop(data, k=0.0, seed=3, duration=5.0)
        m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
        train_model(data, m1)
        train_model(data, m2)
        assert m1.read_bytes() == m2.read_bytes()


class TestEstimateForce:
    def test_oracle_tau0_noise_free_rmse_zero(self, tmp_path):
        data = tmp_path / "contact.csv"
        simulate_teleop(data, d_mm=30.0, seed=4, duration=5.0, noise="0.0")
        rmse_out = tmp_path / "rmse.json"
        rc = run("estimate-force", "--data", data, "--d-mm", 30.0,
                 "--oracle-tau0", "--rmse-out", rmse_out)
        assert rc == 0
        rmse = json.loads(rmse_out.read_text())["rmse"]
        assert np.allclose(rmse, 0.0, atol=1e-9)

    def test_trained_model_band(self, tmp_path):
        free = tmp_path / "free.csv"
        simulate_teleop(free, k=0.0, seed=5, duration=30.0)
        model = tmp_path / "model.json"
        train_model(free, model)
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=30.0, seed=6, duration=10.0)
        rmse_out = tmp_path / "rmse.json"
        rc = run("estimate-force", "--data", contact, "--model", model,
                 "--d-mm", 30.0, "--rmse-out", rmse_out)
        assert rc == 0
        rmse = json.loads(rmse_out.read_text())["rmse"]
        assert max(rmse) <= 2.5

    def test_missing_truth_columns_omits_rmse(self, tmp_path):
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=20.0, seed=7, duration=2.0)
        # strip the truth columns to mimic externally sourced data
        stripped = tmp_path / "external.csv"
        lines = contact.read_text().splitlines()
        out_lines = [lines[0]]
        for line in lines[1:]:
            out_lines.append(",".join(line.split(",")[:10] + [""] * 6))
        stripped.write_text("\n".join(out_lines) + "\n")
        free = tmp_path / "free.csv"
        simulate_teleop(free, k=0.0, seed=7, duration=10.0)
        model = tmp_path / "model.json"
        train_model(free, model)
        series_out = tmp_path / "series.csv"
        rmse_out = tmp_path / "rmse.json"
        rc = run("estimate-force", "--data", stripped, "--model", model,
                 "--d-mm", 20.0, "--series-out", series_out, "--rmse-out", rmse_out)
        assert rc == 0
        assert series_out.exists()
        assert json.loads(rmse_out.read_text())["rmse"] is None

    def test_sub_millimeter_d_rejected(self, tmp_path):
        data = tmp_path / "contact.csv"
        simulate_teleop(data, seed=8, duration=1.0)
        rc = run("estimate-force", "--data", data, "--d-mm", 0.5, "--oracle-tau0")
        assert rc == 1


class TestCalibrateK:
    def test_single_config_midpoint(self, tmp_path):
        data = tmp_path / "pivot.csv"
        simulate_pivot(data, d_mm=15.0, theta_deg=15.0, duration=10.0)
        out = tmp_path / "phase1.json"
        rc = run("calibrate-k", "--pivot", data, 15.0, 15.0, "--out", out)
        assert rc == 0
        payload = json.loads(out.read_text())
        common = payload["common"]
        assert payload["k_hat"] == (common["lo"] + common["hi"]) / 2.0
        assert common["lo"] <= 900.0 <= common["hi"]

    def test_conflicting_rigs_fail_with_listing(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        rc = run("simulate", "--kind", "pivot", "--out", a, "--d-true-mm", 15,
                 "--theta-star-deg", 15, "--k-true", 600, "--duration", 10)
        assert rc == 0
        rc = run("simulate", "--kind", "pivot", "--out", b, "--d-true-mm", 15,
                 "--theta-star-deg", 15, "--k-true", 1400, "--duration", 10)
        assert rc == 0
        out = tmp_path / "phase1.json"
        rc = run("calibrate-k", "--pivot", a, 15.0, 15.0, "--pivot", b, 15.0, 15.0,
                 "--out", out)
        assert rc == 1
        payload = json.loads(out.read_text())
        assert payload["error"] == "CalibrationError"
        assert "ranges" in payload["details"]

    def test_config_file_pivots(self, tmp_path):
        data = tmp_path / "pivot.csv"
        simulate_pivot(data, d_mm=30.0, theta_deg=15.0, duration=10.0)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"pivot1_data = {data}\npivot1_d_star = 0.030\npivot1_theta_star_deg = 15\n"
        )
        assert run("calibrate-k", "--config", cfg) == 0


class TestEstimateD:
    def test_closed_loop_with_truth(self, tmp_path):
        free = tmp_path / "free.csv"
        simulate_teleop(free, k=0.0, seed=9, duration=30.0)
        model = tmp_path / "model.json"
        train_model(free, model)
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=30.0, seed=10, duration=30.0)
        out = tmp_path / "phase2.json"
        rc = run("estimate-d", "--data", contact, "--model", model, "--k-hat", 900.0,
                 "--d-star-mm", 30.0, "--out", out)
        assert rc == 0
        payload = json.loads(out.read_text())
        assert abs(payload["d_hat"] - 0.030) <= 0.005
        assert payload["e_abs"] <= 0.005
        assert payload["n_used"] >= 100

    def test_use_true_forces(self, tmp_path):
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=10.0, seed=11, duration=30.0)
        out = tmp_path / "phase2.json"
        rc = run("estimate-d", "--data", contact, "--use-true-forces",
                 "--k-hat", 900.0, "--d-star-mm", 10.0, "--out", out)
        assert rc == 0
        assert json.loads(out.read_text())["e_abs"] <= 0.003

    def test_insufficient_excitation_writes_error_json(self, tmp_path):
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=30.0, seed=12, duration=2.0)
        out = tmp_path / "phase2.json"
        rc = run("estimate-d", "--data", contact, "--use-true-forces",
                 "--k-hat", 900.0, "--f-min", 1e9, "--out", out)
        assert rc == 1
        assert json.loads(out.read_text())["error"] == "InsufficientExcitationError"


class TestSweep:
    def test_reference_values(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = run("sweep", "--k", 900.0, "--d-grid-mm", "0,20,40",
                 "--theta-max-deg", 90, "--theta-steps", 91, "--out", out)
        assert rc == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert rows.shape == (3 * 91, 3)
        at_45 = rows[np.isclose(rows[:, 1], radians(45.0))]
        f20 = at_45[np.isclose(at_45[:, 0], 0.020)][0, 2]
        f40 = at_45[np.isclose(at_45[:, 0], 0.040)][0, 2]
        assert f20 == pytest.approx(12.728, abs=1e-3)
        assert f40 == pytest.approx(25.456, abs=1e-3)
        zero_rows = rows[rows[:, 0] == 0.0]
        assert np.all(zero_rows[:, 2] == 0.0)


class TestVerify:
    def test_agreement_on_noise_free_data(self, tmp_path):
        free = tmp_path / "free.csv"
        simulate_teleop(free, k=0.0, seed=13, duration=20.0, noise="0.0")
        model = tmp_path / "model.json"
        train_model(free, model)
        contact = tmp_path / "contact.csv"
        simulate_teleop(contact, d_mm=40.0, seed=14, duration=20.0, noise="0.0")
        out = tmp_path / "verify.json"
        surface = tmp_path / "surface.csv"
        rc = run("verify", "--data", contact, "--model", model, "--k-hat", 900.0,
                 "--out", out, "--surface-out", surface)
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["agree"] is True
        assert abs(payload["solver_d_hat"] - 0.040) <= 5e-4
        header = surface.read_text().splitlines()[0]
        assert header == "k,D,cost"
        rows = np.loadtxt(surface, delimiter=",", skiprows=1)
        assert rows.shape == (payload["n_grid"], 3)
