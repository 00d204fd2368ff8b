from math import pi, radians

import pytest
from fastapi.testclient import TestClient

from rcmalign import __version__
from rcmalign.cli import main
from rcmalign.phantom import read_dataset_csv
from rcmalign.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def simulate_body(out, kind="teleop", **rig):
    return {
        "out": str(out),
        "traj": {"kind": kind, "duration": 5.0, "seed": 1},
        "rig": rig or {},
    }


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok", "version": __version__}


class TestSimulateEndpoint:
    def test_creates_dataset(self, client, tmp_path):
        out = tmp_path / "ds.csv"
        resp = client.post("/simulate", json=simulate_body(out, d_true=0.02))
        assert resp.status_code == 200
        body = resp.json()
        assert body["n_samples"] == 1000
        assert body["d_true"] == 0.02
        assert read_dataset_csv(out).q.shape == (1000, 3)

    def test_unknown_field_rejected(self, client, tmp_path):
        body = simulate_body(tmp_path / "x.csv")
        body["rig"]["d_treu"] = 0.02
        resp = client.post("/simulate", json=body)
        assert resp.status_code == 422

    def test_invalid_rig_value_rejected(self, client, tmp_path):
        body = simulate_body(tmp_path / "x.csv", d_true=0.2)  # above 50 mm bound
        resp = client.post("/simulate", json=body)
        assert resp.status_code == 400
        assert "d_true" in resp.json()["message"]

    def test_parity_with_cli(self, client, tmp_path):
        via_http = tmp_path / "http.csv"
        resp = client.post(
            "/simulate",
            json={
                "out": str(via_http),
                "traj": {"kind": "teleop", "duration": 2.0, "seed": 9},
                "rig": {"d_true": 0.03, "seed": 9},
            },
        )
        assert resp.status_code == 200
        via_cli = tmp_path / "cli.csv"
        rc = main([
            "simulate", "--kind", "teleop", "--out", str(via_cli),
            "--d-true-mm", "30", "--duration", "2", "--seed", "9",
        ])
        assert rc == 0
        assert via_http.read_bytes() == via_cli.read_bytes()


class TestSweepEndpoint:
    def test_reference_value(self, client):
        resp = client.post(
            "/sweep",
            json={"k": 900.0, "d_values": [0.0, 0.020], "theta_max": pi / 2,
                  "theta_steps": 91},
        )
        assert resp.status_code == 200
        rows = resp.json()["rows"]
        assert len(rows) == 182
        at = [r for r in rows if abs(r["d"] - 0.020) < 1e-12
              and abs(r["theta"] - radians(45)) < 1e-9]
        assert at and abs(at[0]["force"] - 12.728) < 1e-3


class TestPipelineEndpoints:
    def test_train_estimate_and_verify_flow(self, client, tmp_path):
        free = tmp_path / "free.csv"
        resp = client.post(
            "/simulate",
            json={"out": str(free),
                  "traj": {"kind": "teleop", "duration": 30.0, "seed": 2},
                  "rig": {"k_true": 0.0, "seed": 2}},
        )
        assert resp.status_code == 200
        model = tmp_path / "model.json"
        resp = client.post("/train", json={"data": str(free), "model_out": str(model)})
        assert resp.status_code == 200
        report = resp.json()["report"]
        assert len(report["rmse_test"]) == 3

        contact = tmp_path / "contact.csv"
        resp = client.post(
            "/simulate",
            json={"out": str(contact),
                  "traj": {"kind": "teleop", "duration": 30.0, "seed": 3},
                  "rig": {"d_true": 0.030, "seed": 3}},
        )
        assert resp.status_code == 200

        resp = client.post(
            "/estimate-force",
            json={"data": str(contact), "d": 0.030, "model": str(model)},
        )
        assert resp.status_code == 200
        assert max(resp.json()["rmse"]) <= 2.5

        resp = client.post(
            "/estimate-d",
            json={"data": str(contact), "k_hat": 900.0, "model": str(model),
                  "d_star": 0.030},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["e_abs"] <= 0.005
        assert len(body["starts"]) == 8

        resp = client.post(
            "/verify",
            json={"data": str(contact), "k_hat": 900.0, "model": str(model)},
        )
        assert resp.status_code == 200
        assert resp.json()["agree"] is True

    def test_calibrate_endpoint(self, client, tmp_path):
        pivot = tmp_path / "pivot.csv"
        resp = client.post(
            "/simulate",
            json={"out": str(pivot),
                  "traj": {"kind": "pivot", "duration": 10.0, "theta_star": radians(15)},
                  "rig": {"d_true": 0.015}},
        )
        assert resp.status_code == 200
        resp = client.post(
            "/calibrate-k",
            json={"pivots": [
                {"data": str(pivot), "d_star": 0.015, "theta_star": radians(15)}
            ]},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["common"]["lo"] <= 900.0 <= body["common"]["hi"]

    def test_domain_error_maps_to_400(self, client, tmp_path):
        contact = tmp_path / "contact.csv"
        resp = client.post(
            "/simulate",
            json={"out": str(contact),
                  "traj": {"kind": "teleop", "duration": 2.0, "seed": 4},
                  "rig": {"d_true": 0.030, "seed": 4}},
        )
        assert resp.status_code == 200
        resp = client.post("/train", json={"data": str(contact), "model_out": str(tmp_path / "m.json")})
        assert resp.status_code == 400
        body = resp.json()
        assert body["error"] == "DataError"
        assert "free space" in body["message"]

    def test_missing_file_maps_to_400(self, client, tmp_path):
        resp = client.post(
            "/estimate-force",
            json={"data": str(tmp_path / "nope.csv"), "d": 0.03, "oracle_tau0": True},
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "DataError"
