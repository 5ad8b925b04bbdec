import numpy as np
import pytest
from fastapi.testclient import TestClient

from adjforge.api import create_app
from adjforge.config import ServiceConfig
from adjforge.service import RunStore

TARGET_BODY = {"peaks": [{"center_um": 6.0, "fwhm_um": 0.75, "amplitude": 1.0}]}


@pytest.fixture
def client(tmp_path, ribbon_library):
    store = RunStore(str(tmp_path / "runs"), library=ribbon_library)
    app = create_app(ServiceConfig(runs_dir=str(tmp_path / "runs")), store=store)
    return TestClient(app)


class TestApi:
    def test_create_run(self, client):
        r = client.post("/api/runs", json=TARGET_BODY)
        assert r.status_code == 201
        body = r.json()
        assert body["state"] == "created"
        assert client.get(f"/api/runs/{body['id']}").json()["state"] == "created"

    def test_invalid_target_422_with_field(self, client):
        bad = {"peaks": [{"center_um": 12.0}]}
        r = client.post("/api/runs", json=bad)
        assert r.status_code == 422
        assert "field" in r.json()

    def test_unknown_run_404(self, client):
        assert client.get("/api/runs/zzz").status_code == 404

    def test_illegal_transition_409(self, client):
        rid = client.post("/api/runs", json=TARGET_BODY).json()["id"]
        r = client.post(f"/api/runs/{rid}/optimize",
                        json={"target_wavelengths": [6.0]})
        assert r.status_code == 409

    def test_workflow_endpoints(self, client):
        rid = client.post("/api/runs", json=TARGET_BODY).json()["id"]
        assert client.post(f"/api/runs/{rid}/generate").json()["state"] == "generated"

        png = client.get(f"/api/runs/{rid}/design.png")
        assert png.status_code == 200
        assert png.content[:8] == b"\x89PNG\r\n\x1a\n"

        assert client.post(f"/api/runs/{rid}/validate").json()["state"] == "validated"
        csv = client.get(f"/api/runs/{rid}/spectrum.csv")
        assert csv.status_code == 200
        assert csv.text.startswith("wavelength_um,absorption")

        r = client.post(
            f"/api/runs/{rid}/optimize",
            json={"target_wavelengths": [6.0], "config": {"max_iterations": 2}},
        )
        assert r.json()["state"] == "optimizing"
        import time

        deadline = time.time() + 180
        while time.time() < deadline:
            state = client.get(f"/api/runs/{rid}").json()["state"]
            if state in ("done", "failed"):
                break
            time.sleep(0.5)
        assert state == "done"

        events = client.get(f"/api/runs/{rid}/events", params={"after": 0}).json()
        kinds = [e["kind"] for e in events]
        assert "iteration" in kinds and "state-change" in kinds
        last = events[-1]["seq"]
        assert client.get(f"/api/runs/{rid}/events", params={"after": last}).json() == []

    def test_target_endpoint_composes(self, client):
        rid = client.post("/api/runs", json=TARGET_BODY).json()["id"]
        body = client.get(f"/api/runs/{rid}/target.json").json()
        composed = np.array(body["composed"])
        assert len(composed) == 800
        # peak value at the grid point nearest 6.0 um
        assert composed.max() == pytest.approx(1.0, abs=1e-3)
        from adjforge.spectra import canonical_wavelengths

        assert abs(canonical_wavelengths()[np.argmax(composed)] - 6.0) < 0.008

    def test_spectrum_before_validate_404(self, client):
        rid = client.post("/api/runs", json=TARGET_BODY).json()["id"]
        assert client.get(f"/api/runs/{rid}/spectrum.csv").status_code == 404
