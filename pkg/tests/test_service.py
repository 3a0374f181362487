import json
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from sln.core import scene_to_json
from sln.model import ModelConfig, SlnModel
from sln.render import read_pfm, read_pgm
from sln.service import Job, Workspace, create_app

TINY = ModelConfig(hidden=24, latent=8, gcn_layers=2)


@pytest.fixture(scope="module")
def scene_doc(corpus):
    return scene_to_json(corpus[0][0])


@pytest.fixture(scope="module")
def workspace_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    (root / "checkpoints").mkdir()
    SlnModel(TINY, seed=0).save(str(root / "checkpoints" / "tiny.ckpt"))
    return str(root)


@pytest.fixture(scope="module")
def client(workspace_dir):
    app = create_app(workspace_dir)
    with TestClient(app) as c:
        assert c.post("/api/checkpoints/tiny/load").status_code == 200
        yield c


@pytest.fixture(scope="module")
def bare_client(tmp_path_factory):
    app = create_app(str(tmp_path_factory.mktemp("ws-bare")))
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def scene_id(client, scene_doc):
    resp = client.post("/api/scenes", json=scene_doc)
    assert resp.status_code == 200
    return resp.json()["id"]


class TestScenes:
    def test_post_then_get_round_trips(self, client, scene_doc, scene_id):
        got = client.get(f"/api/scenes/{scene_id}")
        assert got.status_code == 200
        assert got.json() == json.loads(json.dumps(scene_doc, sort_keys=True))

    def test_resubmission_is_idempotent(self, client, scene_doc, scene_id):
        again = client.post("/api/scenes", json=scene_doc).json()["id"]
        assert again == scene_id

    def test_invalid_predicate_names_the_field(self, client, scene_doc):
        bad = json.loads(json.dumps(scene_doc))
        bad["triplets"][0][1] = "hovering above"
        resp = client.post("/api/scenes", json=bad)
        assert resp.status_code == 400
        body = resp.json()
        assert body["code"] == "invalid_scene"
        assert body["field"] == "triplets[0].predicate"

    def test_malformed_body_rejected(self, client):
        resp = client.post("/api/scenes", content=b"{nope",
                           headers={"content-type": "application/json"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_json"

    def test_unknown_scene_404(self, client):
        assert client.get("/api/scenes/ffffffffffff").status_code == 404


class TestCheckpoints:
    def test_listing_shows_the_loaded_checkpoint(self, client):
        body = client.get("/api/checkpoints").json()
        assert body["loaded"] == "tiny"
        assert any(c["id"] == "tiny" for c in body["checkpoints"])

    def test_unknown_checkpoint_404(self, client):
        assert client.post("/api/checkpoints/ghost/load").status_code == 404

    def test_endpoints_refuse_without_a_model(self, bare_client, scene_doc):
        sid = bare_client.post("/api/scenes", json=scene_doc).json()["id"]
        for resp in (
            bare_client.post("/api/sample", json={"scene_id": sid}),
            bare_client.post("/api/interpolate",
                             json={"scene_id": sid, "seed_a": 0, "seed_b": 1}),
            bare_client.get("/api/heatmap", params={"scene_id": sid}),
        ):
            assert resp.status_code == 409
            assert resp.json()["code"] == "no_checkpoint"


class TestSampling:
    def test_sample_shapes_and_accuracy(self, client, scene_id, corpus):
        resp = client.post("/api/sample",
                           json={"scene_id": scene_id, "n": 3, "seed": 5})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["layouts"]) == 3 and len(body["accuracy"]) == 3
        n_objects = len(corpus[0][0].graph)
        assert all(len(l) == n_objects for l in body["layouts"])
        assert all(0 <= a <= 100 for a in body["accuracy"])

    def test_sample_deterministic_per_seed(self, client, scene_id):
        a = client.post("/api/sample", json={"scene_id": scene_id, "seed": 7})
        b = client.post("/api/sample", json={"scene_id": scene_id, "seed": 7})
        assert a.json() == b.json()

    def test_sample_bounds_checked(self, client, scene_id):
        resp = client.post("/api/sample", json={"scene_id": scene_id, "n": 0})
        assert resp.status_code == 400
        assert resp.json()["field"] == "n"

    def test_sample_unknown_scene(self, client):
        resp = client.post("/api/sample", json={"scene_id": "nope"})
        assert resp.status_code == 404

    def test_interpolate_returns_a_path(self, client, scene_id):
        resp = client.post("/api/interpolate",
                           json={"scene_id": scene_id, "seed_a": 1,
                                 "seed_b": 2, "steps": 4})
        body = resp.json()
        assert body["t"] == [0.0, 1 / 3, 2 / 3, 1.0]
        assert len(body["layouts"]) == 4

    def test_interpolate_rejects_short_paths(self, client, scene_id):
        resp = client.post("/api/interpolate",
                           json={"scene_id": scene_id, "seed_a": 1,
                                 "seed_b": 2, "steps": 1})
        assert resp.status_code == 400

    def test_heatmap_grids_are_normalized(self, client, scene_id):
        resp = client.get("/api/heatmap",
                          params={"scene_id": scene_id, "samples": 8,
                                  "bins": 8})
        assert resp.status_code == 200
        body = resp.json()
        assert body["bins"] == 8
        for grid in body["classes"].values():
            total = float(np.sum(grid))
            assert total == pytest.approx(1.0, abs=1e-6)


class TestRendering:
    def test_ground_truth_render_writes_files(self, client, scene_id,
                                              workspace_dir):
        resp = client.post("/api/render", json={"scene_id": scene_id})
        assert resp.status_code == 200
        body = resp.json()
        depth = read_pfm(os.path.join(workspace_dir, body["depth"]))
        sem = read_pgm(os.path.join(workspace_dir, body["semantic"]))
        assert depth.shape == sem.shape == (64, 64)
        assert body["svg"].startswith("<svg")
        assert body["camera"]["width"] == 64

    def test_sampled_layout_render(self, client, scene_id):
        client.post("/api/sample", json={"scene_id": scene_id, "n": 2})
        resp = client.post("/api/render",
                           json={"scene_id": scene_id, "layout_index": 1})
        assert resp.status_code == 200

    def test_out_of_range_layout_index(self, client, scene_id):
        resp = client.post("/api/render",
                           json={"scene_id": scene_id, "layout_index": 99})
        assert resp.status_code == 400
        assert resp.json()["field"] == "layout_index"

    def test_render_registers_in_the_manifest(self, client, scene_id,
                                              workspace_dir):
        client.post("/api/render", json={"scene_id": scene_id})
        manifest = Workspace(workspace_dir).manifest()
        assert any(k.endswith(".pfm") for k in manifest["renders"])


class TestRefineJobs:
    def test_job_streams_records_then_result(self, client, scene_id):
        target = client.post("/api/render", json={"scene_id": scene_id}).json()
        resp = client.post("/api/refine", json={
            "scene_id": scene_id,
            "target_depth": target["depth"],
            "target_sem": target["semantic"],
            "config": {"steps": 2, "attempts": 1},
        })
        assert resp.status_code == 200
        job_id = resp.json()["job_id"]
        lines = [json.loads(l) for l in
                 client.get(f"/api/jobs/{job_id}").text.splitlines()]
        records = [l["record"] for l in lines if "record" in l]
        assert [r["step"] for r in records] == [0, 1]
        assert all("total" in r for r in records)
        final = lines[-1]
        assert final["state"] == "done"
        assert final["progress"] == 1.0
        assert "layout" in final["result"]
        assert final["result"]["final_loss"] <= final["result"]["initial_loss"] * 10

    def test_bad_target_path_rejected(self, client, scene_id):
        resp = client.post("/api/refine", json={
            "scene_id": scene_id, "target_depth": "renders/none.pfm",
            "target_sem": "renders/none.pgm"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_target"

    def test_bad_config_rejected(self, client, scene_id):
        target = client.post("/api/render", json={"scene_id": scene_id}).json()
        resp = client.post("/api/refine", json={
            "scene_id": scene_id, "target_depth": target["depth"],
            "target_sem": target["semantic"],
            "config": {"steps": -5}})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_config"

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/deadbeef").status_code == 404


class TestJobStateMachine:
    def test_states_are_monotone(self):
        job = Job("refine")
        job.set_state("running")
        job.set_state("done")
        with pytest.raises(ValueError):
            job.set_state("running")

    def test_progress_is_clamped(self):
        job = Job("refine")
        job.push({"step": 0}, 2.5)
        assert job.progress == 1.0
        assert job.snapshot()["state"] == "queued"


class TestFrontendAssets:
    def test_built_frontend_is_served_with_the_api(self, tmp_path_factory):
        dist = os.path.join(os.path.dirname(__file__), "..", "frontend",
                            "dist")
        if not os.path.isdir(dist):
            pytest.skip("frontend not built (run npm run build)")
        app = create_app(str(tmp_path_factory.mktemp("ws-ui")),
                         frontend_dir=dist)
        with TestClient(app) as c:
            index = c.get("/")
            assert index.status_code == 200
            assert "<html" in index.text
            assert c.get("/js/main.js").status_code == 200
            assert c.get("/api/checkpoints").status_code == 200


class TestWorkspace:
    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        ws = Workspace(str(tmp_path / "w"))
        ws.write_bytes("renders/x.bin", b"abc", kind="renders", key="x")
        names = os.listdir(os.path.join(ws.root, "renders"))
        assert names == ["x.bin"]
        assert ws.manifest()["renders"]["x"]["sha256"]

    def test_scene_ids_are_content_addressed(self, tmp_path, scene_doc):
        ws = Workspace(str(tmp_path / "w2"))
        a = ws.add_scene(scene_doc)
        b = ws.add_scene(json.loads(json.dumps(scene_doc)))
        assert a == b and len(a) == 12
