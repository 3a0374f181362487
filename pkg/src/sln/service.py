"""HTTP facade: workspace persistence, sampling endpoints, refinement jobs.

State is the workspace directory plus one loaded checkpoint. The model is
read-only while serving; refinement jobs optimize call-local copies in
background threads and stream their per-step losses as line-delimited JSON.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .core import (CLASSES, Scene, SceneValidationError, scene_from_json,
                   scene_to_json)
from .metrics import scene_graph_accuracy
from .model import SlnModel
from .refine import RefineConfig, refine
from .render import (Camera, RenderTarget, default_camera, layout_svg,
                     rasterize_hard, read_pfm, read_pgm, write_pfm, write_pgm)

__all__ = ["Workspace", "Job", "create_app"]


class Workspace:
    """Directory of scenes/checkpoints/renders with a hashed index manifest.

    Writes are atomic (temp + rename) and serialized behind a single lock;
    reads go straight to disk.
    """

    SUBDIRS = ("scenes", "checkpoints", "renders", "reports")

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self._lock = threading.Lock()
        for sub in self.SUBDIRS:
            os.makedirs(os.path.join(self.root, sub), exist_ok=True)
        self._manifest_path = os.path.join(self.root, "manifest.json")
        if not os.path.exists(self._manifest_path):
            self._write_manifest({"scenes": {}, "renders": {}, "reports": {}})

    def _write_manifest(self, doc):
        tmp = self._manifest_path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
        os.replace(tmp, self._manifest_path)

    def manifest(self) -> dict:
        with open(self._manifest_path) as f:
            return json.load(f)

    def _register(self, kind: str, key: str, rel_path: str):
        full = os.path.join(self.root, rel_path)
        digest = hashlib.sha256(open(full, "rb").read()).hexdigest()
        doc = self.manifest()
        doc.setdefault(kind, {})[key] = {"path": rel_path, "sha256": digest}
        self._write_manifest(doc)

    def write_bytes(self, rel_path: str, payload: bytes, kind=None, key=None):
        full = os.path.join(self.root, rel_path)
        with self._lock:
            tmp = full + ".tmp"
            with open(tmp, "wb") as f:
                f.write(payload)
            os.replace(tmp, full)
            if kind is not None:
                self._register(kind, key or rel_path, rel_path)
        return rel_path

    # -- scenes ----------------------------------------------------------

    def add_scene(self, doc: dict) -> str:
        scene = scene_from_json(doc)          # validates; raises on bad input
        canonical = json.dumps(scene_to_json(scene), sort_keys=True).encode()
        scene_id = hashlib.sha256(canonical).hexdigest()[:12]
        self.write_bytes(os.path.join("scenes", f"{scene_id}.json"), canonical,
                         kind="scenes", key=scene_id)
        return scene_id

    def get_scene(self, scene_id: str) -> Scene:
        path = os.path.join(self.root, "scenes", f"{scene_id}.json")
        if not os.path.exists(path):
            raise KeyError(scene_id)
        with open(path) as f:
            return scene_from_json(json.load(f))

    def get_scene_doc(self, scene_id: str) -> dict:
        path = os.path.join(self.root, "scenes", f"{scene_id}.json")
        if not os.path.exists(path):
            raise KeyError(scene_id)
        with open(path) as f:
            return json.load(f)

    # -- checkpoints -----------------------------------------------------

    def list_checkpoints(self):
        ckpt_dir = os.path.join(self.root, "checkpoints")
        out = []
        for name in sorted(os.listdir(ckpt_dir)):
            if name.endswith(".ckpt"):
                out.append({"id": name[:-5],
                            "size": os.path.getsize(os.path.join(ckpt_dir, name))})
        return out

    def checkpoint_path(self, ckpt_id: str) -> str:
        path = os.path.join(self.root, "checkpoints", f"{ckpt_id}.ckpt")
        if not os.path.exists(path):
            raise KeyError(ckpt_id)
        return path


class Job:
    """Background task with monotone state and an appendable metric stream."""

    STATES = ("queued", "running", "done", "failed")

    def __init__(self, kind: str):
        self.id = uuid.uuid4().hex[:12]
        self.kind = kind
        self.state = "queued"
        self.progress = 0.0
        self.records: list = []
        self.result = None
        self.error = None
        self._lock = threading.Lock()

    def set_state(self, state: str):
        with self._lock:
            if self.STATES.index(state) < self.STATES.index(self.state):
                raise ValueError(f"state may not move {self.state} -> {state}")
            self.state = state

    def push(self, record: dict, progress: float):
        with self._lock:
            self.records.append(record)
            self.progress = max(self.progress, min(progress, 1.0))

    def snapshot(self) -> dict:
        with self._lock:
            return {"id": self.id, "kind": self.kind, "state": self.state,
                    "progress": self.progress, "error": self.error}


def _error(status: int, code: str, message: str, field: str | None = None):
    body = {"code": code, "message": message}
    if field:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def _layout_json(layout) -> list:
    return [list(o.as_tuple()) for o in layout.objects]


def create_app(workspace_dir: str, frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="layout service")
    ws = Workspace(workspace_dir)
    state = {"model": None, "checkpoint": None,
             "samples": {}}  # scene_id -> list of sampled layouts
    jobs: dict[str, Job] = {}
    refine_slots = threading.Semaphore(2)
    app.state.workspace = ws
    app.state.shared = state

    def model_or_none() -> SlnModel | None:
        return state["model"]

    # -- scenes ----------------------------------------------------------

    @app.post("/api/scenes")
    async def post_scene(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return _error(400, "bad_json", "request body is not valid JSON")
        try:
            scene_id = ws.add_scene(doc)
        except SceneValidationError as err:
            return _error(400, "invalid_scene", str(err), err.field)
        return {"id": scene_id}

    @app.get("/api/scenes/{scene_id}")
    def get_scene(scene_id: str):
        try:
            return ws.get_scene_doc(scene_id)
        except KeyError:
            return _error(404, "not_found", f"unknown scene {scene_id!r}")

    # -- sampling --------------------------------------------------------

    @app.post("/api/sample")
    async def sample(request: Request):
        body = await request.json()
        model = model_or_none()
        if model is None:
            return _error(409, "no_checkpoint", "no checkpoint loaded")
        try:
            scene = ws.get_scene(body["scene_id"])
        except KeyError:
            return _error(404, "not_found", "unknown scene", "scene_id")
        n = int(body.get("n", 1))
        seed = int(body.get("seed", 0))
        if n < 1 or n > 256:
            return _error(400, "bad_request", "n must be in [1, 256]", "n")
        layouts = [model.sample(scene.graph, seed + i) for i in range(n)]
        state["samples"][body["scene_id"]] = layouts
        return {
            "layouts": [_layout_json(l) for l in layouts],
            "accuracy": [scene_graph_accuracy(l, scene.graph) for l in layouts],
            "seed": seed,
        }

    @app.post("/api/interpolate")
    async def interpolate(request: Request):
        body = await request.json()
        model = model_or_none()
        if model is None:
            return _error(409, "no_checkpoint", "no checkpoint loaded")
        try:
            scene = ws.get_scene(body["scene_id"])
        except KeyError:
            return _error(404, "not_found", "unknown scene", "scene_id")
        steps = int(body.get("steps", 5))
        if steps < 2:
            return _error(400, "bad_request", "steps must be >= 2", "steps")
        n = len(scene.graph)
        za = np.random.default_rng(int(body["seed_a"])).standard_normal(
            (n, model.config.latent)).astype(np.float32)
        zb = np.random.default_rng(int(body["seed_b"])).standard_normal(
            (n, model.config.latent)).astype(np.float32)
        path = [model.interpolate(scene.graph, za, zb, i / (steps - 1))
                for i in range(steps)]
        return {"layouts": [_layout_json(l) for l in path],
                "t": [i / (steps - 1) for i in range(steps)]}

    # -- rendering -------------------------------------------------------

    def _resolve_layout(scene, scene_id, layout_index):
        if layout_index is None:
            if scene.layout is None:
                raise ValueError("scene has no stored layout; sample first")
            return scene.layout
        cached = state["samples"].get(scene_id, [])
        if not 0 <= layout_index < len(cached):
            raise ValueError(f"layout_index {layout_index} out of range "
                             f"({len(cached)} cached samples)")
        return cached[layout_index]

    @app.post("/api/render")
    async def render(request: Request):
        body = await request.json()
        try:
            scene = ws.get_scene(body["scene_id"])
        except KeyError:
            return _error(404, "not_found", "unknown scene", "scene_id")
        try:
            layout = _resolve_layout(scene, body["scene_id"],
                                     body.get("layout_index"))
        except ValueError as err:
            return _error(400, "bad_request", str(err), "layout_index")
        camera = (Camera.from_json(body["camera"]) if body.get("camera")
                  else default_camera(scene.room))
        cls = [node.class_id for node in scene.graph.nodes]
        target = rasterize_hard(layout, cls, camera, scene.room)
        stem = f"{body['scene_id']}_{body.get('layout_index', 'gt')}"
        depth_rel = os.path.join("renders", stem + ".pfm")
        sem_rel = os.path.join("renders", stem + ".pgm")
        write_pfm(os.path.join(ws.root, depth_rel), target.depth)
        write_pgm(os.path.join(ws.root, sem_rel), target.semantic)
        with ws._lock:
            ws._register("renders", stem + ".pfm", depth_rel)
            ws._register("renders", stem + ".pgm", sem_rel)
        return {"depth": depth_rel, "semantic": sem_rel,
                "svg": layout_svg(layout, cls, scene.room),
                "camera": camera.to_json()}

    @app.get("/api/heatmap")
    def heatmap(scene_id: str, samples: int = 2000, bins: int = 32,
                seed: int = 0):
        model = model_or_none()
        if model is None:
            return _error(409, "no_checkpoint", "no checkpoint loaded")
        try:
            scene = ws.get_scene(scene_id)
        except KeyError:
            return _error(404, "not_found", "unknown scene", "scene_id")
        if not 1 <= samples <= 50_000:
            return _error(400, "bad_request", "samples out of range", "samples")
        cls = [node.class_id for node in scene.graph.nodes]
        grids = {c: np.zeros((bins, bins)) for c in set(cls)}
        for i in range(samples):
            layout = model.sample(scene.graph, seed + i)
            for obj, c in zip(layout.objects, cls):
                cx, cy, _ = obj.center
                gx = min(int(cx * bins), bins - 1)
                gy = min(int(cy * bins), bins - 1)
                grids[c][gy, gx] += 1
        return {"bins": bins, "samples": samples,
                "classes": {CLASSES[c]: (g / g.sum()).tolist()
                            for c, g in grids.items() if g.sum() > 0}}

    # -- refinement jobs -------------------------------------------------

    @app.post("/api/refine")
    async def start_refine(request: Request):
        body = await request.json()
        model = model_or_none()
        if model is None:
            return _error(409, "no_checkpoint", "no checkpoint loaded")
        try:
            scene = ws.get_scene(body["scene_id"])
        except KeyError:
            return _error(404, "not_found", "unknown scene", "scene_id")
        try:
            depth = read_pfm(os.path.join(ws.root, body["target_depth"]))
            sem = read_pgm(os.path.join(ws.root, body["target_sem"]))
        except (KeyError, FileNotFoundError, ValueError) as err:
            return _error(400, "bad_target", f"cannot load target: {err}")
        target = RenderTarget(depth=depth, semantic=sem)
        cfg_doc = body.get("config", {})
        try:
            config = RefineConfig(**cfg_doc)
        except (TypeError, ValueError) as err:
            return _error(400, "bad_config", str(err), "config")
        seed = int(body.get("seed", 0))
        job = Job("refine")
        jobs[job.id] = job
        total = max(config.attempts * max(config.steps, 1), 1)

        def run():
            with refine_slots:
                job.set_state("running")
                try:
                    def on_step(attempt, step, components):
                        job.push({"attempt": attempt, "step": step, **components},
                                 (attempt * config.steps + step + 1) / total)

                    layout, report = refine(
                        model, scene.graph, None, target, config, seed,
                        scene.room, on_step=on_step)
                    report_doc = report.to_json()
                    report_doc["layout"] = _layout_json(layout)
                    rel = os.path.join("reports", f"refine_{job.id}.json")
                    ws.write_bytes(rel, json.dumps(report_doc).encode(),
                                   kind="reports", key=job.id)
                    job.result = report_doc
                    job.progress = 1.0
                    job.set_state("done")
                except Exception as err:   # surfaced through the job record
                    job.error = str(err)
                    job.set_state("failed")

        threading.Thread(target=run, daemon=True).start()
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    def poll_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return _error(404, "not_found", f"unknown job {job_id!r}")

        def stream():
            sent = 0
            while True:
                with job._lock:
                    pending = job.records[sent:]
                sent += len(pending)
                for record in pending:
                    yield json.dumps({"record": record}) + "\n"
                if job.state in ("done", "failed"):
                    final = job.snapshot()
                    if job.result is not None:
                        final["result"] = job.result
                    yield json.dumps(final) + "\n"
                    return
                time.sleep(0.05)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    # -- checkpoints -----------------------------------------------------

    @app.get("/api/checkpoints")
    def checkpoints():
        return {"checkpoints": ws.list_checkpoints(),
                "loaded": state["checkpoint"]}

    @app.post("/api/checkpoints/{ckpt_id}/load")
    def load_checkpoint(ckpt_id: str):
        try:
            path = ws.checkpoint_path(ckpt_id)
        except KeyError:
            return _error(404, "not_found", f"unknown checkpoint {ckpt_id!r}")
        state["model"] = SlnModel.load(path)
        state["checkpoint"] = ckpt_id
        return {"loaded": ckpt_id,
                "config": state["model"].config.to_json()}

    if frontend_dir and os.path.isdir(frontend_dir):
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="ui")
    return app
