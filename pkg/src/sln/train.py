"""Training loop with checkpointing, resume, and periodic evaluation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, OptimizerError, Tape, Tensor
from .dataset import sample_training_graph
from .metrics import diversity_std, l1_box_loss, scene_graph_accuracy
from .model import GraphBatch, ModelConfig, SlnModel

__all__ = ["TrainConfig", "TrainingError", "Trainer", "evaluate"]


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss); the last good checkpoint survives."""


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    total_batches: int = 20_000
    kl_weight: float = 0.1
    pos_weight: float = 1.0
    rot_weight: float = 1.0
    eval_interval: int = 500
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    keep_prob: float = 0.7
    attr_none_prob: float = 0.5
    variant: str = "full"      # "full" cVAE or "gcn" deterministic ablation
    eval_scenes: int = 20      # val subset used for the in-training metric log
    eval_samples: int = 3

    def __post_init__(self):
        if min(self.batch_size, self.total_batches, self.eval_interval) < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


class Trainer:
    def __init__(self, config: TrainConfig, train_scenes, val_scenes,
                 model_config: ModelConfig | None = None):
        if not train_scenes:
            raise ValueError("empty training set")
        self.config = config
        self.train_scenes = list(train_scenes)
        self.val_scenes = list(val_scenes)
        mc = model_config or ModelConfig()
        if config.variant != mc.variant:
            mc = ModelConfig(hidden=mc.hidden, latent=mc.latent,
                             gcn_layers=mc.gcn_layers, variant=config.variant)
        self.model = SlnModel(mc, seed=config.seed)
        self.optimizer = Adam(self.model.params, lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed)
        self.batch_counter = 0
        os.makedirs(config.checkpoint_dir, exist_ok=True)

    # -- checkpointing ---------------------------------------------------

    def _checkpoint_path(self, name="latest.ckpt"):
        return os.path.join(self.config.checkpoint_dir, name)

    def save_checkpoint(self, name="latest.ckpt"):
        arrays = self.model.param_arrays()
        arrays = dict(arrays)
        arrays.update(self.optimizer.state_arrays())
        meta = {
            "model": self.model.config.to_json(),
            "train_config": asdict(self.config),
            "batch_counter": self.batch_counter,
            "rng_state": _rng_state_to_json(self.rng),
            "adam_steps": self.optimizer.state_steps(),
        }
        ad.save_checkpoint(self._checkpoint_path(name), arrays, meta)

    def load_checkpoint(self, path: str):
        arrays, meta = ad.load_checkpoint(path)
        self.model.load_arrays(arrays)
        self.optimizer.load_state(arrays, meta["adam_steps"])
        self.batch_counter = int(meta["batch_counter"])
        self.rng = _rng_state_from_json(meta["rng_state"])

    # -- the loop --------------------------------------------------------

    def _make_batch(self) -> GraphBatch:
        idx = self.rng.integers(0, len(self.train_scenes),
                                size=self.config.batch_size)
        graphs, layouts = [], []
        for i in idx:
            scene = self.train_scenes[int(i)]
            graphs.append(sample_training_graph(
                scene, self.config.keep_prob, self.config.attr_none_prob, self.rng))
            layouts.append(scene.layout)
        return GraphBatch.from_scenes(graphs, layouts)

    def train_step(self) -> dict:
        batch = self._make_batch()
        with Tape() as tape:
            if self.config.variant == "gcn":
                mu = logvar = None
                z = Tensor(np.zeros((batch.num_objects, self.model.config.latent),
                                    dtype=np.float32))
            else:
                mu, logvar = self.model.encode(batch, training=True)
                noise = self.rng.standard_normal(mu.shape).astype(np.float32)
                z = self.model.reparameterize(mu, logvar, noise)
            boxes, rot_logits = self.model.decode(batch, z, training=True)
            total, components = self.model.loss(
                batch, boxes, rot_logits, mu, logvar,
                kl_weight=self.config.kl_weight,
                pos_weight=self.config.pos_weight,
                rot_weight=self.config.rot_weight)
            if not np.isfinite(components["total"]):
                raise TrainingError(
                    f"non-finite loss at batch {self.batch_counter}; "
                    "last good checkpoint retained")
            tape.backward(total)
        try:
            self.optimizer.step()
        except OptimizerError as err:
            raise TrainingError(
                f"batch {self.batch_counter}: {err}; last good checkpoint retained"
            ) from None
        self.batch_counter += 1
        return components

    def _val_snapshot(self) -> float | None:
        if not self.val_scenes:
            return None
        subset = self.val_scenes[: self.config.eval_scenes]
        report = evaluate(self.model, subset,
                          samples_per_graph=self.config.eval_samples,
                          seed=self.config.seed)
        return report["scene_graph_accuracy"]

    def train(self, log_path: str | None = None):
        """Run to total_batches; returns the list of logged metric records."""
        log_path = log_path or os.path.join(self.config.checkpoint_dir,
                                            "metrics.ldjson")
        records = []
        mode = "a" if self.batch_counter else "w"
        with open(log_path, mode) as log:
            while self.batch_counter < self.config.total_batches:
                components = self.train_step()
                if (self.batch_counter % self.config.eval_interval == 0
                        or self.batch_counter == self.config.total_batches):
                    record = {"batch": self.batch_counter, **components}
                    acc = self._val_snapshot()
                    if acc is not None:
                        record["val_accuracy"] = acc
                    records.append(record)
                    log.write(json.dumps(record, sort_keys=True) + "\n")
                    log.flush()
                    self.save_checkpoint("latest.ckpt")
        self.save_checkpoint("final.ckpt")
        return records


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def _rng_state_from_json(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    fixed = dict(state)
    if "state" in fixed and isinstance(fixed["state"], dict):
        inner = dict(fixed["state"])
        if "state" in inner:
            inner["state"] = int(inner["state"])
        if "inc" in inner:
            inner["inc"] = int(inner["inc"])
        fixed["state"] = inner
    rng.bit_generator.state = fixed
    return rng


def evaluate(model: SlnModel, scenes, samples_per_graph: int = 10,
             seed: int = 0, z_mode: str | None = None) -> dict:
    """Scene-graph accuracy, L1 box loss, and per-object diversity STDs.

    z_mode: "prior" (z ~ N(0,I)), "zero" (deterministic), or "noise"
    (N(0,1) regardless of variant); defaults to the model's variant.
    """
    if not scenes:
        raise ValueError("empty evaluation set")
    if z_mode is None:
        z_mode = "zero" if model.config.variant == "gcn" else "prior"
    rng = np.random.default_rng(seed)
    accs, l1s, stds = [], [], []
    for scene in scenes:
        graph = scene.graph
        n = len(graph)
        samples = []
        for _ in range(samples_per_graph):
            if z_mode == "zero":
                z = np.zeros((n, model.config.latent), dtype=np.float32)
            else:
                z = rng.standard_normal((n, model.config.latent)).astype(np.float32)
            samples.append(model.sample_with_z(graph, z))
        accs.extend(scene_graph_accuracy(s, graph) for s in samples)
        if scene.layout is not None:
            l1s.extend(l1_box_loss(s, scene.layout) for s in samples)
        if samples_per_graph >= 2:
            stds.append(diversity_std(samples, mode="per-object"))
    report = {
        "scene_graph_accuracy": float(np.mean(accs)),
        "l1_box_loss": float(np.mean(l1s)) if l1s else None,
        "z_mode": z_mode,
        "samples_per_graph": samples_per_graph,
    }
    if stds:
        arr = np.asarray(stds)
        report["std_size"] = float(arr[:, 0].mean())
        report["std_position"] = float(arr[:, 1].mean())
        report["std_rotation"] = float(arr[:, 2].mean())
    return report
