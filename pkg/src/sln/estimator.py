"""Scikit-learn style facade over the layout generator.

LayoutGenerator wraps dataset -> trainer -> model behind the familiar
fit/sample/score surface so the engine composes with sklearn tooling
(get_params/set_params, clone, grid search over hyperparameters).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import Scene, SceneGraph
from .metrics import scene_graph_accuracy
from .model import ModelConfig, SlnModel
from .train import TrainConfig, Trainer

__all__ = ["LayoutGenerator", "check_scenes"]


def check_scenes(scenes, require_layout: bool = True):
    """Validate a scene collection, returning it as a list."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("expected a non-empty collection of scenes")
    for i, s in enumerate(scenes):
        if not isinstance(s, Scene):
            raise TypeError(f"scenes[{i}] is {type(s).__name__}, expected Scene")
        if require_layout and s.layout is None:
            raise ValueError(f"scenes[{i}] has no ground-truth layout")
    return scenes


class LayoutGenerator(BaseEstimator):
    """Graph-conditioned layout sampler with the estimator interface.

    fit() trains the underlying conditional VAE; sample() decodes layouts
    for a scene graph; score() is the mean scene-graph accuracy of prior
    samples on held-out scenes (0..100).
    """

    def __init__(self, hidden=512, latent=64, gcn_layers=5, variant="full",
                 batch_size=128, learning_rate=1e-4, total_batches=20_000,
                 kl_weight=0.1, keep_prob=0.7, seed=0,
                 checkpoint_dir="checkpoints"):
        self.hidden = hidden
        self.latent = latent
        self.gcn_layers = gcn_layers
        self.variant = variant
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.total_batches = total_batches
        self.kl_weight = kl_weight
        self.keep_prob = keep_prob
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir

    def fit(self, X, y=None):
        """Train on a collection of scenes with ground-truth layouts."""
        scenes = check_scenes(X)
        config = TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            total_batches=self.total_batches, kl_weight=self.kl_weight,
            keep_prob=self.keep_prob, seed=self.seed, variant=self.variant,
            checkpoint_dir=self.checkpoint_dir)
        mc = ModelConfig(hidden=self.hidden, latent=self.latent,
                         gcn_layers=self.gcn_layers, variant=self.variant)
        trainer = Trainer(config, scenes, [], model_config=mc)
        trainer.train()
        self.model_ = trainer.model
        self.history_ = trainer.batch_counter
        return self

    def _model(self) -> SlnModel:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "LayoutGenerator is not fitted; call fit() or load().")
        return self.model_

    def sample(self, graph: SceneGraph, n: int = 1, seed: int = 0):
        """n layouts decoded from prior latents; deterministic per seed."""
        if n < 1:
            raise ValueError("n must be positive")
        model = self._model()
        return [model.sample(graph, seed + i) for i in range(n)]

    def score(self, X, y=None) -> float:
        """Mean scene-graph accuracy of one prior sample per scene."""
        scenes = check_scenes(X, require_layout=False)
        model = self._model()
        accs = [scene_graph_accuracy(model.sample(s.graph, self.seed + i), s.graph)
                for i, s in enumerate(scenes)]
        return float(np.mean(accs))

    def save(self, path: str):
        self._model().save(path)
        return self

    def load(self, path: str):
        """Attach a previously trained model; marks the estimator fitted."""
        self.model_ = SlnModel.load(path)
        return self
