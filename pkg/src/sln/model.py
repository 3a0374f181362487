"""Graph-convolutional conditional VAE over scene graphs and layouts.

Encoder embeds [type | box | rotation | attributes] per object and predicates
per triplet, runs five graph-convolution layers with mean pooling and batch
norm, and emits a 64-d diagonal-Gaussian posterior per object. The decoder
embeds [type | attributes | z] and the graph and emits six squashed box
coordinates plus 24 rotation logits per object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import (
    ATTRIBUTES,
    CLASSES,
    NUM_ROTATION_BINS,
    ObjectLayout,
    PREDICATES,
    SceneGraph,
    SceneLayout,
)

__all__ = ["ModelConfig", "GraphBatch", "SlnModel", "layout_from_arrays"]

TYPE_DIM, BOX_DIM, ROT_DIM, ATTR_DIM, PRED_DIM = 48, 48, 16, 16, 128
OBJ_DIM = TYPE_DIM + BOX_DIM + ROT_DIM + ATTR_DIM  # encoder object vector


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 512
    latent: int = 64
    gcn_layers: int = 5
    variant: str = "full"  # "full" cVAE or deterministic "gcn" ablation

    def to_json(self) -> dict:
        return {"hidden": self.hidden, "latent": self.latent,
                "gcn_layers": self.gcn_layers, "variant": self.variant,
                "classes": list(CLASSES), "predicates": list(PREDICATES),
                "embedding_dims": [TYPE_DIM, BOX_DIM, ROT_DIM, ATTR_DIM, PRED_DIM]}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        return cls(hidden=doc["hidden"], latent=doc["latent"],
                   gcn_layers=doc["gcn_layers"], variant=doc.get("variant", "full"))


@dataclass
class GraphBatch:
    """Disjoint union of graphs with index maps back to scenes."""

    class_ids: np.ndarray          # (N,)
    attr_ids: np.ndarray           # (N, 2) height/volume attribute ids, 0 = none
    edges: np.ndarray              # (E, 2) subject/object node indices
    pred_ids: np.ndarray           # (E,)
    scene_index: np.ndarray        # (N,)
    n_scenes: int
    boxes: np.ndarray | None = None      # (N, 6)
    rot_bins: np.ndarray | None = None   # (N,)

    @property
    def num_objects(self) -> int:
        return len(self.class_ids)

    @classmethod
    def from_scenes(cls, graphs, layouts=None) -> "GraphBatch":
        class_ids, attr_ids, scene_index = [], [], []
        edges, pred_ids = [], []
        boxes, rot_bins = [], []
        offset = 0
        for si, graph in enumerate(graphs):
            layout = layouts[si] if layouts is not None else None
            if layout is not None and len(layout) != len(graph):
                raise ValueError(
                    f"scene {si}: layout of {len(layout)} boxes for {len(graph)} nodes")
            for node in graph.nodes:
                class_ids.append(node.class_id)
                h = next((a for a in node.attributes if a in ("tall", "short")), "none")
                v = next((a for a in node.attributes if a in ("large", "small")), "none")
                attr_ids.append((ATTRIBUTES.index(h), ATTRIBUTES.index(v)))
                scene_index.append(si)
            for t in graph.triplets:
                edges.append((t.subject + offset, t.object + offset))
                pred_ids.append(PREDICATES.index(t.predicate))
            if layout is not None:
                for box in layout.objects:
                    boxes.append(box.as_tuple()[:6])
                    rot_bins.append(box.rotation_bin)
            offset += len(graph)
        return cls(
            class_ids=np.asarray(class_ids, dtype=np.int64),
            attr_ids=np.asarray(attr_ids, dtype=np.int64).reshape(-1, 2),
            edges=(np.asarray(edges, dtype=np.int64).reshape(-1, 2)
                   if edges else np.zeros((0, 2), dtype=np.int64)),
            pred_ids=np.asarray(pred_ids, dtype=np.int64),
            scene_index=np.asarray(scene_index, dtype=np.int64),
            n_scenes=len(list(graphs)),
            boxes=np.asarray(boxes, dtype=np.float32) if boxes else None,
            rot_bins=np.asarray(rot_bins, dtype=np.int64) if rot_bins else None,
        )


def layout_from_arrays(boxes: np.ndarray, rot_bins: np.ndarray) -> SceneLayout:
    """Build a valid SceneLayout from raw (N,6) corners, repairing inversions."""
    out = []
    for row, rb in zip(boxes, rot_bins):
        lo = np.minimum(row[:3], row[3:])
        hi = np.maximum(row[:3], row[3:])
        hi = np.maximum(hi, lo + 1e-4)
        out.append(ObjectLayout(float(lo[0]), float(lo[1]), float(lo[2]),
                                float(hi[0]), float(hi[1]), float(hi[2]),
                                rotation_bin=int(rb) % NUM_ROTATION_BINS))
    return SceneLayout(tuple(out))


class SlnModel:
    """Parameter store plus encode/decode/loss/sample for the layout cVAE."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, np.ndarray] = {}  # batch-norm running stats
        self._init_params(np.random.default_rng(seed))

    # -- parameters ------------------------------------------------------

    def _linear(self, rng, name, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.params[f"{name}/w"] = Tensor(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32))
        self.params[f"{name}/b"] = Tensor(np.zeros(fan_out, dtype=np.float32))

    def _embedding(self, rng, name, count, dim):
        self.params[name] = Tensor(
            (rng.standard_normal((count, dim)) * 0.05).astype(np.float32))

    def _init_params(self, rng):
        h = self.config.hidden
        for side in ("enc", "dec"):
            self._embedding(rng, f"{side}/type_emb", len(CLASSES), TYPE_DIM)
            self._embedding(rng, f"{side}/attr_emb", len(ATTRIBUTES), ATTR_DIM)
            self._embedding(rng, f"{side}/pred_emb", len(PREDICATES), PRED_DIM)
            din = OBJ_DIM if side == "enc" else TYPE_DIM + ATTR_DIM + self.config.latent
            pdin = PRED_DIM
            for layer in range(self.config.gcn_layers):
                self._linear(rng, f"{side}/gcn{layer}/l1", 2 * din + pdin, h)
                self._linear(rng, f"{side}/gcn{layer}/l2", h, 3 * h)
                self.params[f"{side}/gcn{layer}/bn_gamma"] = Tensor(np.ones(h, dtype=np.float32))
                self.params[f"{side}/gcn{layer}/bn_beta"] = Tensor(np.zeros(h, dtype=np.float32))
                self.stats[f"{side}/gcn{layer}/bn_mean"] = np.zeros(h, dtype=np.float32)
                self.stats[f"{side}/gcn{layer}/bn_var"] = np.ones(h, dtype=np.float32)
                din = pdin = h
        self._linear(rng, "enc/box_in", 6, BOX_DIM)
        self._embedding(rng, "enc/rot_emb", NUM_ROTATION_BINS, ROT_DIM)
        self._linear(rng, "enc/head", h, 2 * self.config.latent)
        self._linear(rng, "dec/box_out", h, 6)
        self._linear(rng, "dec/rot_out", h, NUM_ROTATION_BINS)

    def param_arrays(self) -> dict:
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.stats)
        return out

    def load_arrays(self, arrays: dict):
        for name, t in self.params.items():
            t.data = np.asarray(arrays[name], dtype=np.float32).copy()
        for name in self.stats:
            self.stats[name] = np.asarray(arrays[name], dtype=np.float32).copy()

    def clone(self) -> "SlnModel":
        other = SlnModel(self.config, seed=0)
        other.load_arrays(self.param_arrays())
        return other

    # -- building blocks -------------------------------------------------

    def _apply_linear(self, name, x: Tensor) -> Tensor:
        return ad.matmul(x, self.params[f"{name}/w"]) + self.params[f"{name}/b"]

    def _attr_vec(self, side, batch: GraphBatch) -> Tensor:
        table = self.params[f"{side}/attr_emb"]
        h = ad.embedding_lookup(table, batch.attr_ids[:, 0])
        v = ad.embedding_lookup(table, batch.attr_ids[:, 1])
        return (h + v) * 0.5

    def _gcn(self, side, nodes: Tensor, preds: Tensor, batch: GraphBatch,
             training: bool) -> Tensor:
        n = batch.num_objects
        for layer in range(self.config.gcn_layers):
            if len(batch.edges):
                s = ad.gather(nodes, batch.edges[:, 0])
                o = ad.gather(nodes, batch.edges[:, 1])
                trip = ad.concat([s, preds, o], axis=1)
                hid = ad.relu(self._apply_linear(f"{side}/gcn{layer}/l1", trip))
                out = self._apply_linear(f"{side}/gcn{layer}/l2", hid)
                h = self.config.hidden
                s_cand = ad.slice_(out, 1, 0, h)
                p_new = ad.slice_(out, 1, h, 2 * h)
                o_cand = ad.slice_(out, 1, 2 * h, 3 * h)
                rows = np.concatenate([batch.edges[:, 0], batch.edges[:, 1]])
                cands = ad.concat([s_cand, o_cand], axis=0)
                nodes = ad.scatter_mean(cands, rows, n)
                preds = p_new
            else:
                # no triplets: nodes fall back to a zero field of hidden width
                nodes = Tensor(np.zeros((n, self.config.hidden), dtype=np.float32))
                preds = Tensor(np.zeros((0, self.config.hidden), dtype=np.float32))
            nodes = ad.batch_norm(
                nodes,
                self.params[f"{side}/gcn{layer}/bn_gamma"],
                self.params[f"{side}/gcn{layer}/bn_beta"],
                self.stats[f"{side}/gcn{layer}/bn_mean"],
                self.stats[f"{side}/gcn{layer}/bn_var"],
                training=training,
            )
        return nodes

    # -- encode / decode -------------------------------------------------

    def encode(self, batch: GraphBatch, training: bool = False):
        """Per-object posterior (mu, logvar), each (N, latent)."""
        if batch.boxes is None or batch.rot_bins is None:
            raise ValueError("encode requires a layout aligned with the graph")
        obj = ad.concat([
            ad.embedding_lookup(self.params["enc/type_emb"], batch.class_ids),
            self._apply_linear("enc/box_in", Tensor(batch.boxes)),
            ad.embedding_lookup(self.params["enc/rot_emb"], batch.rot_bins),
            self._attr_vec("enc", batch),
        ], axis=1)
        preds = ad.embedding_lookup(self.params["enc/pred_emb"], batch.pred_ids)
        nodes = self._gcn("enc", obj, preds, batch, training)
        head = self._apply_linear("enc/head", nodes)
        mu = ad.slice_(head, 1, 0, self.config.latent)
        logvar = ad.slice_(head, 1, self.config.latent, 2 * self.config.latent)
        return mu, logvar

    @staticmethod
    def reparameterize(mu: Tensor, logvar: Tensor, noise: np.ndarray) -> Tensor:
        """z = mu + exp(logvar / 2) * noise; differentiable in mu and logvar."""
        return mu + ad.exp(logvar * 0.5) * Tensor(noise.astype(np.float32))

    def decode(self, batch: GraphBatch, z: Tensor, training: bool = False):
        """(boxes in (0,1) of shape (N,6), rotation logits of shape (N,24))."""
        if z.shape != (batch.num_objects, self.config.latent):
            raise ValueError(
                f"latents of shape {z.shape} for {batch.num_objects} objects "
                f"of dim {self.config.latent}")
        obj = ad.concat([
            ad.embedding_lookup(self.params["dec/type_emb"], batch.class_ids),
            self._attr_vec("dec", batch),
            z,
        ], axis=1)
        preds = ad.embedding_lookup(self.params["dec/pred_emb"], batch.pred_ids)
        nodes = self._gcn("dec", obj, preds, batch, training)
        boxes = ad.sigmoid(self._apply_linear("dec/box_out", nodes))
        rot_logits = self._apply_linear("dec/rot_out", nodes)
        return boxes, rot_logits

    # -- loss -------------------------------------------------------------

    def loss(self, batch: GraphBatch, boxes: Tensor, rot_logits: Tensor,
             mu: Tensor | None, logvar: Tensor | None,
             kl_weight: float = 0.1, pos_weight: float = 1.0,
             rot_weight: float = 1.0):
        """Weighted cVAE loss; per-scene sums averaged over the batch.

        Returns (total Tensor, components dict of floats).
        """
        b = float(batch.n_scenes)
        if mu is not None:
            kl = ad.sum_(ad.square(mu) + ad.exp(logvar) - 1.0 - logvar) * (0.5 / b)
        else:
            kl = Tensor(0.0)
        l_pos = ad.sum_(ad.abs_(boxes - Tensor(batch.boxes))) * (1.0 / (6.0 * b))
        onehot = np.zeros((batch.num_objects, NUM_ROTATION_BINS), dtype=np.float32)
        onehot[np.arange(batch.num_objects), batch.rot_bins] = 1.0
        l_rot = ad.sum_(ad.log_softmax(rot_logits, axis=1) * Tensor(onehot)) * (-1.0 / b)
        total = kl * kl_weight + l_pos * pos_weight + l_rot * rot_weight
        components = {"kl": kl.item(), "position": l_pos.item(),
                      "rotation": l_rot.item(), "total": total.item()}
        return total, components

    # -- inference --------------------------------------------------------

    def sample(self, graph: SceneGraph, seed: int) -> SceneLayout:
        """Decode one layout from prior latents; deterministic per seed."""
        batch = GraphBatch.from_scenes([graph])
        rng = np.random.default_rng(seed)
        z = Tensor(rng.standard_normal(
            (batch.num_objects, self.config.latent)).astype(np.float32))
        if self.config.variant == "gcn":
            z = Tensor(np.zeros_like(z.data))
        boxes, rot_logits = self.decode(batch, z)
        return layout_from_arrays(boxes.data, rot_logits.data.argmax(axis=1))

    def sample_with_z(self, graph: SceneGraph, z: np.ndarray) -> SceneLayout:
        batch = GraphBatch.from_scenes([graph])
        boxes, rot_logits = self.decode(batch, Tensor(z))
        return layout_from_arrays(boxes.data, rot_logits.data.argmax(axis=1))

    def interpolate(self, graph: SceneGraph, z1: np.ndarray, z2: np.ndarray,
                    t: float) -> SceneLayout:
        """Decode the convex combination (1-t) z1 + t z2."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"interpolation parameter {t} outside [0, 1]")
        return self.sample_with_z(graph, (1.0 - t) * z1 + t * z2)

    def posterior(self, graph: SceneGraph, layout: SceneLayout):
        batch = GraphBatch.from_scenes([graph], [layout])
        mu, logvar = self.encode(batch)
        return mu.data, logvar.data

    # -- persistence -------------------------------------------------------

    def save(self, path: str, meta: dict | None = None):
        meta = dict(meta or {})
        meta["model"] = self.config.to_json()
        ad.save_checkpoint(path, self.param_arrays(), meta)

    @classmethod
    def load(cls, path: str) -> "SlnModel":
        arrays, meta = ad.load_checkpoint(path)
        model = cls(ModelConfig.from_json(meta["model"]), seed=0)
        model.load_arrays(arrays)
        return model
