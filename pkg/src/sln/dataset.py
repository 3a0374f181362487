"""Procedural bedroom-scene generator and the Random/Perturbed baselines.

Scenes are emitted in normalized [0,1] room coordinates. Every floor-standing
object (min_z == 0) is placed with a pairwise-disjoint footprint via rejection
sampling; stacked objects (lamp on nightstand, television on dresser) rest on
their supporter with footprints strictly inside it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CLASSES,
    NUM_ROTATION_BINS,
    ObjectLayout,
    ObjectNode,
    RoomSpec,
    Scene,
    SceneGraph,
    SceneLayout,
    footprint_iou,
    scene_from_json,
    scene_to_json,
)
from .relations import (
    ExtractorConfig,
    PercentileTable,
    extract_scene_graph,
    full_relation_set,
)

__all__ = [
    "GeneratorConfig",
    "GenerationError",
    "generate_scene",
    "random_layout",
    "perturbed_layout",
    "generate_dataset",
    "load_dataset",
    "sample_training_graph",
]


class GenerationError(RuntimeError):
    """Rejection sampling could not place the requested objects."""


# per-class normalized extents: (mean_x, mean_y, mean_z), shared std scale
SIZE_PRIORS = {
    "bed": ((0.42, 0.52, 0.20), 0.030),
    "nightstand": ((0.12, 0.12, 0.18), 0.010),
    "lamp": ((0.06, 0.06, 0.15), 0.008),
    "desk": ((0.30, 0.15, 0.26), 0.015),
    "dresser": ((0.28, 0.13, 0.28), 0.015),
    "sofa": ((0.35, 0.16, 0.25), 0.020),
    "cabinet": ((0.20, 0.12, 0.40), 0.015),
    "wardrobe": ((0.25, 0.14, 0.65), 0.020),
    "chair": ((0.12, 0.12, 0.28), 0.010),
    "rug": ((0.30, 0.22, 0.004), 0.020),
    "television": ((0.18, 0.05, 0.12), 0.010),
    "shelf": ((0.22, 0.08, 0.35), 0.015),
    "table": ((0.22, 0.22, 0.25), 0.015),
    "window": ((0.25, 0.03, 0.30), 0.020),
    "door": ((0.16, 0.03, 0.70), 0.008),
}

_FILLER_CLASSES = ("desk", "dresser", "sofa", "cabinet", "wardrobe", "chair",
                   "rug", "shelf", "table", "window", "door")
_WALL_GAP = 0.01
_MARGIN = 0.02
_FOOT_GAP = 0.005  # clearance between floor footprints


@dataclass(frozen=True)
class GeneratorConfig:
    min_objects: int = 4
    max_objects: int = 13
    size_jitter: float = 1.0            # scales the per-class size std
    rejection_limit: int = 400          # placement attempts per scene
    room_width: tuple = (3.2, 4.8)
    room_depth: tuple = (3.2, 4.8)
    room_height: tuple = (2.6, 3.0)

    def __post_init__(self):
        if self.min_objects > self.max_objects or self.min_objects < 1:
            raise ValueError("object-count range is empty")
        if self.size_jitter < 0:
            raise ValueError("size_jitter must be non-negative")


def _sample_size(cls: str, rng: np.random.Generator, jitter: float = 1.0):
    (mx, my, mz), std = SIZE_PRIORS[cls]
    s = np.array([mx, my, mz]) + rng.normal(0.0, std * jitter, size=3)
    floor = np.array([0.02, 0.02, 0.003 if cls == "rug" else 0.02])
    return np.maximum(s, floor)


def _box(cx, cy, z0, sx, sy, sz, rot):
    return ObjectLayout(float(cx - sx / 2), float(cy - sy / 2), float(z0),
                        float(cx + sx / 2), float(cy + sy / 2), float(z0 + sz),
                        rotation_bin=int(rot))


def _footprint_clear(candidate: ObjectLayout, floor_boxes) -> bool:
    pad = _FOOT_GAP
    grown = ObjectLayout(max(candidate.min_x - pad, 0.0), max(candidate.min_y - pad, 0.0),
                         candidate.min_z, min(candidate.max_x + pad, 1.0),
                         min(candidate.max_y + pad, 1.0), candidate.max_z,
                         candidate.rotation_bin)
    return all(footprint_iou(grown, other) == 0.0 for other in floor_boxes)


# wall index -> (outward normal facing into room) rotation bin
_WALL_ROT = {0: 6, 1: 12, 2: 18, 3: 0}  # -y, +x, +y, -x walls


def _against_wall(wall: int, sx, sy, rng: np.random.Generator):
    """Center position flush against a wall; sizes given in room axes."""
    if wall in (0, 2):
        cx = rng.uniform(_MARGIN + sx / 2, 1.0 - _MARGIN - sx / 2)
        cy = _WALL_GAP + sy / 2 if wall == 0 else 1.0 - _WALL_GAP - sy / 2
    else:
        cy = rng.uniform(_MARGIN + sy / 2, 1.0 - _MARGIN - sy / 2)
        cx = 1.0 - _WALL_GAP - sx / 2 if wall == 1 else _WALL_GAP + sx / 2
    return cx, cy


def generate_scene(config: GeneratorConfig, seed: int):
    """One bedroom: (room, nodes, layout); deterministic per (config, seed)."""
    rng = np.random.default_rng(seed)
    room = RoomSpec(float(rng.uniform(*config.room_width)),
                    float(rng.uniform(*config.room_depth)),
                    float(rng.uniform(*config.room_height)))
    target = int(rng.integers(config.min_objects, config.max_objects + 1))

    classes: list[str] = []
    boxes: list[ObjectLayout] = []
    floor_boxes: list[ObjectLayout] = []
    attempts = 0

    def spend():
        nonlocal attempts
        attempts += 1
        if attempts > config.rejection_limit:
            raise GenerationError(
                f"rejection limit {config.rejection_limit} exceeded at seed {seed}")

    # bed against a wall, head to the wall
    wall = int(rng.integers(0, 4))
    while True:
        spend()
        s = _sample_size("bed", rng, config.size_jitter)
        sx, sy = (s[0], s[1]) if wall in (0, 2) else (s[1], s[0])
        cx, cy = _against_wall(wall, sx, sy, rng)
        bed = _box(cx, cy, 0.0, sx, sy, s[2], _WALL_ROT[wall])
        if _footprint_clear(bed, floor_boxes):
            break
    classes.append("bed")
    boxes.append(bed)
    floor_boxes.append(bed)

    # nightstands flank the bed along the wall; lamp may rest on one
    n_stands = int(rng.integers(0, 3)) if target > len(classes) else 0
    stand_indices = []
    for side in range(n_stands):
        if len(classes) >= target:
            break
        s = _sample_size("nightstand", rng, config.size_jitter)
        sign = -1 if side == 0 else 1
        if wall in (0, 2):
            cx = (bed.min_x - _FOOT_GAP - s[0] / 2 if sign < 0
                  else bed.max_x + _FOOT_GAP + s[0] / 2)
            cy = bed.min_y + s[1] / 2 if wall == 0 else bed.max_y - s[1] / 2
        else:
            cy = (bed.min_y - _FOOT_GAP - s[1] / 2 if sign < 0
                  else bed.max_y + _FOOT_GAP + s[1] / 2)
            cx = bed.max_x - s[0] / 2 if wall == 1 else bed.min_x + s[0] / 2
        try:
            stand = _box(cx, cy, 0.0, s[0], s[1], s[2], bed.rotation_bin)
        except ValueError:
            continue
        if not (0.0 <= stand.min_x and stand.max_x <= 1.0
                and 0.0 <= stand.min_y and stand.max_y <= 1.0):
            continue
        if not _footprint_clear(stand, floor_boxes):
            continue
        stand_indices.append(len(classes))
        classes.append("nightstand")
        boxes.append(stand)
        floor_boxes.append(stand)

    if stand_indices and len(classes) < target and rng.random() < 0.8:
        base = boxes[stand_indices[0]]
        s = _sample_size("lamp", rng, config.size_jitter)
        sx = min(s[0], (base.max_x - base.min_x) * 0.6)
        sy = min(s[1], (base.max_y - base.min_y) * 0.6)
        cx, cy, _ = base.center
        classes.append("lamp")
        boxes.append(_box(cx, cy, base.max_z, sx, sy, s[2], base.rotation_bin))

    # dresser with a television on top
    if len(classes) + 1 < target and rng.random() < 0.7:
        placed = None
        for _ in range(20):
            spend()
            s = _sample_size("dresser", rng, config.size_jitter)
            w = int(rng.integers(0, 4))
            sx, sy = (s[0], s[1]) if w in (0, 2) else (s[1], s[0])
            cx, cy = _against_wall(w, sx, sy, rng)
            cand = _box(cx, cy, 0.0, sx, sy, s[2], _WALL_ROT[w])
            if _footprint_clear(cand, floor_boxes):
                placed = cand
                break
        if placed is not None:
            classes.append("dresser")
            boxes.append(placed)
            floor_boxes.append(placed)
            ts = _sample_size("television", rng, config.size_jitter)
            tx = min(ts[0], (placed.max_x - placed.min_x) * 0.7)
            ty = min(ts[1], (placed.max_y - placed.min_y) * 0.7)
            cx, cy, _ = placed.center
            classes.append("television")
            boxes.append(_box(cx, cy, placed.max_z, tx, ty, ts[2],
                              placed.rotation_bin))

    # fillers until the target count is reached
    while len(classes) < target:
        spend()
        cls = _FILLER_CLASSES[int(rng.integers(0, len(_FILLER_CLASSES)))]
        s = _sample_size(cls, rng, config.size_jitter)
        if cls in ("window", "door"):
            w = int(rng.integers(0, 4))
            sx, sy = (s[0], s[1]) if w in (0, 2) else (s[1], s[0])
            cx, cy = _against_wall(w, sx, sy, rng)
            z0 = 0.0 if cls == "door" else float(rng.uniform(0.25, 0.45))
            z0 = min(z0, 1.0 - s[2] - 0.01)
            cand = _box(cx, cy, z0, sx, sy, s[2], _WALL_ROT[w])
            if cls == "door":
                if not _footprint_clear(cand, floor_boxes):
                    continue
                floor_boxes.append(cand)
        else:
            rot = int(rng.integers(0, 4)) * 6
            cx = rng.uniform(_MARGIN + s[0] / 2, 1.0 - _MARGIN - s[0] / 2)
            cy = rng.uniform(_MARGIN + s[1] / 2, 1.0 - _MARGIN - s[1] / 2)
            cand = _box(cx, cy, 0.0, s[0], s[1], s[2], rot)
            if not _footprint_clear(cand, floor_boxes):
                continue
            floor_boxes.append(cand)
        classes.append(cls)
        boxes.append(cand)

    nodes = tuple(ObjectNode(id=i, class_id=CLASSES.index(c))
                  for i, c in enumerate(classes))
    return room, nodes, SceneLayout(tuple(boxes))


# -- baselines ----------------------------------------------------------


def random_layout(nodes, seed: int) -> SceneLayout:
    """Uniform positions with deterministic class-prior sizes; uniform rotation."""
    rng = np.random.default_rng(seed)
    out = []
    for node in nodes:
        (sx, sy, sz), _ = SIZE_PRIORS[CLASSES[node.class_id]]
        sz = max(sz, 0.003)
        cx = rng.uniform(sx / 2, 1.0 - sx / 2)
        cy = rng.uniform(sy / 2, 1.0 - sy / 2)
        z0 = rng.uniform(0.0, max(1.0 - sz, 0.0))
        rot = int(rng.integers(0, NUM_ROTATION_BINS))
        out.append(_box(cx, cy, z0, sx, sy, sz, rot))
    return SceneLayout(tuple(out))


def perturbed_layout(ground_truth: SceneLayout, seed: int,
                     variance: float = 0.1, rotation_std: float = 3.0,
                     clip: bool = True) -> SceneLayout:
    """Gaussian center noise (variance per ground axis) and rotation-bin noise.

    Box sizes are unchanged; with clip=True boxes are translated back inside
    [0,1] after perturbation.
    """
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(variance)
    out = []
    for box in ground_truth.objects:
        dx, dy = rng.normal(0.0, sigma, size=2) if sigma > 0 else (0.0, 0.0)
        dbin = int(round(rng.normal(0.0, rotation_std))) if rotation_std > 0 else 0
        min_x, max_x = box.min_x + dx, box.max_x + dx
        min_y, max_y = box.min_y + dy, box.max_y + dy
        if clip:
            min_x, max_x = _shift_into_unit(min_x, max_x)
            min_y, max_y = _shift_into_unit(min_y, max_y)
        out.append(ObjectLayout(float(min_x), float(min_y), box.min_z,
                                float(max_x), float(max_y), box.max_z,
                                rotation_bin=(box.rotation_bin + dbin) % NUM_ROTATION_BINS))
    return SceneLayout(tuple(out))


def _shift_into_unit(lo, hi):
    if lo < 0.0:
        hi -= lo
        lo = 0.0
    if hi > 1.0:
        lo -= hi - 1.0
        hi = 1.0
    return max(lo, 0.0), hi


# -- corpus persistence -------------------------------------------------


def _build_scene(room, nodes, layout, table: PercentileTable) -> Scene:
    graph = extract_scene_graph(layout, nodes, ExtractorConfig(keep_prob=1.0),
                                seed=0, table=table)
    return Scene(room=room, graph=graph, layout=layout)


def generate_dataset(out_dir: str, n_train: int, n_val: int, seed: int,
                     config: GeneratorConfig | None = None) -> dict:
    """Write train/val scene JSONs plus a manifest with the percentile table."""
    config = config or GeneratorConfig()
    os.makedirs(os.path.join(out_dir, "scenes"), exist_ok=True)
    raw = []
    i = 0
    while len(raw) < n_train + n_val:
        try:
            raw.append(generate_scene(config, seed + i))
        except GenerationError:
            pass  # rare; skip the unlucky seed
        i += 1
    table = PercentileTable.from_corpus(
        [layout for _, _, layout in raw[:n_train]],
        [[n.class_id for n in nodes] for _, nodes, _ in raw[:n_train]])

    files = {"train": [], "val": []}
    for idx, (room, nodes, layout) in enumerate(raw):
        split = "train" if idx < n_train else "val"
        scene = _build_scene(room, nodes, layout, table)
        name = f"{split}_{idx:05d}.json"
        path = os.path.join(out_dir, "scenes", name)
        _atomic_write_json(path, scene_to_json(scene))
        files[split].append(f"scenes/{name}")

    manifest = {
        "seed": seed,
        "train": files["train"],
        "val": files["val"],
        "percentile_table": table.to_json(),
        "generator": {"min_objects": config.min_objects,
                      "max_objects": config.max_objects},
    }
    _atomic_write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _atomic_write_json(path: str, doc):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)


def load_dataset(data_dir: str):
    """Return (train scenes, val scenes, percentile table)."""
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    table = PercentileTable.from_json(manifest["percentile_table"])

    def load(split):
        out = []
        for rel in manifest[split]:
            with open(os.path.join(data_dir, rel)) as f:
                out.append(scene_from_json(json.load(f)))
        return out

    return load("train"), load("val"), table


def sample_training_graph(scene: Scene, keep_prob: float, p_none: float,
                          rng: np.random.Generator) -> SceneGraph:
    """Subsample a stored full-relation scene graph for one training example.

    Triplets are kept independently with keep_prob (orphans rescued by
    precedence); stored attributes are independently dropped with p_none.
    """
    relations = [(t.subject, t.predicate, t.object)
                 for t in scene.graph.triplets]
    sub = extract_scene_graph(scene.layout, scene.graph.nodes,
                              ExtractorConfig(keep_prob=keep_prob),
                              seed=int(rng.integers(0, 2 ** 31)),
                              relations=relations)
    if p_none <= 0.0:
        return sub
    nodes = []
    for node in sub.nodes:
        attrs = frozenset(a for a in node.attributes if rng.random() >= p_none)
        nodes.append(ObjectNode(id=node.id, class_id=node.class_id,
                                attributes=attrs))
    return SceneGraph(tuple(nodes), sub.triplets)
