"""Evaluation metrics: scene-graph accuracy, L1 box loss, diversity STDs."""

from __future__ import annotations

import numpy as np

from .core import SceneGraph, SceneLayout
from .relations import predicate_holds

__all__ = ["scene_graph_accuracy", "l1_box_loss", "diversity_std"]


def scene_graph_accuracy(layout: SceneLayout, graph: SceneGraph) -> float:
    """Percentage of the graph's triplets whose geometric condition holds."""
    if not graph.triplets:
        raise ValueError("graph has no triplets to check")
    if len(layout) != len(graph):
        raise ValueError(f"layout of {len(layout)} boxes for {len(graph)} nodes")
    satisfied = sum(
        predicate_holds(t.predicate, layout[t.subject], layout[t.object])
        for t in graph.triplets)
    return 100.0 * satisfied / len(graph.triplets)


def l1_box_loss(pred: SceneLayout, gt: SceneLayout) -> float:
    """Mean absolute error over the six box coordinates of all objects."""
    if len(pred) != len(gt):
        raise ValueError(f"layout length mismatch: {len(pred)} vs {len(gt)}")
    a = np.array([p.as_tuple()[:6] for p in pred.objects], dtype=np.float64)
    b = np.array([g.as_tuple()[:6] for g in gt.objects], dtype=np.float64)
    return float(np.abs(a - b).mean())


def _layout_arrays(layout: SceneLayout):
    sizes = np.array([o.size for o in layout.objects], dtype=np.float64)
    centers = np.array([o.center for o in layout.objects], dtype=np.float64)
    rots = np.array([o.rotation_bin for o in layout.objects], dtype=np.float64)
    return sizes, centers, rots


def diversity_std(samples, mode: str = "per-object", classes=None):
    """(std_size, std_position, std_rotation) across layout samples.

    per-object: population STD per object across samples, axis-averaged, then
    averaged over objects (requires aligned object lists). per-category:
    objects pooled by class across all samples; requires ``classes`` aligned
    with each sample's objects.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("diversity_std needs at least two samples")
    if mode == "per-object":
        n = len(samples[0])
        if any(len(s) != n for s in samples):
            raise ValueError("per-object mode requires aligned object lists")
        sizes = np.stack([_layout_arrays(s)[0] for s in samples])     # (S, N, 3)
        centers = np.stack([_layout_arrays(s)[1] for s in samples])
        rots = np.stack([_layout_arrays(s)[2] for s in samples])      # (S, N)
        std_size = sizes.std(axis=0).mean()
        std_pos = centers.std(axis=0).mean()
        std_rot = rots.std(axis=0).mean()
    elif mode == "per-category":
        if classes is None:
            raise ValueError("per-category mode requires classes")
        by_class: dict[int, list] = {}
        for layout, cls_list in zip(samples, classes):
            for obj, c in zip(layout.objects, cls_list):
                by_class.setdefault(c, []).append(obj)
        s_acc, p_acc, r_acc = [], [], []
        for objs in by_class.values():
            sizes = np.array([o.size for o in objs])
            centers = np.array([o.center for o in objs])
            rots = np.array([o.rotation_bin for o in objs], dtype=np.float64)
            s_acc.append(sizes.std(axis=0).mean())
            p_acc.append(centers.std(axis=0).mean())
            r_acc.append(rots.std())
        std_size, std_pos, std_rot = map(np.mean, (s_acc, p_acc, r_acc))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(std_size), float(std_pos), float(std_rot)
