"""Analysis-by-synthesis layout refinement.

Given a target depth/semantic render, optimize the latent vectors and a
call-local copy of the decoder so that soft-rendering the decoded layout
matches the target. The depth term is isolated per class (depth kept where
the class appears, mean-filled elsewhere) and compared over an average-pool
pyramid; a size term anchors object extents to their initial values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .core import RoomSpec, SceneGraph, SceneLayout, iou_3d
from .model import GraphBatch, SlnModel, layout_from_arrays
from .render import (BACKGROUND_CLASS, Camera, RenderTarget, class_conditioned_depth,
                     default_camera, multiscale_pool, rasterize, rasterize_hard,
                     soft_class_depth, soft_rotation)

__all__ = ["RefineConfig", "RefineReport", "refine_loss", "refine",
           "evaluate_refinement"]


@dataclass
class RefineConfig:
    steps: int = 90
    attempts: int = 6
    size_weight: float = 1.0       # alpha
    depth_weight: float = 1.0      # beta
    sem_weight: float = 3.0        # gamma; high enough that emptying the view
                                   # never beats aligning the silhouettes
    z_lr: float = 5e-3
    decoder_lr: float = 1e-4
    sigma: float = 1e-2
    pyramid_levels: int = 3
    divergence_factor: float = 10.0
    divergence_patience: int = 10

    def __post_init__(self):
        if self.steps < 0 or self.attempts < 1:
            raise ValueError("steps must be >= 0 and attempts >= 1")
        if min(self.size_weight, self.depth_weight, self.sem_weight) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class RefineReport:
    selected_attempt: int
    steps: list = field(default_factory=list)   # per-step component dicts
    initial_loss: float = 0.0
    final_loss: float = 0.0
    initial_iou: float | None = None
    final_iou: float | None = None
    initial_depth_mse: float | None = None
    final_depth_mse: float | None = None
    initial_sem_ce: float | None = None
    final_sem_ce: float | None = None

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "selected_attempt", "steps", "initial_loss", "final_loss",
            "initial_iou", "final_iou", "initial_depth_mse", "final_depth_mse",
            "initial_sem_ce", "final_sem_ce")}


def _sem_cross_entropy(sem_probs: Tensor, target_idx: np.ndarray) -> Tensor:
    onehot = np.zeros(sem_probs.shape, dtype=np.float32)
    onehot[np.arange(len(target_idx)), target_idx] = 1.0
    logp = ad.log(sem_probs + 1e-8)
    return ad.sum_(logp * Tensor(onehot)) * (-1.0 / len(target_idx))


def refine_loss(soft, target: RenderTarget, sizes_t: Tensor,
                sizes_0: np.ndarray, class_ids, config: RefineConfig):
    """Weighted size/depth/semantic discrepancy; returns (total, components)."""
    h, w = target.depth.shape
    l_size = ad.sum_(ad.abs_(sizes_t - Tensor(sizes_0.astype(np.float32))))

    target_classes = [int(c) for c in np.unique(target.semantic)
                      if c != BACKGROUND_CLASS]
    rendered_classes = set(int(c) for c in class_ids)
    shared = [c for c in target_classes if c in rendered_classes]
    if target_classes and not shared:
        warnings.warn("no classes shared with the target; "
                      "depth term skipped", RuntimeWarning, stacklevel=2)

    depth_img = soft.depth.reshape((h, w))
    l_depth = Tensor(0.0)
    for c in shared:
        d_c = class_conditioned_depth(target.depth, target.semantic, c)
        prob_c = ad.slice_(soft.sem_probs, 1, c, c + 1).reshape((h, w))
        soft_c = soft_class_depth(depth_img, prob_c)
        for lvl_pred, lvl_gt in zip(multiscale_pool(soft_c, config.pyramid_levels),
                                    _pool_np(d_c, config.pyramid_levels)):
            diff = lvl_pred - Tensor(lvl_gt)
            l_depth = l_depth + ad.sum_(ad.square(diff)) * (1.0 / lvl_gt.size)

    l_sem = _sem_cross_entropy(soft.sem_probs, target.semantic.reshape(-1))

    total = (l_size * config.size_weight + l_depth * config.depth_weight
             + l_sem * config.sem_weight)
    components = {
        "size": float(l_size.item()) * config.size_weight,
        "depth": float(l_depth.item()) * config.depth_weight,
        "semantic": float(l_sem.item()) * config.sem_weight,
        "total": float(total.item()),
    }
    return total, components


def _pool_np(img: np.ndarray, levels: int):
    out = [img.astype(np.float32)]
    for _ in range(levels):
        prev = out[-1]
        if prev.shape[0] % 2 or prev.shape[1] % 2:
            prev = np.pad(prev, ((0, prev.shape[0] % 2), (0, prev.shape[1] % 2)),
                          mode="edge")
        out.append((prev[0::2, 0::2] + prev[0::2, 1::2]
                    + prev[1::2, 0::2] + prev[1::2, 1::2]) / 4.0)
    return out


def _decode_layout(model: SlnModel, batch: GraphBatch, z: np.ndarray) -> SceneLayout:
    boxes, rot_logits = model.decode(batch, Tensor(z))
    return layout_from_arrays(boxes.data, rot_logits.data.argmax(axis=1))


def refine(model: SlnModel, graph: SceneGraph, z_init: np.ndarray | None,
           target: RenderTarget, config: RefineConfig, seed: int,
           room: RoomSpec, camera: Camera | None = None, on_step=None):
    """Best-of-``attempts`` latent + decoder-copy optimization against a target.

    The shared model is never mutated; each attempt owns a decoder copy.
    Returns (refined SceneLayout, RefineReport).
    """
    camera = camera or default_camera(room, target.depth.shape[1])
    if (camera.height, camera.width) != target.depth.shape:
        raise ValueError(f"camera {camera.height}x{camera.width} vs target "
                         f"{target.depth.shape}")
    batch = GraphBatch.from_scenes([graph])
    class_ids = batch.class_ids
    rng = np.random.default_rng(seed)

    best = None  # (final_loss, layout, report_steps, attempt, initial_loss)
    for attempt in range(config.attempts):
        if attempt == 0 and z_init is not None:
            z_data = np.array(z_init, dtype=np.float32)
        else:
            z_data = rng.standard_normal(
                (batch.num_objects, model.config.latent)).astype(np.float32)
        z = Tensor(z_data)
        worker = model.clone()
        dec_params = {k: v for k, v in worker.params.items()
                      if k.startswith("dec/")}
        opt_z = Adam({"z": z}, lr=config.z_lr)
        opt_dec = Adam(dec_params, lr=config.decoder_lr)

        sizes_0 = None
        step_log = []
        initial_loss = None
        diverged = 0
        best_iterate = None  # (loss, box corners, rotation values)
        for step in range(config.steps):
            with Tape() as tape:
                boxes, rot_logits = worker.decode(batch, z)
                sizes_t = (ad.slice_(boxes, 1, 3, 6) - ad.slice_(boxes, 1, 0, 3))
                if sizes_0 is None:
                    sizes_0 = sizes_t.data.copy()
                omega = soft_rotation(rot_logits)
                soft = rasterize(boxes, omega, class_ids, camera, room,
                                 sigma=config.sigma)
                total, components = refine_loss(soft, target, sizes_t, sizes_0,
                                                class_ids, config)
                tape.backward(total)
            if best_iterate is None or components["total"] < best_iterate[0]:
                best_iterate = (components["total"], boxes.data.copy(),
                                omega.data.copy())
            opt_z.step()
            opt_dec.step()
            step_log.append({"step": step, **components})
            if on_step is not None:
                on_step(attempt, step, components)
            if initial_loss is None:
                initial_loss = components["total"]
            if components["total"] > config.divergence_factor * initial_loss:
                diverged += 1
                if diverged >= config.divergence_patience:
                    break
            else:
                diverged = 0

        # loss at the final parameters; the attempt answers with whichever
        # iterate scored lowest (gradient steps on this surface can overshoot,
        # and the last point visited is not necessarily the best one)
        with Tape():
            boxes, rot_logits = worker.decode(batch, z)
            sizes_t = ad.slice_(boxes, 1, 3, 6) - ad.slice_(boxes, 1, 0, 3)
            if sizes_0 is None:
                sizes_0 = sizes_t.data.copy()
            omega = soft_rotation(rot_logits)
            soft = rasterize(boxes, omega, class_ids, camera, room,
                             sigma=config.sigma)
            final_total, _ = refine_loss(soft, target, sizes_t, sizes_0,
                                         class_ids, config)
        final_loss = float(final_total.item())
        box_arr, omega_arr = boxes.data, omega.data
        if best_iterate is not None and best_iterate[0] < final_loss:
            final_loss, box_arr, omega_arr = best_iterate
        rot_bins = np.rint(omega_arr).astype(np.int64) % 24
        layout = layout_from_arrays(box_arr, rot_bins)
        init_loss = initial_loss if initial_loss is not None else final_loss
        if best is None or final_loss < best[0]:
            best = (final_loss, layout, step_log, attempt, init_loss)

    final_loss, layout, step_log, attempt, initial_loss = best
    report = RefineReport(selected_attempt=attempt, steps=step_log,
                          initial_loss=float(initial_loss),
                          final_loss=final_loss)
    return layout, report


def _mean_iou(a: SceneLayout, b: SceneLayout) -> float:
    return float(np.mean([iou_3d(x, y) for x, y in zip(a.objects, b.objects)]))


def _layout_scores(layout: SceneLayout, class_ids, target: RenderTarget,
                   camera: Camera, room: RoomSpec, sigma: float):
    """Class-specific depth MSE + soft semantic CE of a layout vs a target."""
    rendered = rasterize_hard(layout, class_ids, camera, room)
    shared = [int(c) for c in np.unique(target.semantic)
              if c != BACKGROUND_CLASS and (rendered.semantic == c).any()]
    if shared:
        mse = float(np.mean([
            np.mean((class_conditioned_depth(rendered.depth, rendered.semantic, c)
                     - class_conditioned_depth(target.depth, target.semantic, c))
                    ** 2)
            for c in shared]))
    else:
        mse = float(np.mean((rendered.depth - target.depth) ** 2))
    boxes = np.array([o.as_tuple()[:6] for o in layout.objects], dtype=np.float32)
    omega = np.array([o.rotation_bin for o in layout.objects], dtype=np.float32)
    with Tape():
        soft = rasterize(Tensor(boxes), Tensor(omega), class_ids, camera, room,
                         sigma=sigma)
        ce = _sem_cross_entropy(soft.sem_probs, target.semantic.reshape(-1))
    return mse, float(ce.item())


def evaluate_refinement(model: SlnModel, fixtures, config: RefineConfig,
                        room: RoomSpec, seed: int = 0) -> dict:
    """Aggregate before/after IoU, depth MSE, and semantic CE over fixtures.

    Each fixture is (graph, target, gt_layout); the initial layout is the
    decode of the posterior mean of a perturbed ground truth when a layout
    z_init is supplied per fixture, otherwise the decode of a prior draw.
    """
    fixtures = list(fixtures)
    if not fixtures:
        raise ValueError("no refinement fixtures")
    rows = []
    for i, fixture in enumerate(fixtures):
        graph, target, gt_layout, z_init = (fixture + (None,))[:4]
        camera = default_camera(room, target.depth.shape[1])
        batch = GraphBatch.from_scenes([graph])
        if z_init is None:
            rng = np.random.default_rng(seed + i)
            z_init = rng.standard_normal(
                (batch.num_objects, model.config.latent)).astype(np.float32)
        pre_layout = _decode_layout(model, batch, z_init)
        refined, report = refine(model, graph, z_init, target, config,
                                 seed=seed + i, room=room, camera=camera)
        pre_mse, pre_ce = _layout_scores(pre_layout, batch.class_ids, target,
                                         camera, room, config.sigma)
        post_mse, post_ce = _layout_scores(refined, batch.class_ids, target,
                                           camera, room, config.sigma)
        row = {"fixture": i, "pre_mse": pre_mse, "post_mse": post_mse,
               "pre_ce": pre_ce, "post_ce": post_ce,
               "selected_attempt": report.selected_attempt}
        if gt_layout is not None:
            row["pre_iou"] = _mean_iou(pre_layout, gt_layout)
            row["post_iou"] = _mean_iou(refined, gt_layout)
        rows.append(row)
    report = {"fixtures": rows, "count": len(rows)}
    for key in ("iou", "mse", "ce"):
        pre = [r[f"pre_{key}"] for r in rows if f"pre_{key}" in r]
        post = [r[f"post_{key}"] for r in rows if f"post_{key}" in r]
        if pre:
            report[f"mean_pre_{key}"] = float(np.mean(pre))
            report[f"mean_post_{key}"] = float(np.mean(post))
            base = abs(report[f"mean_pre_{key}"]) or 1.0
            report[f"{key}_change_pct"] = 100.0 * (
                report[f"mean_post_{key}"] - report[f"mean_pre_{key}"]) / base
    if any("pre_iou" in r for r in rows):
        report["iou_improved_fraction"] = float(np.mean(
            [r["post_iou"] > r["pre_iou"] for r in rows if "pre_iou" in r]))
    return report
