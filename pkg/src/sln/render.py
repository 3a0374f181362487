"""Differentiable rasterizer over oriented-box proxy geometry.

Each object contributes a per-ray soft coverage weight, the sigmoid of its
ray penetration depth (exit minus entry distance) over a temperature sigma,
and an entry depth from the slab intersection in the box's rotated frame.
Per pixel the weights are combined by a depth-ordered softmax (temperature
sigma) for visibility and alpha compositing against the background, so depth
and per-class semantic probabilities are smooth in box corners and in the
continuous rotation. Hard maps for evaluation take the nearest covered box.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import CLASSES, NUM_ROTATION_BINS, RoomSpec, SceneLayout

__all__ = [
    "Camera",
    "RenderTarget",
    "RenderError",
    "default_camera",
    "soft_rotation",
    "rasterize",
    "rasterize_hard",
    "box_mesh",
    "class_conditioned_depth",
    "soft_class_depth",
    "multiscale_pool",
    "write_pfm",
    "read_pfm",
    "write_pgm",
    "read_pgm",
    "layout_svg",
]

BACKGROUND_CLASS = len(CLASSES)
T_NEAR = 1e-3
_FAR_FACTOR = 1.25  # background depth sentinel = factor * room diagonal


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    width: int = 64
    height: int = 64
    fov_deg: float = 70.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("image size too small")
        if not 1.0 < self.fov_deg < 179.0:
            raise ValueError("fov out of range")

    @property
    def focal(self) -> float:
        return self.width / (2.0 * math.tan(math.radians(self.fov_deg) / 2.0))

    def rays(self) -> np.ndarray:
        """(H*W, 3) unit ray directions in world space, row-major pixels."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        nr = np.linalg.norm(right)
        if nr < 1e-9:
            right = np.array([1.0, 0.0, 0.0])
        else:
            right /= nr
        cam_up = np.cross(right, fwd)
        jj, ii = np.meshgrid(np.arange(self.width), np.arange(self.height))
        u = (jj + 0.5 - self.width / 2.0) / self.focal
        v = (ii + 0.5 - self.height / 2.0) / self.focal
        dirs = (fwd[None, None]
                + u[..., None] * right[None, None]
                - v[..., None] * cam_up[None, None])
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs.reshape(-1, 3).astype(np.float32)

    def to_json(self) -> dict:
        return {"position": list(self.position), "look_at": list(self.look_at),
                "width": self.width, "height": self.height, "fov_deg": self.fov_deg}

    @classmethod
    def from_json(cls, doc: dict) -> "Camera":
        return cls(position=tuple(doc["position"]), look_at=tuple(doc["look_at"]),
                   width=int(doc.get("width", 64)), height=int(doc.get("height", 64)),
                   fov_deg=float(doc.get("fov_deg", 70.0)))


def default_camera(room: RoomSpec, size: int = 64) -> Camera:
    """Near-wall midpoint at 0.55 room height, looking at the room center."""
    return Camera(position=(room.width / 2.0, 0.0, 0.55 * room.height),
                  look_at=(room.width / 2.0, room.depth / 2.0, room.height / 2.0),
                  width=size, height=size)


def far_depth(room: RoomSpec) -> float:
    diag = math.sqrt(room.width ** 2 + room.depth ** 2 + room.height ** 2)
    return _FAR_FACTOR * diag


@dataclass
class RenderTarget:
    """Hard depth (room units; background = far sentinel) + class-index map."""

    depth: np.ndarray
    semantic: np.ndarray
    sem_probs: np.ndarray | None = None

    def __post_init__(self):
        if self.depth.shape != self.semantic.shape:
            raise ValueError(
                f"depth {self.depth.shape} vs semantic {self.semantic.shape}")
        if (self.depth < 0).any():
            raise ValueError("negative depth")


class SoftRender:
    """Differentiable render: depth (P,) and semantic probs (P, C+1) tensors."""

    def __init__(self, depth: Tensor, sem_probs: Tensor, camera: Camera,
                 far: float):
        self.depth = depth
        self.sem_probs = sem_probs
        self.camera = camera
        self.far = far

    def depth_image(self) -> Tensor:
        return ad.reshape(self.depth, (self.camera.height, self.camera.width))

    def hard_target(self) -> RenderTarget:
        h, w = self.camera.height, self.camera.width
        sem = self.sem_probs.data.argmax(axis=1).astype(np.int32)
        return RenderTarget(depth=self.depth.data.reshape(h, w).copy(),
                            semantic=sem.reshape(h, w),
                            sem_probs=self.sem_probs.data.reshape(h, w, -1).copy())


def soft_rotation(logits: Tensor) -> Tensor:
    """Continuous zero-indexed rotation bin: E[k] - 1 over softmax(logits), k=1..24."""
    axis = logits.ndim - 1
    if logits.shape[axis] != NUM_ROTATION_BINS:
        raise ad.ShapeError(
            f"soft_rotation expects {NUM_ROTATION_BINS} logits, got {logits.shape}")
    probs = ad.softmax(logits, axis=axis)
    k = np.arange(1, NUM_ROTATION_BINS + 1, dtype=np.float32)
    return ad.sum_(probs * Tensor(k), axis=axis) - 1.0


def _safe(d: np.ndarray) -> np.ndarray:
    # constant mask nudging near-zero direction components off zero
    return ((np.abs(d) < 1e-9) * 1e-9).astype(np.float32)


def rasterize(boxes: Tensor, omega: Tensor, class_ids, camera: Camera,
              room: RoomSpec, sigma: float = 1e-2) -> SoftRender:
    """Soft-render normalized (N,6) box corners with continuous rotation bins.

    ``omega`` holds one continuous bin value per object (see soft_rotation);
    gradients flow to both boxes and omega.
    """
    n = boxes.shape[0]
    if n == 0:
        raise RenderError("empty scene")
    if omega.shape != (n,):
        raise ad.ShapeError(f"omega shape {omega.shape} for {n} boxes")
    class_ids = np.asarray(class_ids, dtype=np.int64)
    rays = camera.rays()
    origin = np.asarray(camera.position, dtype=np.float32)
    far = far_depth(room)
    scale = np.array([room.width, room.depth, room.height], dtype=np.float32)

    dx_w = Tensor(rays[:, 0])
    dy_w = Tensor(rays[:, 1])
    dz_w = Tensor(rays[:, 2])

    lo = ad.slice_(boxes, 1, 0, 3) * Tensor(scale)
    hi = ad.slice_(boxes, 1, 3, 6) * Tensor(scale)
    centers = (lo + hi) * 0.5
    halves = (hi - lo) * 0.5

    logw_cols, t_cols = [], []
    inv_gamma = 1.0 / sigma
    for i in range(n):
        angle = ad.slice_(omega, 0, i, i + 1) * (2.0 * math.pi / NUM_ROTATION_BINS)
        c, s = ad.cos(angle), ad.sin(angle)
        cx = ad.slice_(ad.slice_(centers, 0, i, i + 1), 1, 0, 1).reshape(())
        cy = ad.slice_(ad.slice_(centers, 0, i, i + 1), 1, 1, 2).reshape(())
        cz = ad.slice_(ad.slice_(centers, 0, i, i + 1), 1, 2, 3).reshape(())
        hx = ad.slice_(ad.slice_(halves, 0, i, i + 1), 1, 0, 1).reshape(())
        hy = ad.slice_(ad.slice_(halves, 0, i, i + 1), 1, 1, 2).reshape(())
        hz = ad.slice_(ad.slice_(halves, 0, i, i + 1), 1, 2, 3).reshape(())
        c0 = c.reshape(())
        s0 = s.reshape(())

        # origin and ray directions in the box frame (rotate by -angle about Z)
        ox_w = float(origin[0]) - cx
        oy_w = float(origin[1]) - cy
        oz_w = float(origin[2]) - cz
        ox = c0 * ox_w + s0 * oy_w
        oy = -1.0 * s0 * ox_w + c0 * oy_w
        dx = c0 * dx_w + s0 * dy_w
        dy = -1.0 * s0 * dx_w + c0 * dy_w

        t_en, t_ex = None, None
        for o_a, d_a, h_a in ((ox, dx, hx), (oy, dy, hy), (oz_w, dz_w, hz)):
            d_safe = d_a + Tensor(_safe(d_a.data if isinstance(d_a, Tensor)
                                        else np.asarray(d_a)))
            t1 = (h_a * -1.0 - o_a) / d_safe
            t2 = (h_a - o_a) / d_safe
            near_a = ad.minimum(t1, t2)
            far_a = ad.maximum(t1, t2)
            t_en = near_a if t_en is None else ad.maximum(t_en, near_a)
            t_ex = far_a if t_ex is None else ad.minimum(t_ex, far_a)

        pen = ad.minimum(t_ex, Tensor(np.float32(far))) - ad.maximum(
            t_en, Tensor(np.float32(T_NEAR)))
        logw = ad.log_sigmoid(pen * (1.0 / sigma))
        t_surf = ad.maximum(t_en, Tensor(np.float32(T_NEAR)))
        logw_cols.append(logw.reshape((-1, 1)))
        t_cols.append(t_surf.reshape((-1, 1)))

    logw_mat = ad.concat(logw_cols, axis=1)   # (P, N)
    t_mat = ad.concat(t_cols, axis=1)

    vis = ad.softmax(logw_mat - t_mat * inv_gamma, axis=1)
    one_minus_w = 1.0 - ad.exp(logw_mat)
    keep = None
    for i in range(n):
        col = ad.slice_(one_minus_w, 1, i, i + 1)
        keep = col if keep is None else keep * col
    alpha = 1.0 - keep.reshape((-1,))          # P(any object hit)

    depth = alpha * ad.sum_(vis * t_mat, axis=1) + (1.0 - alpha) * far

    assign = np.zeros((n, len(CLASSES)), dtype=np.float32)
    assign[np.arange(n), class_ids] = 1.0
    class_probs = ad.matmul(vis * alpha.reshape((-1, 1)), Tensor(assign))
    sem_probs = ad.concat([class_probs, (1.0 - alpha).reshape((-1, 1))], axis=1)
    return SoftRender(depth=depth, sem_probs=sem_probs, camera=camera, far=far)


def rasterize_hard(layout: SceneLayout, class_ids, camera: Camera,
                   room: RoomSpec) -> RenderTarget:
    """Exact nearest-hit ray-box rasterization (evaluation / target maps)."""
    if len(layout) == 0:
        raise RenderError("empty scene")
    rays = camera.rays().astype(np.float64)
    origin = np.asarray(camera.position, dtype=np.float64)
    far = far_depth(room)
    scale = np.array([room.width, room.depth, room.height])
    p = rays.shape[0]
    best_t = np.full(p, far)
    best_cls = np.full(p, BACKGROUND_CLASS, dtype=np.int32)
    for box, cid in zip(layout.objects, np.asarray(class_ids, dtype=np.int64)):
        lo = np.array([box.min_x, box.min_y, box.min_z]) * scale
        hi = np.array([box.max_x, box.max_y, box.max_z]) * scale
        center = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        ang = 2.0 * math.pi * box.rotation_bin / NUM_ROTATION_BINS
        ca, sa = math.cos(ang), math.sin(ang)
        rel = origin - center
        o_loc = np.array([ca * rel[0] + sa * rel[1],
                          -sa * rel[0] + ca * rel[1], rel[2]])
        d_loc = np.stack([ca * rays[:, 0] + sa * rays[:, 1],
                          -sa * rays[:, 0] + ca * rays[:, 1],
                          rays[:, 2]], axis=1)
        d_loc = np.where(np.abs(d_loc) < 1e-12, 1e-12, d_loc)
        t1 = (-half - o_loc) / d_loc
        t2 = (half - o_loc) / d_loc
        t_en = np.minimum(t1, t2).max(axis=1)
        t_ex = np.maximum(t1, t2).min(axis=1)
        hit = (t_ex > np.maximum(t_en, T_NEAR)) & (t_ex > T_NEAR)
        t_surf = np.maximum(t_en, T_NEAR)
        closer = hit & (t_surf < best_t)
        best_t[closer] = t_surf[closer]
        best_cls[closer] = cid
    h, w = camera.height, camera.width
    return RenderTarget(depth=best_t.reshape(h, w).astype(np.float32),
                        semantic=best_cls.reshape(h, w))


def box_mesh(box, rotation_bins_or_angle, room: RoomSpec):
    """12-triangle oriented box in world coordinates (8 vertices, CCW outward)."""
    if isinstance(rotation_bins_or_angle, (int, np.integer)):
        ang = 2.0 * math.pi * int(rotation_bins_or_angle) / NUM_ROTATION_BINS
    else:
        ang = float(rotation_bins_or_angle)
    scale = np.array([room.width, room.depth, room.height])
    lo = np.array([box.min_x, box.min_y, box.min_z]) * scale
    hi = np.array([box.max_x, box.max_y, box.max_z]) * scale
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    ca, sa = math.cos(ang), math.sin(ang)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    corners = []
    for dx in (-1, 1):
        for dy in (-1, 1):
            for dz in (-1, 1):
                local = half * np.array([dx, dy, dz])
                corners.append(center + rot @ local)
    v = np.asarray(corners)  # index bit order: x, y, z
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),   # -x, +x
        (0, 4, 5, 1), (2, 3, 7, 6),   # -y, +y
        (0, 2, 6, 4), (1, 5, 7, 3),   # -z, +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((v[a], v[b], v[c]))
        tris.append((v[a], v[c], v[d]))
    return np.asarray(tris)


# -- class-conditioned depth and pooling --------------------------------


def class_conditioned_depth(depth: np.ndarray, semantic: np.ndarray, cls: int):
    """Depth kept where semantic == cls, elsewhere that class's mean depth."""
    if depth.shape != semantic.shape:
        raise ValueError(f"shape mismatch {depth.shape} vs {semantic.shape}")
    mask = semantic == cls
    if not mask.any():
        raise KeyError(f"class {cls} absent from semantic map")
    mean = float(depth[mask].mean())
    return np.where(mask, depth, mean).astype(np.float32)


def soft_class_depth(depth: Tensor, prob_c: Tensor, eps: float = 1e-6) -> Tensor:
    """Differentiable class-conditioned depth from soft class probabilities."""
    weight = ad.sum_(prob_c) + eps
    mean_c = ad.sum_(prob_c * depth) / weight
    return prob_c * depth + (1.0 - prob_c) * mean_c


def multiscale_pool(image: Tensor, levels: int):
    """[image, pooled 2x, pooled 4x, ...] with ``levels`` pooling steps."""
    out = [image]
    for _ in range(levels):
        out.append(ad.avg_pool2(out[-1]))
    return out


# -- image file formats -------------------------------------------------


def write_pfm(path: str, image: np.ndarray):
    """Grayscale PFM, little-endian, rows bottom-to-top per the format."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("write_pfm expects a 2-d map")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{image.shape[1]} {image.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(image[::-1].astype("<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].astype(np.float32).copy()


def write_pgm(path: str, indices: np.ndarray, palette: dict | None = None):
    """Binary P5 class-index map plus a palette JSON sidecar."""
    arr = np.asarray(indices)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("class indices must fit in a byte")
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.astype(np.uint8).tobytes())
    sidecar = palette if palette is not None else {
        "classes": list(CLASSES), "background": BACKGROUND_CLASS}
    with open(path + ".palette.json", "w") as f:
        json.dump(sidecar, f)


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = map(int, line.split())
        f.readline()  # maxval
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.int32).copy()


# -- top-down SVG -------------------------------------------------------

_PALETTE = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
    "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#d62728",
    "#2ca02c", "#17becf", "#8c564b",
]


def layout_svg(layout: SceneLayout, class_ids, room: RoomSpec,
               size: int = 320) -> str:
    """Orthographic top-down footprint view with rotation arrows."""
    sx = size / 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="#fafafa" '
        'stroke="#333" stroke-width="2"/>',
    ]
    for box, cid in zip(layout.objects, class_ids):
        color = _PALETTE[int(cid) % len(_PALETTE)]
        x = box.min_x * sx
        w = (box.max_x - box.min_x) * sx
        # svg y grows downward; room y grows "into" the view
        y = (1.0 - box.max_y) * sx
        h = (box.max_y - box.min_y) * sx
        cx, cy, _ = box.center
        px, py = cx * sx, (1.0 - cy) * sx
        ang = 2.0 * math.pi * box.rotation_bin / NUM_ROTATION_BINS
        ex = px + 0.05 * sx * math.cos(ang)
        ey = py - 0.05 * sx * math.sin(ang)
        parts.append(
            f'<g><rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{h:.1f}" '
            f'fill="{color}" fill-opacity="0.6" stroke="{color}"/>'
            f'<line x1="{px:.1f}" y1="{py:.1f}" x2="{ex:.1f}" y2="{ey:.1f}" '
            f'stroke="#222" stroke-width="2" marker-end="none"/>'
            f'<title>{CLASSES[int(cid)]}</title></g>')
    parts.append("</svg>")
    return "".join(parts)
