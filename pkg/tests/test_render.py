import math

import numpy as np
import pytest

from sln.autodiff import ShapeError, Tape, Tensor
from sln.core import NUM_ROTATION_BINS, ObjectLayout, RoomSpec, SceneLayout
from sln.render import (BACKGROUND_CLASS, Camera, RenderError, RenderTarget,
                        box_mesh, class_conditioned_depth, default_camera,
                        far_depth, layout_svg, multiscale_pool, rasterize,
                        rasterize_hard, read_pfm, read_pgm, soft_class_depth,
                        soft_rotation, write_pfm, write_pgm)

ROOM = RoomSpec(4.0, 4.0, 2.8)


def simple_layout():
    return SceneLayout((
        ObjectLayout(0.30, 0.40, 0.00, 0.70, 0.70, 0.25, 0),   # bed-ish slab
        ObjectLayout(0.10, 0.55, 0.00, 0.28, 0.75, 0.40, 3),   # rotated chest
    ))


def boxes_tensor(layout):
    return Tensor(np.array([o.as_tuple()[:6] for o in layout.objects],
                           dtype=np.float32))


def omega_tensor(layout):
    return Tensor(np.array([float(o.rotation_bin) for o in layout.objects],
                           dtype=np.float32))


# -- independent triangle-mesh oracle -----------------------------------

def _ray_triangle(orig, d, v0, v1, v2):
    """Moller-Trumbore; returns t or None."""
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(d, e2)
    det = e1 @ p
    if abs(det) < 1e-12:
        return None
    inv = 1.0 / det
    s = orig - v0
    u = (s @ p) * inv
    if u < -1e-12 or u > 1 + 1e-12:
        return None
    q = np.cross(s, e1)
    v = (d @ q) * inv
    if v < -1e-12 or u + v > 1 + 1e-12:
        return None
    t = (e2 @ q) * inv
    return t if t > 1e-3 else None


def mesh_render(layout, class_ids, camera, room):
    rays = camera.rays().astype(np.float64)
    origin = np.asarray(camera.position, dtype=np.float64)
    far = far_depth(room)
    depth = np.full(rays.shape[0], far)
    sem = np.full(rays.shape[0], BACKGROUND_CLASS, dtype=np.int32)
    for box, cid in zip(layout.objects, class_ids):
        tris = box_mesh(box, box.rotation_bin, room)
        for k, d in enumerate(rays):
            for v0, v1, v2 in tris:
                t = _ray_triangle(origin, d, v0, v1, v2)
                if t is not None and t < depth[k]:
                    depth[k] = t
                    sem[k] = cid
    h, w = camera.height, camera.width
    return depth.reshape(h, w), sem.reshape(h, w)


FIXTURES = [
    # single unrotated box mid-room
    (SceneLayout((ObjectLayout(0.35, 0.40, 0.0, 0.65, 0.65, 0.45, 0),)), [0]),
    # rotated box (bin 5 -> 75 degrees)
    (SceneLayout((ObjectLayout(0.30, 0.35, 0.0, 0.75, 0.60, 0.50, 5),)), [3]),
    # two boxes with occlusion
    (simple_layout(), [0, 4]),
]


class TestHardRasterizer:
    @pytest.mark.parametrize("layout,cids", FIXTURES)
    def test_matches_triangle_mesh_oracle(self, layout, cids):
        cam = default_camera(ROOM, size=24)
        target = rasterize_hard(layout, cids, cam, ROOM)
        odepth, osem = mesh_render(layout, cids, cam, ROOM)
        np.testing.assert_array_equal(target.semantic, osem)
        np.testing.assert_allclose(target.depth, odepth, atol=1e-3)

    def test_background_uses_far_sentinel(self):
        cam = default_camera(ROOM, size=16)
        target = rasterize_hard(simple_layout(), [0, 4], cam, ROOM)
        bg = target.semantic == BACKGROUND_CLASS
        assert bg.any()
        np.testing.assert_allclose(target.depth[bg], far_depth(ROOM))

    def test_empty_scene_rejected(self):
        with pytest.raises(RenderError):
            rasterize_hard(SceneLayout(()), [], default_camera(ROOM), ROOM)


class TestSoftRasterizer:
    def _soft_vs_hard_error(self, sigma, size=24):
        layout = simple_layout()
        cids = [0, 4]
        cam = default_camera(ROOM, size=size)
        hard = rasterize_hard(layout, cids, cam, ROOM)
        with Tape():
            soft = rasterize(boxes_tensor(layout), omega_tensor(layout),
                             cids, cam, ROOM, sigma=sigma)
        return float(np.abs(soft.depth.data.reshape(size, size)
                            - hard.depth).mean())

    def test_converges_to_hard_as_sigma_shrinks(self):
        errs = [self._soft_vs_hard_error(s) for s in (1e-1, 1e-2, 1e-3)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 0.05 * far_depth(ROOM)

    def test_hard_target_semantics_agree_at_small_sigma(self):
        layout, cids = simple_layout(), [0, 4]
        cam = default_camera(ROOM, size=24)
        with Tape():
            soft = rasterize(boxes_tensor(layout), omega_tensor(layout),
                             cids, cam, ROOM, sigma=1e-3)
        hard = rasterize_hard(layout, cids, cam, ROOM)
        agree = (soft.hard_target().semantic == hard.semantic).mean()
        assert agree >= 0.97  # silhouette-edge pixels may differ

    def test_sem_probs_are_a_distribution(self):
        layout, cids = simple_layout(), [0, 4]
        cam = default_camera(ROOM, size=16)
        with Tape():
            soft = rasterize(boxes_tensor(layout), omega_tensor(layout),
                             cids, cam, ROOM)
        probs = soft.sem_probs.data
        assert probs.shape == (16 * 16, len(_classes()) + 1)
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_depth_gradient_wrt_box_edge_matches_fd(self):
        layout, cids = simple_layout(), [0, 4]
        cam = default_camera(ROOM, size=16)
        omega = omega_tensor(layout)
        base = np.array([o.as_tuple()[:6] for o in layout.objects],
                        dtype=np.float32)

        def mean_depth(arr):
            with Tape():
                soft = rasterize(Tensor(arr), omega, cids, cam, ROOM,
                                 sigma=1e-2)
                return float(soft.depth.data.mean())

        boxes = Tensor(base.copy())
        with Tape() as tape:
            soft = rasterize(boxes, omega, cids, cam, ROOM, sigma=1e-2)
            tape.backward(soft.depth.mean())
        g = boxes.grad[0, 0]  # d(mean depth)/d(min_x of box 0)

        h = 5e-4  # the soft surface is curved; larger steps alias it
        plus, minus = base.copy(), base.copy()
        plus[0, 0] += h
        minus[0, 0] -= h
        fd = (mean_depth(plus) - mean_depth(minus)) / (2 * h)
        assert abs(fd - g) / max(abs(fd), abs(g)) < 5e-2

    @pytest.mark.parametrize("sigma", [1e-1, 1e-2, 1e-3])
    def test_gradients_finite_across_sigmas(self, sigma):
        layout, cids = simple_layout(), [0, 4]
        cam = default_camera(ROOM, size=12)
        boxes, omega = boxes_tensor(layout), omega_tensor(layout)
        with Tape() as tape:
            soft = rasterize(boxes, omega, cids, cam, ROOM, sigma=sigma)
            tape.backward(soft.depth.sum() + soft.sem_probs.sum())
        assert np.isfinite(boxes.grad).all()
        assert np.isfinite(omega.grad).all()

    def test_omega_shape_checked(self):
        layout = simple_layout()
        with pytest.raises(ShapeError):
            with Tape():
                rasterize(boxes_tensor(layout), Tensor(np.zeros((2, 1), np.float32)),
                          [0, 4], default_camera(ROOM, 8), ROOM)


def _classes():
    from sln.core import CLASSES
    return CLASSES


class TestSoftRotation:
    def test_one_hot_recovers_the_bin(self):
        for k in (0, 7, 23):
            logits = np.full(NUM_ROTATION_BINS, -30.0, dtype=np.float32)
            logits[k] = 30.0
            with Tape():
                val = soft_rotation(Tensor(logits))
            assert float(val.data) == pytest.approx(k, abs=1e-4)

    def test_uniform_logits_give_the_mean_bin(self):
        with Tape():
            val = soft_rotation(Tensor(np.zeros(NUM_ROTATION_BINS, np.float32)))
        assert float(val.data) == pytest.approx(11.5)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(0)
        base = rng.standard_normal(NUM_ROTATION_BINS).astype(np.float32)
        logits = Tensor(base.copy())
        with Tape() as tape:
            tape.backward(soft_rotation(logits))
        h = 1e-2
        for k in range(0, NUM_ROTATION_BINS, 5):
            plus, minus = base.copy(), base.copy()
            plus[k] += h
            minus[k] -= h
            with Tape():
                fp = float(soft_rotation(Tensor(plus)).data)
                fm = float(soft_rotation(Tensor(minus)).data)
            fd = (fp - fm) / (2 * h)
            assert abs(fd - logits.grad[k]) < 1e-3

    def test_wrong_width_rejected(self):
        with pytest.raises(ShapeError):
            with Tape():
                soft_rotation(Tensor(np.zeros(10, np.float32)))


class TestClassConditionedDepth:
    def test_hand_oracle(self):
        depth = np.array([[1.0, 2.0], [3.0, 8.0]], np.float32)
        sem = np.array([[0, 0], [1, 1]])
        out = class_conditioned_depth(depth, sem, 0)
        np.testing.assert_allclose(out, [[1.0, 2.0], [1.5, 1.5]])

    def test_absent_class_raises(self):
        with pytest.raises(KeyError):
            class_conditioned_depth(np.ones((2, 2), np.float32),
                                    np.zeros((2, 2), int), 5)

    def test_soft_version_matches_hard_at_binary_probs(self):
        depth = np.array([1.0, 2.0, 3.0, 8.0], np.float32)
        prob = np.array([1.0, 1.0, 0.0, 0.0], np.float32)
        with Tape():
            out = soft_class_depth(Tensor(depth), Tensor(prob))
        np.testing.assert_allclose(out.data, [1.0, 2.0, 1.5, 1.5], atol=1e-4)


class TestMultiscalePool:
    def test_hand_oracle(self):
        img = Tensor(np.array([[0.0, 0.0], [4.0, 4.0]], np.float32))
        with Tape():
            levels = multiscale_pool(img, 1)
        assert len(levels) == 2
        np.testing.assert_allclose(levels[0].data, [[0, 0], [4, 4]])
        np.testing.assert_allclose(levels[1].data, [[2.0]])

    def test_level_count(self):
        img = Tensor(np.zeros((8, 8), np.float32))
        with Tape():
            levels = multiscale_pool(img, 3)
        assert [l.shape for l in levels] == [(8, 8), (4, 4), (2, 2), (1, 1)]


class TestImageFiles:
    def test_pfm_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 9, size=(5, 7)).astype(np.float32)
        path = str(tmp_path / "d.pfm")
        write_pfm(path, img)
        np.testing.assert_array_equal(read_pfm(path), img)

    def test_pfm_rejects_other_formats(self, tmp_path):
        path = str(tmp_path / "x.pfm")
        with open(path, "wb") as f:
            f.write(b"PF\n2 2\n-1.0\n" + b"\0" * 48)
        with pytest.raises(ValueError):
            read_pfm(path)

    def test_pgm_round_trip_with_palette(self, tmp_path):
        sem = np.array([[0, 3], [15, 9]], np.int32)
        path = str(tmp_path / "s.pgm")
        write_pgm(path, sem)
        np.testing.assert_array_equal(read_pgm(path), sem)
        import json
        with open(path + ".palette.json") as f:
            palette = json.load(f)
        assert palette["background"] == BACKGROUND_CLASS
        assert len(palette["classes"]) == 15

    def test_pgm_rejects_wide_indices(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(str(tmp_path / "bad.pgm"), np.array([[300]]))


class TestCameraAndTargets:
    def test_rays_are_unit_and_row_major(self):
        cam = Camera(position=(2, 0, 1.5), look_at=(2, 2, 1.4), width=8,
                     height=6)
        rays = cam.rays()
        assert rays.shape == (48, 3)
        np.testing.assert_allclose(np.linalg.norm(rays, axis=1), 1.0, atol=1e-6)
        # pixels look mostly along +y
        assert rays[:, 1].mean() > 0.85

    def test_camera_validation(self):
        with pytest.raises(ValueError):
            Camera(position=(0, 0, 0), look_at=(1, 1, 1), width=1)
        with pytest.raises(ValueError):
            Camera(position=(0, 0, 0), look_at=(1, 1, 1), fov_deg=200)

    def test_camera_json_round_trip(self):
        cam = default_camera(ROOM, size=32)
        assert Camera.from_json(cam.to_json()) == cam

    def test_render_target_validation(self):
        with pytest.raises(ValueError):
            RenderTarget(depth=np.zeros((2, 2)), semantic=np.zeros((3, 3), int))
        with pytest.raises(ValueError):
            RenderTarget(depth=np.full((2, 2), -1.0),
                         semantic=np.zeros((2, 2), int))

    def test_far_depth_is_beyond_the_room(self):
        assert far_depth(ROOM) > math.sqrt(4 ** 2 + 4 ** 2 + 2.8 ** 2)


class TestLayoutSvg:
    def test_contains_each_object_and_class_name(self):
        svg = layout_svg(simple_layout(), [0, 4], ROOM)
        assert svg.count("<rect") == 3  # room border + 2 objects
        assert "bed" in svg and "dresser" in svg
        assert svg.startswith("<svg")
