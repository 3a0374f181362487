"""Finite-difference and oracle checks for the reverse-mode tape."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sln import autodiff as ad
from sln.autodiff import (Adam, OptimizerError, ShapeError, Tape, Tensor,
                          adam_step, load_checkpoint, save_checkpoint)

RNG = np.random.default_rng(20240601)


def fd_gradient(fn, arrays, wrt, h=1e-2):
    """Central finite differences of scalar fn(*arrays) w.r.t. arrays[wrt]."""
    base = [np.array(a, dtype=np.float32) for a in arrays]
    grad = np.zeros_like(base[wrt], dtype=np.float64)
    flat = grad.reshape(-1)
    for k in range(flat.size):
        for sign in (+1, -1):
            probe = [a.copy() for a in base]
            probe[wrt].reshape(-1)[k] += sign * h
            with Tape():
                flat[k] += sign * float(fn(*[Tensor(p) for p in probe]).item())
    return grad / (2 * h)


def check_grads(fn, arrays, rel_tol=1e-3, h=1e-2):
    """Analytic vs central-difference gradients on every coordinate.

    Single-precision forward passes put an absolute floor of about
    eps32 * |loss| / (2h) on what central differences can resolve, so the
    comparison allows that much on top of the relative tolerance.
    """
    tensors = [Tensor(np.array(a, dtype=np.float32)) for a in arrays]
    with Tape() as tape:
        loss = fn(*tensors)
        tape.backward(loss)
    noise = 4.0 * np.finfo(np.float32).eps * max(abs(float(loss.item())), 1.0) / (2 * h)
    for wrt in range(len(arrays)):
        fd = fd_gradient(fn, arrays, wrt, h=h)
        an = tensors[wrt].grad
        assert an is not None, f"no gradient for argument {wrt}"
        assert an.shape == np.shape(arrays[wrt])
        err = np.abs(an - fd)
        tol = rel_tol * np.maximum(np.abs(fd), np.abs(an)) + noise
        worst = (err - tol).max()
        assert worst < 0, (f"arg {wrt}: err {err.max():.2e} exceeds tolerance "
                           f"(noise floor {noise:.2e})")


def _vec(n, lo=-2.0, hi=2.0):
    return RNG.uniform(lo, hi, size=n).astype(np.float32)


class TestElementwiseGradients:
    """Each primitive vs central differences, rel. err < 1e-3 at f32."""

    def test_add_sub_mul(self):
        a, b = _vec(24), _vec(24)
        check_grads(lambda x, y: ad.sum_(x * y + x - y), [a, b])

    def test_div(self):
        a = _vec(24)
        b = RNG.uniform(0.5, 2.0, 24).astype(np.float32)  # away from the pole
        check_grads(lambda x, y: ad.sum_(x / y), [a, b])

    def test_relu_off_kink(self):
        a = _vec(24)
        a[np.abs(a) < 0.1] = 0.5
        check_grads(lambda x: ad.sum_(ad.relu(x)), [a])

    def test_sigmoid_and_log_sigmoid(self):
        a = _vec(24)
        check_grads(lambda x: ad.sum_(ad.sigmoid(x)), [a])
        check_grads(lambda x: ad.sum_(ad.log_sigmoid(x)), [a])

    def test_exp_log(self):
        a = RNG.uniform(0.2, 2.0, 24).astype(np.float32)
        check_grads(lambda x: ad.sum_(ad.log(ad.exp(x) + 1.0)), [a])

    def test_trig(self):
        a = _vec(24)
        check_grads(lambda x: ad.sum_(ad.sin(x) * ad.cos(x)), [a])

    def test_abs_off_kink(self):
        a = _vec(24)
        a[np.abs(a) < 0.1] = -0.7
        check_grads(lambda x: ad.sum_(ad.abs_(x)), [a])

    def test_square(self):
        check_grads(lambda x: ad.sum_(ad.square(x)), [_vec(24)])

    def test_maximum_minimum_no_ties(self):
        a = _vec(24)
        b = a + RNG.choice([-1.0, 1.0], 24).astype(np.float32) * 0.5
        check_grads(lambda x, y: ad.sum_(ad.maximum(x, y) + ad.minimum(x, y)),
                    [a, b])


class TestReductionsAndShapes:
    def test_sum_mean_axes(self):
        a = _vec(24).reshape(4, 6)
        w = Tensor(_vec(4))
        check_grads(lambda x: ad.sum_(ad.mean(x, axis=1) * w), [a])

    def test_reshape_concat_slice(self):
        a, b = _vec(12).reshape(3, 4), _vec(8).reshape(2, 4)
        w = Tensor(_vec(20).reshape(5, 4))

        def fn(x, y):
            cat = ad.concat([x, y], axis=0)
            return ad.sum_(ad.slice_(cat, 0, 1, 4) * ad.slice_(w, 0, 1, 4))
        check_grads(fn, [a, b])

    def test_matmul(self):
        a, x = _vec(12).reshape(3, 4), _vec(8).reshape(4, 2)
        check_grads(lambda p, q: ad.sum_(ad.matmul(p, q)), [a, x])

    def test_matmul_da_equals_outer_pattern(self):
        # scalar loss sum(A @ x): dA[i, j] must equal x[j] for every row i
        a = _vec(12).reshape(3, 4)
        x = _vec(4).reshape(4, 1)
        ta = Tensor(a)
        with Tape() as tape:
            tape.backward(ad.sum_(ad.matmul(ta, Tensor(x))))
        expect = np.tile(x.reshape(1, 4), (3, 1))
        np.testing.assert_allclose(ta.grad, expect, rtol=1e-6)

    def test_softmax_log_softmax(self):
        a = _vec(24).reshape(4, 6)
        w = Tensor(_vec(24).reshape(4, 6))
        check_grads(lambda x: ad.sum_(ad.softmax(x, axis=1) * w), [a])
        check_grads(lambda x: ad.sum_(ad.log_softmax(x, axis=1) * w), [a])

    def test_softmax_rows_sum_to_one(self):
        with Tape():
            s = ad.softmax(Tensor(_vec(24).reshape(4, 6)), axis=1)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-6)

    def test_gather_accumulates_duplicates(self):
        a = _vec(12).reshape(4, 3)
        idx = [0, 2, 2, 1]
        w = Tensor(_vec(12).reshape(4, 3))
        check_grads(lambda x: ad.sum_(ad.gather(x, idx) * w), [a])

    def test_scatter_mean_oracle(self):
        a = Tensor(np.array([[2.0], [4.0], [10.0]], dtype=np.float32))
        with Tape():
            out = ad.scatter_mean(a, [0, 0, 2], num_slots=3)
        np.testing.assert_allclose(out.data, [[3.0], [0.0], [10.0]])

    def test_scatter_mean_gradient(self):
        a = _vec(9).reshape(3, 3)
        w = Tensor(_vec(6).reshape(2, 3))
        check_grads(lambda x: ad.sum_(ad.scatter_mean(x, [0, 1, 0], 2) * w), [a])

    def test_avg_pool_oracle(self):
        x = Tensor(np.array([[0.0, 0.0], [4.0, 4.0]], dtype=np.float32))
        with Tape():
            out = ad.avg_pool2(x)
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == pytest.approx(2.0)

    def test_avg_pool_odd_edge_pad(self):
        x = _vec(15).reshape(3, 5)
        check_grads(lambda t: ad.sum_(ad.square(ad.avg_pool2(t))), [x])

    def test_batch_norm_train_gradients(self):
        x = _vec(24).reshape(6, 4)
        gamma, beta = _vec(4, 0.5, 1.5), _vec(4)
        rm, rv = np.zeros(4, np.float32), np.ones(4, np.float32)

        def fn(xx, g, b):
            return ad.sum_(ad.square(ad.batch_norm(
                xx, g, b, rm.copy(), rv.copy(), training=True)))
        check_grads(fn, [x, gamma, beta], rel_tol=5e-3)

    def test_batch_norm_eval_uses_running_stats(self):
        x = Tensor(_vec(8).reshape(2, 4))
        gamma = Tensor(np.ones(4, np.float32))
        beta = Tensor(np.zeros(4, np.float32))
        rm = np.full(4, 0.5, np.float32)
        rv = np.full(4, 2.0, np.float32)
        with Tape():
            out = ad.batch_norm(x, gamma, beta, rm, rv, training=False)
        expect = (x.data - 0.5) / np.sqrt(2.0 + 1e-5)
        np.testing.assert_allclose(out.data, expect, rtol=1e-5)
        assert rm[0] == 0.5  # eval mode must not touch running stats


class TestBroadcasting:
    @given(st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=20, deadline=None)
    def test_unbroadcast_matches_fd(self, n, m):
        a = RNG.uniform(-1, 1, (n, 1)).astype(np.float32)
        b = RNG.uniform(-1, 1, (1, m)).astype(np.float32)
        check_grads(lambda x, y: ad.sum_(x * y + x), [a, b], rel_tol=5e-3)

    def test_incompatible_shapes_raise(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((3, 2), np.float32)) + Tensor(np.zeros((4,), np.float32))


class TestTape:
    def test_backward_twice_rejected(self):
        t = Tensor(np.ones(3, np.float32))
        with Tape() as tape:
            loss = ad.sum_(t * t)
            tape.backward(loss)
            with pytest.raises(RuntimeError, match="consumed"):
                tape.backward(loss)

    def test_backward_needs_scalar(self):
        t = Tensor(np.ones(3, np.float32))
        with Tape() as tape:
            out = t * 2.0
            with pytest.raises(ValueError, match="scalar"):
                tape.backward(out)

    def test_ops_outside_tape_are_pure(self):
        t = Tensor(np.ones(3, np.float32))
        out = ad.sum_(t * 3.0)
        assert out.item() == pytest.approx(9.0)
        assert t.grad is None

    def test_gradient_accumulates_over_shared_subexpression(self):
        t = Tensor(np.array([2.0], np.float32))
        with Tape() as tape:
            y = t * t + t  # dy/dt = 2t + 1 = 5
            tape.backward(ad.sum_(y))
        assert t.grad[0] == pytest.approx(5.0)


class TestAdam:
    def test_first_step_oracle(self):
        # by hand: m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25 -> step = lr * 1.0
        p = np.array([1.0], np.float32)
        adam_step(p, np.array([0.5], np.float32), {}, lr=0.1)
        assert p[0] == pytest.approx(1.0 - 0.1, abs=1e-6)

    def test_nonfinite_gradient_rejected(self):
        p = np.array([1.0], np.float32)
        with pytest.raises(OptimizerError):
            adam_step(p, np.array([np.nan], np.float32), {}, lr=0.1)

    def test_step_skips_unused_params(self):
        used = Tensor(np.ones(2, np.float32))
        unused = Tensor(np.ones(2, np.float32))
        opt = Adam({"used": used, "unused": unused}, lr=0.1)
        with Tape() as tape:
            tape.backward(ad.sum_(used * used))
        before = unused.data.copy()
        opt.step()
        np.testing.assert_array_equal(unused.data, before)
        assert not np.array_equal(used.data, np.ones(2))

    def test_state_round_trip_bit_exact(self):
        t = Tensor(RNG.uniform(-1, 1, 4).astype(np.float32))
        opt = Adam({"w": t}, lr=1e-2)
        for _ in range(3):
            with Tape() as tape:
                tape.backward(ad.sum_(ad.square(t)))
            opt.step()
        arrays, steps = opt.state_arrays(), opt.state_steps()
        t2 = Tensor(t.data.copy())
        opt2 = Adam({"w": t2}, lr=1e-2)
        opt2.load_state({k: v.copy() for k, v in arrays.items()}, steps)
        for o in (opt, opt2):
            pass
        with Tape() as tape:
            tape.backward(ad.sum_(ad.square(t)))
        opt.step()
        with Tape() as tape:
            tape.backward(ad.sum_(ad.square(t2)))
        opt2.step()
        np.testing.assert_array_equal(t.data, t2.data)


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        arrays = {"a/w": RNG.standard_normal((3, 4)).astype(np.float32),
                  "b": RNG.standard_normal(7).astype(np.float32)}
        meta = {"note": "fixture", "count": 3}
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, arrays, meta)
        back, meta2 = load_checkpoint(path)
        assert meta2["note"] == "fixture" and meta2["count"] == 3
        assert set(back) == set(arrays)
        for k in arrays:
            assert back[k].dtype == np.float32
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_magic_header(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, {"w": np.zeros(2, np.float32)}, {})
        assert open(path, "rb").read(4) == b"SLN1"

    def test_truncated_file_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, {"w": np.arange(8, dtype=np.float32)}, {})
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-10])
        with pytest.raises(Exception):
            load_checkpoint(path)

    def test_no_temp_file_left_behind(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, {"w": np.zeros(4, np.float32)}, {})
        leftovers = [p.name for p in tmp_path.iterdir() if p.name != "m.ckpt"]
        assert leftovers == []
