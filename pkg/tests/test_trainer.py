import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropnerf import autodiff as ad
from dropnerf.autodiff import ParamVector
from dropnerf.errors import ConfigError, NumericalError
from dropnerf.field import FieldConfig, init_params
from dropnerf.synth import CameraRing
from dropnerf.trainer import (
    BatchSampler,
    TrainConfig,
    TrainState,
    adam_step,
    batch_loss,
    build_ray_dataset,
    loss_mse,
    lr_schedule,
    train,
    write_history,
)

SMALL = FieldConfig(depth=2, width=16, skip_layer=1, pos_freqs=3, dir_freqs=1)


def _tiny_data(n=3, size=8, seed=0):
    ring = CameraRing(n_views=n, width=size, height=size)
    imgs = np.random.default_rng(seed).random((n, size, size, 3))
    return ring, imgs


def test_config_validation():
    for kw in ({"iterations": 0}, {"batch_rays": 0}, {"lr_end": 1e-2}, {"lr_end": 0.0}, {"samples_per_ray": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_ray_counts():
    ring, imgs = _tiny_data(n=2, size=64)
    intr, poses = ring.intrinsics(), ring.poses()
    assert len(build_ray_dataset(imgs, None, intr, poses)) == 2 * 64 * 64
    assert len(build_ray_dataset(imgs, np.zeros((2, 64, 64), np.uint8), intr, poses)) == 2 * 64 * 64
    masks = np.zeros((2, 64, 64), np.uint8)
    masks[1].ravel()[np.random.default_rng(1).choice(4096, 100, replace=False)] = 1
    rays = build_ray_dataset(imgs, masks, intr, poses)
    assert np.count_nonzero(rays.frames == 1) == 3996
    assert np.count_nonzero(rays.frames == 0) == 4096
    assert not masks[rays.frames, rays.pixels // 64, rays.pixels % 64].any()
    np.testing.assert_array_equal(rays.targets, imgs[rays.frames, rays.pixels // 64, rays.pixels % 64])


def test_all_masked_is_config_error():
    ring, imgs = _tiny_data()
    with pytest.raises(ConfigError, match="coverage"):
        build_ray_dataset(imgs, np.ones((3, 8, 8), np.uint8), ring.intrinsics(), ring.poses())
    with pytest.raises(ConfigError):
        build_ray_dataset(imgs, np.zeros((3, 8, 7), np.uint8), ring.intrinsics(), ring.poses())


def test_loss_examples():
    x = np.random.default_rng(0).random((5, 3))
    assert float(loss_mse(x, x).value) == 0.0
    assert float(loss_mse(np.array([[0.6, 0.2, 0.3]]), np.array([[0.5, 0.2, 0.3]])).value) == pytest.approx(0.01, abs=1e-15)
    with pytest.raises(ValueError):
        loss_mse(np.zeros((0, 3)), np.zeros((0, 3)))


def test_loss_matches_naive_sum():
    rng = np.random.default_rng(3)
    a, b = rng.random((37, 3)), rng.random((37, 3))
    total = 0.0
    for i in range(37):
        for c in range(3):
            total += (a[i, c] - b[i, c]) ** 2
    assert abs(float(loss_mse(a, b).value) - total / 37) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_loss_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((20, 3)), rng.random((20, 3))
    p = rng.permutation(20)
    assert abs(float(loss_mse(a, b).value) - float(loss_mse(a[p], b[p]).value)) < 1e-15


def test_lr_schedule_endpoints():
    cfg = TrainConfig(iterations=5000, lr_start=5e-4, lr_end=5e-5)
    assert lr_schedule(cfg, 0) == 5e-4
    assert lr_schedule(cfg, 5000) == pytest.approx(5e-5, rel=1e-12)
    assert lr_schedule(cfg, 2500) == pytest.approx(math.sqrt(5e-4 * 5e-5), rel=1e-12)
    assert lr_schedule(cfg, 2500) == pytest.approx(1.581e-4, rel=1e-3)
    with pytest.raises(ValueError):
        lr_schedule(cfg, 5001)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.floats(1e-5, 1e-2), st.floats(0.01, 1.0))
def test_lr_schedule_shape(n, lr0, ratio):
    cfg = TrainConfig(iterations=n, lr_start=lr0, lr_end=lr0 * ratio)
    lrs = [lr_schedule(cfg, i) for i in range(n + 1)]
    if ratio < 1.0:
        assert all(a > b for a, b in zip(lrs, lrs[1:]))
    flat = TrainConfig(iterations=n, lr_start=lr0, lr_end=lr0)
    assert {lr_schedule(flat, i) for i in range(n + 1)} == {lr0}


def test_adam_zero_gradient():
    p = ParamVector(np.array([1.0, -2.0]))
    s = TrainState(p, np.array([0.5, 0.1]), np.array([0.2, 0.3]), 4)
    out = adam_step(s, ParamVector(np.zeros(2)), 0.1)
    # moment estimates are nonzero, so the step is their bias-corrected ratio
    np.testing.assert_array_equal(out.m, 0.9 * s.m)
    np.testing.assert_array_equal(out.v, 0.999 * s.v)
    fresh = adam_step(TrainState.fresh(p), ParamVector(np.zeros(2)), 0.1)
    np.testing.assert_array_equal(fresh.params.values, p.values)


def test_adam_first_step_is_sign():
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    s = adam_step(TrainState.fresh(ParamVector(np.zeros(4))), ParamVector(g), 0.01)
    np.testing.assert_allclose(s.params.values, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_matches_scalar_reference_on_quadratic():
    x, m, v = 1.0, 0.0, 0.0
    s = TrainState.fresh(ParamVector(np.array([1.0])))
    hit = None
    for t in range(1, 201):
        g = 2.0 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        s = adam_step(s, ParamVector(2.0 * s.params.values), 0.1)
        assert s.params.values[0] == pytest.approx(x, abs=1e-14)
        if hit is None and abs(x) < 0.01:
            hit = t
    assert hit is not None and hit <= 200


def test_adam_non_finite_gradient_names_slice():
    p = ParamVector(np.zeros(5), {"a": (2,), "b": (3,)})
    g = ParamVector(np.array([0.0, 0.0, 1.0, np.nan, 0.0]), p.layout)
    s = TrainState(p, np.zeros(5), np.zeros(5), 41)
    with pytest.raises(NumericalError, match="41.*'b'"):
        adam_step(s, g, 0.1)
    with pytest.raises(ValueError):
        adam_step(s, ParamVector(np.zeros(4)), 0.1)


def test_batch_sampler_epochs():
    s = BatchSampler(10, 4, seed=0)
    seen = np.concatenate([s.next() for _ in range(5)])
    assert sorted(seen[:10]) == list(range(10))
    assert sorted(seen[10:20]) == list(range(10))
    assert all(len(set(b)) == len(b) for b in (seen[:4], seen[4:8]))
    full = BatchSampler(6, 50, seed=1)
    for _ in range(3):
        assert sorted(full.next()) == list(range(6))


def test_micro_batch_gradient_matches_finite_differences():
    ring, imgs = _tiny_data(n=2, size=4)
    rays = build_ray_dataset(imgs, None, ring.intrinsics(), ring.poses())
    cfg = TrainConfig(samples_per_ray=8, jitter=True, seed=2)
    p = init_params(SMALL, 4)
    idx = np.array([0, 5, 17, 30])
    f = lambda tp: batch_loss(tp, SMALL, rays, idx, cfg, ring.near, ring.far, 3)  # noqa: E731
    assert ad.finite_difference_check(f, p, step=1e-6) < 1e-4


def _run(imgs, masks, ring, **kw):
    cfg = TrainConfig(iterations=kw.pop("iterations", 6), batch_rays=32, samples_per_ray=8, **kw)
    rays = build_ray_dataset(imgs, masks, ring.intrinsics(), ring.poses())
    return rays, train(rays, cfg, SMALL, ring.near, ring.far)


def test_training_is_deterministic():
    ring, imgs = _tiny_data()
    _, a = _run(imgs, None, ring, seed=3)
    _, b = _run(imgs, None, ring, seed=3)
    assert a.state.params.values.tobytes() == b.state.params.values.tobytes()
    assert a.history == b.history
    _, c = _run(imgs, None, ring, seed=4)
    assert not np.array_equal(a.state.params.values, c.state.params.values)


def test_masked_pixel_values_never_matter():
    ring, imgs = _tiny_data()
    masks = (np.random.default_rng(5).random((3, 8, 8)) < 0.3).astype(np.uint8)
    other = imgs.copy()
    other[masks == 1] = np.random.default_rng(6).random((int(masks.sum()), 3))
    ra, a = _run(imgs, masks, ring)
    rb, b = _run(other, masks, ring)
    np.testing.assert_array_equal(ra.targets, rb.targets)
    assert a.history == b.history
    assert a.state.params.values.tobytes() == b.state.params.values.tobytes()


def test_loss_decreases_and_progress_reported(tmp_path):
    ring = CameraRing(n_views=3, width=8, height=8)
    imgs = np.broadcast_to([0.9, 0.2, 0.4], (3, 8, 8, 3))
    calls = []
    cfg = TrainConfig(iterations=60, batch_rays=64, samples_per_ray=8, lr_start=1e-2, lr_end=1e-3, log_every=20,
                      checkpoint_every=30)
    rays = build_ray_dataset(imgs, None, ring.intrinsics(), ring.poses())
    res = train(rays, cfg, SMALL, ring.near, ring.far, lambda *a: calls.append(a), tmp_path)
    assert res.history[-1][2] < res.history[0][2] / 10
    assert [c[0] for c in calls] == [0, 20, 40, 59]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt_000030.bin", "ckpt_000060.bin"]
    write_history(tmp_path / "loss.csv", res.history)
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,lr,loss" and len(lines) == 61


def test_non_finite_targets_abort():
    ring, imgs = _tiny_data()
    imgs = imgs.copy()
    imgs[:] = np.inf
    with pytest.raises(NumericalError):
        _run(imgs, None, ring)
