import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from pose6d.errors import ConfigurationError, DivergenceError, ValidationError
from pose6d.fusion import autodiff as ad
from pose6d.fusion.gradcheck import OP_TOL, op_checks
from pose6d.fusion.losses import Targets, focal_loss, l1_offset_loss, multi_task_loss
from pose6d.fusion.network import (FusionConfig, NetworkOutput, build_plan, downsample_xyz, forward,
                                   init_params, pixel_to_point_fuse, point_to_pixel_fuse, shared_mlp)
from pose6d.fusion.train import train_toy
from pose6d.geometry import XyzMap, make_rng


def toy_map(rng, h=6, w=8, drop=0.2):
    xyz = np.concatenate([rng.uniform(-0.1, 0.1, (h, w, 2)), rng.uniform(0.4, 0.6, (h, w, 1))], axis=-1)
    valid = rng.uniform(size=(h, w)) > drop
    return XyzMap(np.where(valid[..., None], xyz, 0.0), valid)


# -- building blocks ---------------------------------------------------------

def test_shared_mlp_identity_and_sharing():
    rng = make_rng(0)
    x = rng.normal(size=(5, 4))
    assert np.array_equal(shared_mlp(x, [(np.eye(4), np.zeros(4))]).data, x)
    layers = [(rng.normal(size=(4, 6)), rng.normal(size=6)), (rng.normal(size=(6, 2)), rng.normal(size=2))]
    row = x[2:3]
    many = shared_mlp(np.repeat(row, 7, axis=0), layers).data
    one = shared_mlp(row, layers).data
    assert np.array_equal(many, np.repeat(one, 7, axis=0))
    assert shared_mlp(rng.normal(size=(2, 3, 4)), layers).shape == (2, 3, 2)
    with pytest.raises(ValidationError):
        shared_mlp(rng.normal(size=(5, 3)), layers)


def test_gather_max_examples():
    rng = make_rng(1)
    f = rng.normal(size=(6, 3))
    idx = np.array([[4], [0], [4]])
    assert np.array_equal(ad.gather_max(f, idx).data, f[[4, 0, 4]])
    assert np.array_equal(ad.gather_max(f, np.full((2, 5), 3)).data, f[[3, 3]])
    with pytest.raises(ValidationError):
        ad.gather_max(f, np.array([[6]]))


def test_gather_max_tie_routes_to_lowest_k():
    f = ad.parameter(np.array([[1.0], [1.0], [0.0]]))
    ad.sum_(ad.gather_max(f, np.array([[1, 0, 2]]))).backward()
    assert f.grad.ravel().tolist() == [0.0, 1.0, 0.0]


def test_op_gradients_match_finite_differences():
    results = op_checks(0)
    bad = [r for r in results if not r.passed]
    assert not bad, bad
    tight = {r.name: r.max_rel_error for r in results}
    assert tight["shared_mlp"] < 1e-6 and tight["gather_max"] < 1e-6
    assert all(r.tolerance == OP_TOL for r in results)


def test_pixel_to_point_identity_construction():
    rng = make_rng(2)
    m = toy_map(rng)
    cr, cp, n = 3, 4, 10
    rgb = np.tile(rng.normal(size=cr), (6, 8, 1))
    pf = rng.normal(size=(n, cp))
    pts = rng.uniform(-0.1, 0.1, (n, 3)) + [0, 0, 0.5]
    cfg = FusionConfig(k_r2p=4)
    fuse = (np.vstack([np.eye(cp), np.zeros((cp, cp))]), np.zeros(cp))
    out = pixel_to_point_fuse(rgb, m, pf, pts, cfg, (rng.normal(size=(cr, cp)), rng.normal(size=cp)), fuse)
    assert out.shape == (n, cp)
    assert np.array_equal(out.data, pf)
    with pytest.raises(ValidationError):
        pixel_to_point_fuse(rgb, m, pf, pts, FusionConfig(k_r2p=1000),
                            (np.eye(cr, cp), np.zeros(cp)), fuse)


def test_point_to_pixel_identity_construction():
    rng = make_rng(3)
    m = toy_map(rng)
    c, n = 4, 12
    rgb = rng.normal(size=(6, 8, c))
    pf = rng.normal(size=(n, c))
    pts = rng.uniform(-0.1, 0.1, (n, 3)) + [0, 0, 0.5]
    fuse = (np.vstack([np.eye(c), np.zeros((c, c))]), np.zeros(c))
    out = point_to_pixel_fuse(pf, pts, rgb, m, FusionConfig(k_p2r=1), (np.eye(c), np.zeros(c)), fuse)
    assert out.shape == rgb.shape
    assert np.array_equal(out.data, rgb)
    with pytest.raises(ValidationError):
        point_to_pixel_fuse(np.zeros((0, c)), np.zeros((0, 3)), rgb, m, FusionConfig(), (np.eye(c), np.zeros(c)), fuse)


def test_point_to_pixel_invalid_pixels_pass_through():
    rng = make_rng(4)
    m = toy_map(rng, drop=0.5)
    rgb = rng.normal(size=(6, 8, 3))
    pf = rng.normal(size=(9, 5))
    pts = rng.uniform(-0.1, 0.1, (9, 3)) + [0, 0, 0.5]
    out = point_to_pixel_fuse(pf, pts, rgb, m, FusionConfig(k_p2r=2),
                              (rng.normal(size=(5, 3)), rng.normal(size=3)),
                              (rng.normal(size=(6, 3)), rng.normal(size=3)))
    assert np.array_equal(out.data[~m.valid], rgb[~m.valid])
    assert not np.allclose(out.data[m.valid], rgb[m.valid])


# -- XYZ downsampling ---------------------------------------------------------

def test_downsample_stride_one_is_identity():
    m = toy_map(make_rng(5))
    d = downsample_xyz(m, 1)
    assert np.array_equal(d.xyz, m.xyz) and np.array_equal(d.valid, m.valid)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5), st.integers(3, 11), st.integers(3, 11))
def test_nearest_downsample_membership(seed, stride, h, w):
    m = toy_map(make_rng(seed), h, w, drop=0.4)
    d = downsample_xyz(m, stride, "nearest")
    assert d.valid.shape == (-(-h // stride), -(-w // stride))
    members = {tuple(p) for p in m.xyz[m.valid]}
    assert all(tuple(p) in members for p in d.xyz[d.valid])
    # a cell is valid exactly when it holds a valid pixel
    for i in range(d.valid.shape[0]):
        for j in range(d.valid.shape[1]):
            cell = m.valid[i * stride:(i + 1) * stride, j * stride:(j + 1) * stride]
            if cell.size == stride * stride:
                assert d.valid[i, j] == cell.any()


def test_depth_step_divergence():
    xyz = np.zeros((2, 2, 3))
    xyz[:, 0, 2] = 1.0
    xyz[:, 1, 2] = 3.0
    m = XyzMap(xyz, np.ones((2, 2), dtype=bool))
    assert downsample_xyz(m, 2, "mean-kernel").xyz[0, 0, 2] == 2.0
    assert downsample_xyz(m, 2, "nearest").xyz[0, 0, 2] in (1.0, 3.0)


def test_downsample_mean_ignores_invalid():
    xyz = np.zeros((2, 2, 3))
    xyz[0, 1] = [1.0, 2.0, 3.0]
    valid = np.array([[False, True], [False, False]])
    for mode in ("nearest", "mean-kernel"):
        d = downsample_xyz(XyzMap(xyz, valid), 2, mode)
        assert d.valid[0, 0] and np.array_equal(d.xyz[0, 0], [1.0, 2.0, 3.0])


# -- losses -----------------------------------------------------------------------

def test_focal_loss_examples():
    assert abs(focal_loss(np.zeros((1, 2)), [0]).item() - 0.173287) < 1e-6
    assert abs(focal_loss(np.zeros((1, 2)), [0]).item() + 0.25 * np.log(0.5)) < 1e-15
    assert focal_loss(np.array([[50.0, -50.0]]), [0]).item() < 1e-40
    assert focal_loss(np.array([[1000.0, 0.0]]), [0]).item() == 0.0


def test_focal_loss_gamma_zero_is_cross_entropy():
    rng = make_rng(6)
    z = rng.normal(size=(30, 4)) * 3
    lab = rng.integers(0, 4, 30)
    ce = np.mean(logsumexp(z, axis=1) - z[np.arange(30), lab])
    assert abs(focal_loss(z, lab, gamma=0.0).item() - ce) < 1e-12


def test_softmax_rows_sum_to_one():
    z = make_rng(7).normal(size=(50, 5)) * 10
    assert np.abs(np.exp(ad.log_softmax(z).data).sum(axis=1) - 1).max() < 1e-12


def test_l1_loss_examples_and_gradient():
    rng = make_rng(8)
    t = rng.normal(size=(6, 3))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
    assert l1_offset_loss(t, t, mask).item() == 0.0
    assert l1_offset_loss(t + 0.5, t, mask).item() == pytest.approx(0.5, abs=1e-15)
    p = ad.parameter(t + rng.choice([-1.0, 1.0], size=t.shape) * 0.3)
    l1_offset_loss(p, t, mask).backward()
    expect = np.sign(p.data - t) * mask[:, None] / (mask.sum() * 3)
    assert np.array_equal(p.grad, expect)
    with pytest.raises(ValidationError):
        l1_offset_loss(t, t, np.zeros(6, dtype=bool))


def perfect_output(targets, n_cls):
    n = len(targets.labels)
    logits = np.zeros((n, n_cls))
    logits[np.arange(n), targets.labels] = 1000.0
    return NetworkOutput(ad.Tensor(logits), ad.Tensor(targets.center_offsets), ad.Tensor(targets.keypoint_offsets))


def test_multi_task_loss_identities():
    rng = make_rng(9)
    n, k = 20, 4
    tg = Targets(rng.integers(0, 3, n), rng.normal(size=(n, 3)), rng.normal(size=(n, k * 3)), rng.uniform(size=n) > 0.3)
    total, parts = multi_task_loss(perfect_output(tg, 3), tg)
    assert total.item() == 0.0
    out = NetworkOutput(ad.Tensor(rng.normal(size=(n, 3))), ad.Tensor(rng.normal(size=(n, 3))),
                        ad.Tensor(rng.normal(size=(n, k * 3))))
    only_sem, parts = multi_task_loss(out, tg, (1, 0, 0))
    assert only_sem.item() == focal_loss(out.semantic_logits, tg.labels).item()
    base, parts = multi_task_loss(out, tg, (2, 1, 1))
    doubled, _ = multi_task_loss(out, tg, (2, 1, 2))
    assert doubled.item() - base.item() == pytest.approx(parts["keypoints"], rel=1e-14)
    assert base.item() == pytest.approx(2 * parts["semantic"] + parts["center"] + parts["keypoints"], rel=1e-15)
    with pytest.raises(ValidationError):
        multi_task_loss(out, tg, (1, -1, 1))


# -- forward / training -------------------------------------------------------------

def test_forward_shapes(tiny_training_scenes):
    scene = tiny_training_scenes[0]
    cfg = FusionConfig(n_classes=3, n_keypoints=8)
    out = forward(scene.frame, scene.points, cfg, init_params(cfg, 0))
    assert len(scene.points) == 256
    assert out.semantic_logits.shape == (256, 3)
    assert out.center_offsets.shape == (256, 3)
    assert out.keypoint_offsets.shape == (256, 24)


@pytest.mark.parametrize("cfg", [FusionConfig(), FusionConfig(enable_final_dense_fusion=True, downsample_mode="mean-kernel"),
                                 FusionConfig(enable_encode_fusion=False, enable_p2r=False)])
def test_forward_deterministic(tiny_training_scenes, cfg):
    scene = tiny_training_scenes[1]
    params = init_params(cfg, 3)
    a = forward(scene.frame, scene.points, cfg, params, seed=5)
    b = forward(scene.frame, scene.points, cfg, params, seed=5)
    assert np.array_equal(a.semantic_logits.data, b.semantic_logits.data)
    assert np.array_equal(a.keypoint_offsets.data, b.keypoint_offsets.data)


def test_forward_parameter_mismatch(tiny_training_scenes):
    scene = tiny_training_scenes[0]
    cfg = FusionConfig()
    params = init_params(cfg, 0)
    params["cnn.enc1.w"] = params["cnn.enc1.w"][:-1]
    with pytest.raises(ConfigurationError):
        forward(scene.frame, scene.points, cfg, params)
    del params["cnn.enc1.w"]
    with pytest.raises(ConfigurationError):
        forward(scene.frame, scene.points, cfg, params)


def test_init_params_shared_across_configs():
    a = init_params(FusionConfig(), 4)
    b = init_params(FusionConfig(enable_r2p=False), 4)
    assert set(b) < set(a)
    assert all(np.array_equal(a[k], b[k]) for k in b)


def test_plan_requires_divisible_image(tiny_training_scenes):
    from pose6d.geometry import RgbdFrame, CameraIntrinsics

    s = tiny_training_scenes[0]
    intr = CameraIntrinsics(100.0, 100.0, 31.0, 23.0, 62, 46)
    frame = RgbdFrame(s.frame.rgb[:46, :62], s.frame.depth[:46, :62], intr)
    with pytest.raises(ConfigurationError):
        build_plan(frame, s.points, FusionConfig())


def test_train_zero_lr_and_determinism(tiny_training_scenes):
    scenes = tiny_training_scenes[:1]
    flat = train_toy(scenes, FusionConfig(), steps=2, lr=0.0)
    assert len(flat.trace) == 3 and len(set(flat.trace)) == 1
    a = train_toy(scenes, FusionConfig(), steps=3, lr=0.05, seed=2)
    b = train_toy(scenes, FusionConfig(), steps=3, lr=0.05, seed=2)
    assert a.trace == b.trace
    assert a.trace[-1] < a.trace[0]


def test_train_divergence_names_step(tiny_training_scenes):
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError, match="step"):
            train_toy(tiny_training_scenes[:1], FusionConfig(), steps=20, lr=1e12)
