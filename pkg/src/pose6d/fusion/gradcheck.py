"""Finite-difference checks for every differentiable op and the full training loss.

Each check builds a scalar objective ``sum(op(inputs) * R)`` with a fixed
random ``R``, back-propagates once and compares against central differences
(h = 1e-6). Inputs are drawn away from ReLU/abs kinks, clamp edges and
max-pool ties so the objective is smooth at the test point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import XyzMap, make_rng
from . import autodiff as ad
from .losses import focal_loss, l1_offset_loss
from .network import (FusionConfig, conv3x3, downsample_xyz, pixel_to_point_fuse,
                      point_to_pixel_fuse, shared_mlp, upsample2)

H = 1e-6
OP_TOL = 1e-5
END_TO_END_TOL = 1e-4
DENOM_FLOOR = 1e-6
# the full loss is O(1), so h = 1e-6 central differences carry ~1e-10 absolute
# roundoff; gradients below this floor are effectively compared absolutely
END_TO_END_FLOOR = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def check_function(name, build, arrays, rng, tol=OP_TOL, entries=None) -> CheckResult:
    """``build(*tensors) -> Tensor``; checks d sum(out * R) / d each array."""
    probe = [ad.parameter(a) for a in arrays]
    out = build(*probe)
    weights = rng.normal(size=out.shape)
    ad.sum_(ad.mul(out, weights)).backward()

    def value():
        return float((build(*[ad.Tensor(a) for a in arrays]).data * weights).sum())

    worst = 0.0
    for a, p in zip(arrays, probe):
        analytic = p.grad if p.grad is not None else np.zeros_like(a)
        idx = None
        if entries is not None and a.size > entries:
            idx = rng.choice(a.size, size=entries, replace=False)
        numeric = ad.numerical_grad(value, a, H, idx)
        if idx is not None:
            analytic = analytic.reshape(-1)[idx]
            numeric = numeric.reshape(-1)[idx]
        worst = max(worst, ad.relative_error(analytic, numeric, DENOM_FLOOR))
    return CheckResult(name, worst, tol)


def _tie_free(rng, shape):
    # distinct values spaced well beyond the step size
    n = int(np.prod(shape))
    return (rng.permutation(n) / n * 2 - 1 + rng.uniform(0, 0.2 / n, n)).reshape(shape)


def op_checks(seed: int) -> list:
    rng = make_rng(seed)
    res = []
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    res.append(check_function("add", lambda x, y: ad.add(x, y), [a, b[:1].copy()], rng))
    res.append(check_function("sub", lambda x, y: ad.sub(x, y), [a, b], rng))
    res.append(check_function("mul", lambda x, y: ad.mul(x, y), [a, b], rng))
    res.append(check_function("matmul", lambda x, y: ad.matmul(x, y), [a, rng.normal(size=(3, 5))], rng))
    res.append(check_function("linear", lambda x, w, c: ad.linear(x, w, c),
                              [rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5)], rng))
    res.append(check_function("relu", ad.relu, [_away_from_zero(rng, (5, 4))], rng))
    res.append(check_function("abs", ad.abs_, [_away_from_zero(rng, (5, 4))], rng))
    res.append(check_function("exp", ad.exp, [rng.normal(size=(5, 4))], rng))
    res.append(check_function("power", lambda x: ad.power(x, 2.0), [rng.uniform(0.1, 1.0, (5, 4))], rng))
    res.append(check_function("power_frac", lambda x: ad.power(x, 1.5), [rng.uniform(0.1, 1.0, (5, 4))], rng))
    res.append(check_function("clamp_min", lambda x: ad.clamp_min(x, 0.0), [_away_from_zero(rng, (5, 4))], rng))
    res.append(check_function("reshape", lambda x: ad.reshape(x, (2, 10)), [rng.normal(size=(5, 4))], rng))
    res.append(check_function("sum", lambda x: ad.sum_(x, axis=0), [rng.normal(size=(5, 4))], rng))
    res.append(check_function("mean", ad.mean, [rng.normal(size=(5, 4))], rng))
    res.append(check_function("concat", lambda x, y: ad.concat([x, y], axis=1),
                              [rng.normal(size=(4, 2)), rng.normal(size=(4, 3))], rng))
    idx = rng.integers(0, 6, size=(4, 3))
    res.append(check_function("gather_rows", lambda x: ad.gather_rows(x, idx), [rng.normal(size=(6, 5))], rng))
    nbr = np.array([rng.choice(8, 4, replace=False) for _ in range(5)])
    res.append(check_function("gather_max", lambda x: ad.gather_max(x, nbr), [_tie_free(rng, (8, 6))], rng))
    res.append(check_function("reduce_max", lambda x: ad.reduce_max(x, axis=1), [_tie_free(rng, (3, 5, 4))], rng))
    res.append(check_function("log_softmax", ad.log_softmax, [rng.normal(size=(5, 4))], rng))
    labels = rng.integers(0, 4, size=5)
    res.append(check_function("pick", lambda x: ad.pick(x, labels), [rng.normal(size=(5, 4))], rng))
    res.append(check_function("conv3x3", lambda x, w, c: conv3x3(x, w, c, stride=2),
                              [rng.normal(size=(6, 8, 2)), rng.normal(size=(18, 3)), rng.normal(size=3)], rng))
    res.append(check_function("upsample2", upsample2, [rng.normal(size=(3, 4, 2))], rng))
    w1, b1, w2, b2 = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=(6, 2)), rng.normal(size=2)
    res.append(check_function("shared_mlp", lambda x, p, q, r, s: shared_mlp(x, [(p, q), (r, s)]),
                              [rng.normal(size=(7, 3)), w1, b1, w2, b2], rng))
    res.append(check_function("focal_loss", lambda x: focal_loss(x, labels), [rng.normal(size=(5, 4))], rng))
    target = rng.normal(size=(5, 3))
    mask = np.array([True, False, True, True, False])
    res.append(check_function("l1_offset_loss",
                              lambda x: l1_offset_loss(x, target, mask),
                              [target + _away_from_zero(rng, (5, 3))], rng))
    res.extend(fusion_block_checks(rng))
    return res


def _toy_map(rng, h=6, w=8):
    xyz = np.stack(np.meshgrid(np.arange(w) * 0.01, np.arange(h) * 0.01), axis=-1)
    xyz = np.concatenate([xyz, 0.5 + rng.uniform(0, 0.02, (h, w, 1))], axis=-1)
    valid = rng.uniform(size=(h, w)) > 0.2
    return XyzMap(np.where(valid[..., None], xyz, 0.0), valid)


def fusion_block_checks(rng) -> list:
    m = _toy_map(rng)
    cfg = FusionConfig(k_r2p=4, k_p2r=2)
    pts = m.valid_points()[0][rng.choice(int(m.valid.sum()), 10, replace=False)] + rng.normal(0, 1e-3, (10, 3))
    cr, cp = 3, 4
    arrays = [_tie_free(rng, (6, 8, cr)), rng.normal(size=(10, cp)),
              rng.normal(size=(cr, cp)), rng.normal(size=cp), rng.normal(size=(2 * cp, cp)), rng.normal(size=cp)]
    r2p = check_function(
        "pixel_to_point_fuse",
        lambda f, p, w1, b1, w2, b2: pixel_to_point_fuse(f, m, p, pts, cfg, (w1, b1), (w2, b2)), arrays, rng)
    arrays = [_tie_free(rng, (10, cp)), rng.normal(size=(6, 8, cr)),
              rng.normal(size=(cp, cr)), rng.normal(size=cr), rng.normal(size=(2 * cr, cr)), rng.normal(size=cr)]
    p2r = check_function(
        "point_to_pixel_fuse",
        lambda p, f, w1, b1, w2, b2: point_to_pixel_fuse(p, pts, f, m, cfg, (w1, b1), (w2, b2)), arrays, rng)
    return [r2p, p2r]


def end_to_end_check(seed: int, n_params: int = 20, scene=None, cfg: FusionConfig = None) -> CheckResult:
    """Gradient of the full multi-task loss w.r.t. ``n_params`` random scalar parameters."""
    from .network import build_plan, init_params
    from .train import scene_loss, tiny_scenes

    cfg = cfg or FusionConfig()
    scene = scene or tiny_scenes(1, seed)[0]
    rng = make_rng(seed)
    params = init_params(cfg, seed)
    plan = build_plan(scene.frame, scene.points, cfg, seed)
    tensors = {k: ad.parameter(v) for k, v in params.items()}
    loss, _ = scene_loss(scene, cfg, tensors, plan)
    loss.backward()
    names = sorted(params)
    worst = 0.0
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        arr = params[name]
        i = int(rng.integers(arr.size))
        analytic = tensors[name].grad.reshape(-1)[i]
        numeric = ad.numerical_grad(lambda: scene_loss(scene, cfg, params, plan)[0].item(), arr, H, [i])
        worst = max(worst, ad.relative_error(analytic, numeric.reshape(-1)[i], END_TO_END_FLOOR))
    return CheckResult("forward+multi_task_loss", worst, END_TO_END_TOL)


def run_suite(seeds=(0, 1, 2, 3, 4)) -> list:
    out = []
    for s in seeds:
        out.extend(CheckResult(f"{r.name}[seed={s}]", r.max_rel_error, r.tolerance) for r in op_checks(s))
        r = end_to_end_check(s)
        out.append(CheckResult(f"{r.name}[seed={s}]", r.max_rel_error, r.tolerance))
    return out
