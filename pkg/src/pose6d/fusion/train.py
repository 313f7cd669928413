"""Desk-scale training: tiny synthetic scenes and plain gradient descent."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError, ValidationError
from ..geometry import CameraIntrinsics, PointCloud, RgbdFrame, XyzMap, lift_depth
from ..synth import SceneSpec, default_spec, make_scene
from ..voting import ground_truth_votes
from .autodiff import parameter
from .losses import DEFAULT_WEIGHTS, Targets, multi_task_loss
from .network import FusionConfig, FusionPlan, build_plan, forward, init_params, point_pixels

TINY_INTRINSICS = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)


@dataclass(frozen=True, eq=False)
class TrainingScene:
    frame: RgbdFrame
    points: PointCloud
    targets: Targets


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: dict
    trace: list


def tiny_spec(n_keypoints: int = 8) -> SceneSpec:
    base = default_spec()
    return SceneSpec(base.catalog, intrinsics=TINY_INTRINSICS, instances=(2, 2),
                     depth_range=(0.45, 0.55), n_points=None, n_keypoints=n_keypoints, min_pixels=120)


def estimate_normals(xyz_map: XyzMap) -> np.ndarray:
    """Per-pixel normals from central differences, facing the camera; (0, 0, -1) where undefined."""
    xyz, ok = xyz_map.xyz, xyz_map.valid
    h, w = ok.shape
    out = np.tile(np.array([0.0, 0.0, -1.0]), (h, w, 1))
    du = xyz[1:-1, 2:] - xyz[1:-1, :-2]
    dv = xyz[2:, 1:-1] - xyz[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    good = (ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1] & ok[1:-1, 1:-1]) & (norm > 1e-12)
    n = n / np.where(norm > 0, norm, 1.0)[..., None]
    flip = (n * xyz[1:-1, 1:-1]).sum(-1) > 0
    n[flip] *= -1
    inner = out[1:-1, 1:-1]
    inner[good] = n[good]
    return out


def training_scene(bundle, n_points: int = 256, seed: int = 0) -> TrainingScene:
    """Sample ``n_points`` foreground pixels of a synthetic scene with exact supervision."""
    votes = ground_truth_votes(bundle.frame, bundle.annotation, bundle.models, n_points, seed)
    if len(votes) < n_points:
        raise ValidationError(f"scene has only {len(votes)} foreground pixels, {n_points} requested")
    pix = point_pixels(votes.points, bundle.frame)
    normals = estimate_normals(lift_depth(bundle.frame)).reshape(-1, 3)[pix]
    cloud = PointCloud(votes.points, bundle.frame.rgb.reshape(-1, 3)[pix], normals)
    targets = Targets(votes.semantic, votes.center_offset, votes.keypoint_offsets, votes.semantic > 0)
    return TrainingScene(bundle.frame, cloud, targets)


def tiny_scenes(count: int = 4, seed: int = 0, n_points: int = 256, n_keypoints: int = 8) -> list:
    spec = tiny_spec(n_keypoints)
    return [training_scene(make_scene(spec, seed * 1009 + i), n_points, seed + i) for i in range(count)]


def scene_loss(scene: TrainingScene, cfg: FusionConfig, params: dict, plan: FusionPlan, weights=DEFAULT_WEIGHTS):
    out = forward(scene.frame, scene.points, cfg, params, plan=plan)
    return multi_task_loss(out, scene.targets, weights)


def train_toy(scenes, cfg: FusionConfig, steps: int, lr: float, seed: int = 0,
              weights=DEFAULT_WEIGHTS, params: dict = None) -> TrainResult:
    """Full-batch gradient descent on the mean multi-task loss over ``scenes``.

    ``trace[i]`` is the loss evaluated before update ``i``; a final entry holds
    the loss after the last update, so the trace has ``steps + 1`` values.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValidationError("training needs at least one scene")
    if steps < 0 or not lr >= 0:
        raise ValidationError("steps and lr must be non-negative")
    plans = [build_plan(s.frame, s.points, cfg, seed) for s in scenes]
    start = init_params(cfg, seed) if params is None else params
    tensors = {k: parameter(np.array(v, dtype=np.float64), name=k) for k, v in start.items()}
    trace = []
    # overflow surfaces as a non-finite loss below, reported as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        _descend(scenes, plans, cfg, tensors, steps, lr, weights, trace)
    return TrainResult({k: t.data.copy() for k, t in tensors.items()}, trace)


def _descend(scenes, plans, cfg, tensors, steps, lr, weights, trace):
    for step in range(steps + 1):
        for t in tensors.values():
            t.zero_grad()
        total = None
        for scene, plan in zip(scenes, plans):
            loss, _ = scene_loss(scene, cfg, tensors, plan, weights)
            total = loss if total is None else total + loss
        total = total * (1.0 / len(scenes))
        value = total.item()
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        trace.append(value)
        if step == steps:
            break
        total.backward()
        for t in tensors.values():
            if t.grad is not None:
                t.data = t.data - lr * t.grad
