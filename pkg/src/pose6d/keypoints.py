"""Object keypoint selection: farthest point sampling and SIFT-FPS."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dog import detect_dog_keypoints, to_gray
from .errors import InsufficientSaliencyError, InvariantError, ValidationError
from .geometry import (CameraIntrinsics, PointCloud, RigidTransform, make_rng,
                       random_rotation)

EXACT_DIAMETER_LIMIT = 4096
DEDUPE_RADIUS = 1e-4
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
DEFAULT_VIEW_INTRINSICS = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)


@dataclass(frozen=True, eq=False)
class KeypointModel:
    object_id: str
    keypoints: np.ndarray
    center: np.ndarray
    diameter: float

    def __post_init__(self):
        kps = np.array(self.keypoints, dtype=np.float64).reshape(-1, 3)
        center = np.array(self.center, dtype=np.float64).reshape(3)
        if not self.diameter > 0:
            raise InvariantError("diameter must be positive")
        if len(kps) > 1:
            d = np.sqrt(((kps[:, None] - kps[None]) ** 2).sum(-1))
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0:
                raise InvariantError("keypoints must be distinct")
        if len(kps) and np.linalg.norm(kps - center, axis=1).max() > self.diameter:
            raise InvariantError("keypoints must lie within the object's bounding sphere")
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "diameter", float(self.diameter))

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)


def fps(points, n: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = len(pts)
    if n > m or n < 1:
        raise ValidationError(f"cannot select {n} of {m} points")
    if not 0 <= seed_index < m:
        raise ValidationError(f"seed index {seed_index} out of range for {m} points")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed_index
    x, y, z = (np.ascontiguousarray(pts[:, i]) for i in range(3))
    min_d2 = np.full(m, np.inf)
    d2 = np.empty(m)
    tmp = np.empty(m)
    nxt = seed_index
    for i in range(1, n + 1):
        px, py, pz = pts[nxt]
        np.subtract(x, px, out=d2)
        np.multiply(d2, d2, out=d2)
        np.subtract(y, py, out=tmp)
        d2 += tmp * tmp
        np.subtract(z, pz, out=tmp)
        d2 += tmp * tmp
        np.minimum(min_d2, d2, out=min_d2)
        if i == n:
            break
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
    return chosen


def farthest_from_centroid(points) -> int:
    pts = np.asarray(points, dtype=np.float64)
    return int(np.argmax(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))


def model_diameter(points) -> float:
    """Max pairwise distance; above 4096 points, over an FPS-reduced 4096-subset."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise ValidationError("diameter needs at least two points")
    if len(pts) > EXACT_DIAMETER_LIMIT:
        pts = pts[fps(pts, EXACT_DIAMETER_LIMIT, farthest_from_centroid(pts))]
    best = 0.0
    for s in range(0, len(pts), 512):
        d2 = ((pts[s:s + 512, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def fps_keypoint_model(object_id: str, model_points, n: int, seed: Optional[int] = None) -> KeypointModel:
    """Plain FPS over model points; start at the farthest-from-centroid point or a seeded random one."""
    pts = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    start = farthest_from_centroid(pts) if seed is None else int(make_rng(seed).integers(len(pts)))
    idx = fps(pts, n, start)
    return KeypointModel(object_id, pts[idx], pts.mean(axis=0), model_diameter(pts))


def look_at(center, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Object-to-camera transform of a camera at ``center`` aimed at the origin.

    Camera y points along the world "down" direction (-up) projected onto the
    image plane; when the optical axis is parallel to ``up``, world +y is used
    as the up hint instead.
    """
    c = np.asarray(center, dtype=np.float64)
    z = -c / np.linalg.norm(c)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(z, up)) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(-up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidTransform(r, -r @ c)


def sphere_viewpoints(count: int, radius: float, rotation: Optional[np.ndarray] = None) -> list:
    """``count`` camera poses on a Fibonacci lattice of the sphere, all looking at the origin.

    Lattice point i has height ``1 - (2i + 1) / count``; a single view sits on
    the +z pole. ``rotation`` optionally rotates the whole lattice.
    """
    if count < 1 or not radius > 0:
        raise ValidationError("need count >= 1 and radius > 0")
    return [look_at(c) for c in sphere_centers(count, radius, rotation)]


def sphere_centers(count: int, radius: float, rotation=None) -> np.ndarray:
    if count == 1:
        dirs = np.array([[0.0, 0.0, 1.0]])
    else:
        i = np.arange(count, dtype=np.float64)
        z = 1.0 - (2.0 * i + 1.0) / count
        rho = np.sqrt(1.0 - z * z)
        phi = i * GOLDEN_ANGLE
        dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    if rotation is not None:
        dirs = dirs @ np.asarray(rotation).T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * radius


def _thread_count() -> int:
    n = int(os.environ.get("POSE6D_THREADS", "0") or 0)
    return n if n > 0 else min(8, os.cpu_count() or 1)


def render_view(obj, pose: RigidTransform, intr: CameraIntrinsics, background, splat_radius=1):
    from .synth import splat_render

    frame, _ = splat_render([(obj, pose, 1)], intr, background=background,
                            splat_radius=splat_radius, visibility_samples=16)
    return frame


def _model_points_and_colors(obj):
    from .synth import ProceduralObject

    if isinstance(obj, ProceduralObject):
        cloud = obj.sample_surface(4096, seed=0)
    elif isinstance(obj, PointCloud):
        cloud = obj
    else:
        raise ValidationError(f"cannot select keypoints on {type(obj).__name__}")
    return cloud


def view_candidates(obj, pose, intr, background, detector, splat_radius=1) -> np.ndarray:
    """Object-frame 3D points of DoG keypoints detected in one rendered view."""
    frame = render_view(obj, pose, intr, background, splat_radius)
    kps = detect_dog_keypoints(to_gray(frame.rgb), **detector)
    out = []
    inv = pose.inverse()
    for kp in kps:
        iu, iv = int(np.rint(kp.u)), int(np.rint(kp.v))
        d = frame.depth[iv, iu]
        if d <= 0:
            continue
        p_cam = np.array([(kp.u - intr.cx) * d / intr.fx, (kp.v - intr.cy) * d / intr.fy, d])
        out.append(inv.apply(p_cam))
    return np.array(out).reshape(-1, 3)


def dedupe_points(points, radius=DEDUPE_RADIUS) -> np.ndarray:
    kept = []
    for p in np.asarray(points).reshape(-1, 3):
        if not kept or np.min(((np.asarray(kept) - p) ** 2).sum(1)) > radius * radius:
            kept.append(p)
    return np.array(kept).reshape(-1, 3)


def sift_fps_candidates(obj, views: int = 60, intr: CameraIntrinsics = DEFAULT_VIEW_INTRINSICS,
                        radius: Optional[float] = None, seed: Optional[int] = None,
                        detector: Optional[dict] = None, splat_radius: int = 1) -> np.ndarray:
    cloud = _model_points_and_colors(obj)
    center = cloud.points.mean(axis=0)
    if radius is None:
        diameter = 2.0 * np.sqrt(((cloud.points - center) ** 2).sum(1).max())
        # the whole object stays inside the narrower field of view with some margin
        half_fov = np.arctan(min(intr.width / intr.fx, intr.height / intr.fy) / 2)
        radius = 0.5 * diameter / np.sin(half_fov) * 1.15
    rotation = None if seed is None else random_rotation(make_rng(seed))
    poses = [RigidTransform(p.r, p.t - p.r @ center)
             for p in sphere_viewpoints(views, radius, rotation)]
    colors = cloud.colors if cloud.colors is not None else np.full((len(cloud), 3), 0.5)
    # background matches the model so silhouettes do not register as texture
    background = tuple(np.median(colors, axis=0))
    det = dict(octaves=3, scales_per_octave=3, contrast_thresh=0.03, edge_ratio=10.0)
    det.update(detector or {})
    with ThreadPoolExecutor(_thread_count()) as pool:
        per_view = list(pool.map(
            lambda p: view_candidates(obj, p, intr, background, det, splat_radius), poses))
    # merge in view order so the result is independent of completion order
    return dedupe_points(np.concatenate(per_view) if per_view else np.zeros((0, 3)))


def sift_fps_select(obj, n_keypoints: int = 8, views: int = 60,
                    intr: CameraIntrinsics = DEFAULT_VIEW_INTRINSICS, object_id: Optional[str] = None,
                    radius: Optional[float] = None, seed: Optional[int] = None,
                    detector: Optional[dict] = None, splat_radius: int = 1) -> KeypointModel:
    """Texture-salient keypoints: DoG detections over sphere views, lifted to 3D, then FPS."""
    cands = sift_fps_candidates(obj, views, intr, radius, seed, detector, splat_radius)
    if len(cands) < n_keypoints:
        raise InsufficientSaliencyError(len(cands), n_keypoints)
    idx = fps(cands, n_keypoints, farthest_from_centroid(cands))
    cloud = _model_points_and_colors(obj)
    oid = object_id or getattr(obj, "object_id", "object")
    return KeypointModel(oid, cands[idx], cloud.points.mean(axis=0), model_diameter(cloud.points))
