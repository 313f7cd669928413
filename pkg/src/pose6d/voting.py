"""Instance segmentation and keypoint voting by Gaussian mean-shift, then pose fitting."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvariantError, ValidationError
from .geometry import RigidTransform, lift_depth, make_rng
from .rigid_fit import Correspondences, fit_pose

CENTER_BANDWIDTH = 0.04
KEYPOINT_BANDWIDTH = 0.02
TOL = 1e-5
MAX_ITER = 100
MIN_CLUSTER_SIZE = 10
BACKGROUND = 0


@dataclass(frozen=True, eq=False)
class VoteField:
    """Per-point votes. ``instance`` optionally carries ground-truth instance ids."""

    points: np.ndarray
    semantic: np.ndarray
    center_offset: np.ndarray
    keypoint_offsets: np.ndarray
    instance: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        sem = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        ctr = np.asarray(self.center_offset, dtype=np.float64).reshape(-1, 3)
        kps = np.asarray(self.keypoint_offsets, dtype=np.float64)
        if kps.ndim == 2:
            kps = kps.reshape(n, -1, 3)
        if len(sem) != n or len(ctr) != n or kps.ndim != 3 or kps.shape[0] != n or kps.shape[2] != 3:
            raise InvariantError("vote arrays must share N")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "center_offset", ctr)
        object.__setattr__(self, "keypoint_offsets", kps)
        if self.instance is not None:
            inst = np.asarray(self.instance, dtype=np.int64).reshape(-1)
            if len(inst) != n:
                raise InvariantError("instance ids must match N")
            object.__setattr__(self, "instance", inst)

    def __len__(self):
        return len(self.points)

    @property
    def n_keypoints(self) -> int:
        return self.keypoint_offsets.shape[1]

    def subset(self, idx) -> "VoteField":
        return VoteField(self.points[idx], self.semantic[idx], self.center_offset[idx],
                         self.keypoint_offsets[idx], None if self.instance is None else self.instance[idx])


@dataclass(frozen=True, eq=False)
class Detection:
    class_id: int
    member_indices: np.ndarray
    voted_center: np.ndarray
    voted_keypoints: Optional[np.ndarray] = None
    pose: Optional[RigidTransform] = None
    keypoint_support: Optional[np.ndarray] = None

    def __post_init__(self):
        members = np.asarray(self.member_indices, dtype=np.int64).reshape(-1)
        if len(members) == 0:
            raise InvariantError("a detection needs at least one member point")
        object.__setattr__(self, "member_indices", members)
        object.__setattr__(self, "voted_center", np.asarray(self.voted_center, dtype=np.float64).reshape(3))
        if self.voted_keypoints is not None:
            kps = np.asarray(self.voted_keypoints, dtype=np.float64).reshape(-1, 3)
            if not np.all(np.isfinite(kps)):
                raise InvariantError("voted keypoints must be finite")
            object.__setattr__(self, "voted_keypoints", kps)


def _shift(positions, samples, bandwidth):
    """One Gaussian mean-shift step for every row of ``positions``."""
    inv = -0.5 / (bandwidth * bandwidth)
    out = np.empty_like(positions)
    step = max(1, (1 << 22) // max(1, len(samples)))
    for s in range(0, len(positions), step):
        p = positions[s:s + step]
        d2 = ((p[:, None, :] - samples[None, :, :]) ** 2).sum(-1)
        w = np.exp(d2 * inv)
        out[s:s + step] = (w @ samples) / w.sum(axis=1, keepdims=True)
    return out


def _climb(start, samples, bandwidth, tol, max_iter):
    pos = np.array(start, dtype=np.float64)
    active = np.ones(len(pos), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        new = _shift(pos[active], samples, bandwidth)
        moved = np.linalg.norm(new - pos[active], axis=1)
        pos[active] = new
        idx = np.flatnonzero(active)
        active[idx[moved < tol]] = False
    return pos


def mean_shift(samples, bandwidth: float, tol: float = TOL, max_iter: int = MAX_ITER):
    """Gaussian-kernel mean-shift started from every sample.

    Converged positions within ``bandwidth / 2`` of an existing mode join it
    (modes are founded in sample order). Each mode is the converged mean of its
    members, climbed once more to a fixed point. Modes are returned ordered by
    decreasing support, ties by founding order; ``assignment[i]`` indexes them.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        raise ValidationError("mean shift needs at least one sample")
    if not bandwidth > 0:
        raise ValidationError("bandwidth must be positive")
    if len(x) == 1:
        return [x[0].copy()], np.zeros(1, dtype=np.int64)
    converged = _climb(x, x, bandwidth, tol, max_iter)
    merge2 = (bandwidth / 2) ** 2
    founders = []
    label = np.empty(len(x), dtype=np.int64)
    for i, p in enumerate(converged):
        if founders:
            d2 = ((converged[founders] - p) ** 2).sum(1)
            j = int(np.argmin(d2))
            if d2[j] <= merge2:
                label[i] = j
                continue
        label[i] = len(founders)
        founders.append(i)
    counts = np.bincount(label, minlength=len(founders))
    means = np.stack([converged[label == j].mean(axis=0) for j in range(len(founders))])
    if np.all(x == x[0]):
        modes = x[:1].copy()
    else:
        modes = _climb(means, x, bandwidth, tol, max_iter)
    order = sorted(range(len(founders)), key=lambda j: (-counts[j], j))
    rank = np.empty(len(founders), dtype=np.int64)
    rank[order] = np.arange(len(founders))
    return [modes[j] for j in order], rank[label]


def segment_instances(votes: VoteField, bandwidth: float = CENTER_BANDWIDTH,
                      min_cluster_size: int = MIN_CLUSTER_SIZE, tol: float = TOL,
                      max_iter: int = MAX_ITER) -> list:
    """Cluster each class's voted centers into instances. Label 0 is background."""
    detections = []
    for cls in np.unique(votes.semantic):
        if cls == BACKGROUND:
            continue
        idx = np.flatnonzero(votes.semantic == cls)
        voted = votes.points[idx] + votes.center_offset[idx]
        modes, assign = mean_shift(voted, bandwidth, tol, max_iter)
        for j, mode in enumerate(modes):
            members = idx[assign == j]
            if len(members) >= min_cluster_size:
                detections.append(Detection(int(cls), members, mode))
    return detections


def vote_keypoints(det: Detection, votes: VoteField, bandwidth: float = KEYPOINT_BANDWIDTH,
                   tol: float = TOL, max_iter: int = MAX_ITER) -> Detection:
    m = det.member_indices
    kps = np.empty((votes.n_keypoints, 3))
    support = np.empty(votes.n_keypoints, dtype=np.int64)
    for k in range(votes.n_keypoints):
        modes, assign = mean_shift(votes.points[m] + votes.keypoint_offsets[m, k], bandwidth, tol, max_iter)
        kps[k] = modes[0]  # modes come sorted by support, ties by lowest index
        support[k] = int((assign == 0).sum())
    return replace(det, voted_keypoints=kps, keypoint_support=support)


def detect_and_fit(votes: VoteField, models: dict, center_bandwidth: float = CENTER_BANDWIDTH,
                   keypoint_bandwidth: float = KEYPOINT_BANDWIDTH,
                   min_cluster_size: int = MIN_CLUSTER_SIZE, weight_by_support: bool = False) -> list:
    """Segment instances, vote their keypoints and fit each pose against its class model.

    With ``weight_by_support`` each keypoint enters the fit weighted by the
    number of votes in its winning mode; the default fit is unweighted.
    """
    present = set(int(c) for c in np.unique(votes.semantic)) - {BACKGROUND}
    missing = sorted(present - set(models))
    if missing:
        raise ConfigurationError(f"no keypoint model for class(es) {missing}")
    out = []
    for det in segment_instances(votes, center_bandwidth, min_cluster_size):
        det = vote_keypoints(det, votes, keypoint_bandwidth)
        model = models[det.class_id]
        if model.n_keypoints != votes.n_keypoints:
            raise ConfigurationError(
                f"class {det.class_id} model has {model.n_keypoints} keypoints, votes carry {votes.n_keypoints}")
        w = det.keypoint_support.astype(np.float64) if weight_by_support else None
        pose = fit_pose(Correspondences(model.keypoints, det.voted_keypoints, w))
        out.append(replace(det, pose=pose))
    return out


def ground_truth_votes(frame, annotation, models: dict, n_points: Optional[int], seed: int) -> VoteField:
    """Exact offsets from lifted object pixels to each instance's posed center and keypoints."""
    xyz = lift_depth(frame)
    flat = np.flatnonzero((xyz.valid & (annotation.instance > 0)).ravel())
    if n_points is not None and len(flat) > n_points:
        flat = np.sort(make_rng(seed).choice(flat, size=n_points, replace=False))
    pts = xyz.xyz.reshape(-1, 3)[flat]
    inst = annotation.instance.ravel()[flat]
    sem = annotation.semantic.ravel()[flat]
    k = next(iter(models.values())).n_keypoints if models else 0
    center = np.empty((len(flat), 3))
    kps = np.empty((len(flat), k, 3))
    for ann in annotation.instances:
        rows = inst == ann.instance_id
        if not rows.any():
            continue
        model = models[ann.class_id]
        center[rows] = ann.pose.apply(model.center) - pts[rows]
        kps[rows] = ann.pose.apply(model.keypoints)[None] - pts[rows][:, None]
    return VoteField(pts, sem, center, kps, inst)
