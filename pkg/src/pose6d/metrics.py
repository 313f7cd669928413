"""Pose accuracy metrics: ADD, ADD-S, ADD(S), threshold accuracy, ADD-0.1d and AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvariantError, ValidationError
from .geometry import PointCloud, RigidTransform

AUC_MAX_THRESHOLD = 0.1
BRUTE_FORCE_LIMIT = 4096
# distances below this are rounding noise of an exact fit and count as zero
DISTANCE_RESOLUTION = 1e-12


@dataclass(frozen=True)
class EvalRecord:
    object_id: str
    symmetric: bool
    distance: float
    diameter: float

    def __post_init__(self):
        if not self.distance >= 0:
            raise InvariantError("distance must be non-negative")
        if not self.diameter > 0:
            raise InvariantError("diameter must be positive")


def _model_points(model) -> np.ndarray:
    pts = model.points if isinstance(model, PointCloud) else np.asarray(model, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("model has no points")
    return pts


def add(model, pred: RigidTransform, gt: RigidTransform) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _model_points(model)
    return float(np.linalg.norm(pred.apply(pts) - gt.apply(pts), axis=1).mean())


def add_s(model, pred: RigidTransform, gt: RigidTransform) -> float:
    """Mean distance from each predicted-pose point to the closest ground-truth-pose point."""
    pts = _model_points(model)
    a = pred.apply(pts)
    b = gt.apply(pts)
    if len(pts) > BRUTE_FORCE_LIMIT:
        d, _ = cKDTree(b).query(a, k=1)
        return float(d.mean())
    best = np.empty(len(a))
    for s in range(0, len(a), 512):
        d2 = ((a[s:s + 512, None, :] - b[None, :, :]) ** 2).sum(-1)
        best[s:s + 512] = np.sqrt(d2.min(axis=1))
    return float(best.mean())


def add_or_adds(model, pred: RigidTransform, gt: RigidTransform, symmetric: bool) -> float:
    return add_s(model, pred, gt) if symmetric else add(model, pred, gt)


def _distances(distances) -> np.ndarray:
    d = np.asarray(list(distances), dtype=np.float64).reshape(-1)
    if len(d) == 0:
        raise ValidationError("no distances given")
    return d


def accuracy_at_threshold(distances, threshold: float) -> float:
    if not threshold >= 0:
        raise ValidationError("threshold must be non-negative")
    d = _distances(distances)
    return float(np.count_nonzero(d <= threshold) / len(d))


def add_auc(distances, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Area under accuracy(t) for t in [0, max_threshold], divided by max_threshold.

    accuracy(t) steps up by 1/n at each distance, so the area is exactly
    ``mean(max(0, 1 - d / max_threshold))``. Distances below 1e-12 m are taken as 0.
    """
    if not max_threshold > 0:
        raise ValidationError("max_threshold must be positive")
    d = _distances(distances)
    d = np.where(d < DISTANCE_RESOLUTION, 0.0, d)
    return float(np.clip(1.0 - d / max_threshold, 0.0, 1.0).mean())


def accuracy_curve(distances, max_threshold: float = AUC_MAX_THRESHOLD):
    """Vertices (thresholds, accuracies) of the step curve on [0, max_threshold]."""
    d = np.sort(_distances(distances))
    n = len(d)
    inside = d[d <= max_threshold]
    xs, ys = [0.0], [float(np.count_nonzero(d <= 0) / n)]
    for i, x in enumerate(inside):
        if x > 0:
            xs += [float(x), float(x)]
            ys += [ys[-1], float(np.count_nonzero(d <= x) / n)]
    xs.append(max_threshold)
    ys.append(ys[-1])
    return np.array(xs), np.array(ys)


def add_01d(records, fraction: float = 0.1, strict: bool = True) -> float:
    """Share of records whose ADD(S) distance is below ``fraction`` of the object diameter."""
    recs = list(records)
    if not recs:
        raise ValidationError("no records given")
    if strict:
        hits = sum(r.distance < fraction * r.diameter for r in recs)
    else:
        hits = sum(r.distance <= fraction * r.diameter for r in recs)
    return hits / len(recs)
