"""Training losses: focal loss on semantics, L1 on offsets and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .autodiff import (Tensor, abs_, as_tensor, clamp_min, exp, gather_rows, log_softmax, mean,
                       mul, pick, power, reshape, sub)

LOG_FLOOR = np.log(1e-12)
DEFAULT_WEIGHTS = (2.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class Targets:
    """Per-point supervision. Offsets only count where ``valid`` (foreground) is set."""

    labels: np.ndarray
    center_offsets: np.ndarray
    keypoint_offsets: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "center_offsets", np.asarray(self.center_offsets, dtype=np.float64).reshape(n, 3))
        object.__setattr__(self, "keypoint_offsets",
                           np.asarray(self.keypoint_offsets, dtype=np.float64).reshape(n, -1))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool).reshape(n))


def focal_loss(logits, labels, alpha: float = 1.0, gamma: float = 2.0) -> Tensor:
    """Mean of ``-alpha * (1 - p_t)**gamma * log(p_t)``; log p_t is floored at log(1e-12)."""
    z = as_tensor(logits)
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.data.ndim != 2 or len(lab) != z.shape[0]:
        raise ValidationError("logits must be N×n_cls with one label per row")
    if lab.size and (lab.min() < 0 or lab.max() >= z.shape[1]):
        raise ValidationError(f"labels must lie in [0, {z.shape[1]})")
    log_pt = pick(log_softmax(z), lab)
    weight = power(sub(1.0, exp(log_pt)), gamma)
    return mul(mean(mul(weight, clamp_min(log_pt, LOG_FLOOR))), -alpha)


def l1_offset_loss(pred, target, valid_mask) -> Tensor:
    """Mean absolute error over the entries of valid rows."""
    p = as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"prediction {p.shape} and target {t.shape} differ")
    rows = np.flatnonzero(np.asarray(valid_mask, dtype=bool).reshape(-1))
    if len(rows) == 0:
        raise ValidationError("no valid entries for the L1 loss")
    diff = sub(p, t)
    if len(rows) != p.shape[0]:
        diff = gather_rows(diff, rows)
    return mean(abs_(diff))


def multi_task_loss(out, gt: Targets, weights=DEFAULT_WEIGHTS, alpha: float = 1.0, gamma: float = 2.0):
    """``w_sem * focal + w_ctr * L1(center) + w_kp * L1(keypoints)``.

    Returns the total as a Tensor and a dict of the unweighted terms and total.
    """
    w_sem, w_ctr, w_kp = (float(w) for w in weights)
    if min(w_sem, w_ctr, w_kp) < 0:
        raise ValidationError("loss weights must be non-negative")
    sem = focal_loss(out.semantic_logits, gt.labels, alpha, gamma)
    ctr = l1_offset_loss(out.center_offsets, gt.center_offsets, gt.valid)
    kp_pred = out.keypoint_offsets
    if kp_pred.shape != gt.keypoint_offsets.shape:
        kp_pred = reshape(kp_pred, gt.keypoint_offsets.shape)
    kp = l1_offset_loss(kp_pred, gt.keypoint_offsets, gt.valid)
    total = mul(sem, w_sem) + mul(ctr, w_ctr) + mul(kp, w_kp)
    return total, {"semantic": sem.item(), "center": ctr.item(), "keypoints": kp.item(),
                   "total": total.item()}
