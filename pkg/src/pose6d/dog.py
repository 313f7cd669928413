"""Difference-of-Gaussians scale-space keypoint detection (detection stage of SIFT only).

The image is not upsampled before the first octave; octave ``o`` samples every
``2**o``-th pixel of the original grid, so a location ``x`` in octave ``o``
maps back to ``x * 2**o``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

MAX_REFINE_STEPS = 5
_FOOTPRINT = np.ones((3, 3, 3), dtype=bool)
_FOOTPRINT[1, 1, 1] = False


@dataclass(frozen=True)
class Keypoint2D:
    u: float
    v: float
    scale: float
    response: float
    octave: int = 0


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def _blur(img, sigma):
    return ndimage.gaussian_filter(img, sigma, mode="nearest", truncate=4.0)


def build_dog_pyramid(image, octaves, scales_per_octave, sigma=1.6, assumed_blur=0.5):
    """List of (octave, DoG stack of shape (s+2, h, w))."""
    k = 2.0 ** (1.0 / scales_per_octave)
    base = _blur(image, np.sqrt(max(sigma ** 2 - assumed_blur ** 2, 0.01)))
    pyramid = []
    for o in range(octaves):
        if min(base.shape) < 8:
            break
        gauss = [base]
        for i in range(1, scales_per_octave + 3):
            prev_sigma = sigma * k ** (i - 1)
            gauss.append(_blur(gauss[-1], prev_sigma * np.sqrt(k * k - 1)))
        pyramid.append((o, np.stack([gauss[i + 1] - gauss[i] for i in range(len(gauss) - 1)])))
        base = gauss[scales_per_octave][::2, ::2]
    return pyramid


def _derivatives(dog, s, y, x):
    c = dog[s, y, x]
    dx = 0.5 * (dog[s, y, x + 1] - dog[s, y, x - 1])
    dy = 0.5 * (dog[s, y + 1, x] - dog[s, y - 1, x])
    ds = 0.5 * (dog[s + 1, y, x] - dog[s - 1, y, x])
    dxx = dog[s, y, x + 1] + dog[s, y, x - 1] - 2 * c
    dyy = dog[s, y + 1, x] + dog[s, y - 1, x] - 2 * c
    dss = dog[s + 1, y, x] + dog[s - 1, y, x] - 2 * c
    dxy = 0.25 * (dog[s, y + 1, x + 1] - dog[s, y + 1, x - 1] - dog[s, y - 1, x + 1] + dog[s, y - 1, x - 1])
    dxs = 0.25 * (dog[s + 1, y, x + 1] - dog[s + 1, y, x - 1] - dog[s - 1, y, x + 1] + dog[s - 1, y, x - 1])
    dys = 0.25 * (dog[s + 1, y + 1, x] - dog[s + 1, y - 1, x] - dog[s - 1, y + 1, x] + dog[s - 1, y - 1, x])
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def detect_dog_keypoints(image, octaves: int = 3, scales_per_octave: int = 3,
                         contrast_thresh: float = 0.03, edge_ratio: float = 10.0,
                         sigma: float = 1.6) -> list:
    """Scale-space extrema of the DoG pyramid of a [0, 1] grayscale image.

    Candidates are (non-strict) extrema over their 26 scale-space neighbors. Each is
    refined by a quadratic fit, then kept only if the interpolated response
    magnitude exceeds ``contrast_thresh`` and the principal-curvature ratio of
    the spatial Hessian is below ``edge_ratio``.
    """
    img = to_gray(image)
    if img.ndim != 2 or min(img.shape) < 16:
        raise ValidationError(f"image must be at least 16×16, got {img.shape}")
    edge_limit = (edge_ratio + 1.0) ** 2 / edge_ratio
    found = []
    for octave, dog in build_dog_pyramid(img, octaves, scales_per_octave, sigma):
        n_s, h, w = dog.shape
        nmax = ndimage.maximum_filter(dog, footprint=_FOOTPRINT, mode="nearest")
        nmin = ndimage.minimum_filter(dog, footprint=_FOOTPRINT, mode="nearest")
        cand = ((dog >= nmax) | (dog <= nmin)) & (np.abs(dog) > 0.5 * contrast_thresh)
        cand[0] = cand[-1] = False
        cand[:, :1] = cand[:, -1:] = False
        cand[:, :, :1] = cand[:, :, -1:] = False
        for s, y, x in zip(*np.nonzero(cand)):
            kp = _refine(dog, int(s), int(y), int(x), contrast_thresh, edge_limit)
            if kp is None:
                continue
            (s2, y2, x2), offset, response = kp
            step = 2.0 ** octave
            u = (x2 + offset[0]) * step
            v = (y2 + offset[1]) * step
            if not (0 <= u <= img.shape[1] - 1 and 0 <= v <= img.shape[0] - 1):
                continue
            scale = sigma * 2.0 ** (octave + (s2 + offset[2]) / scales_per_octave)
            found.append(Keypoint2D(float(u), float(v), float(scale), float(response), octave))
    found.sort(key=lambda k: (-k.response, k.v, k.u))
    return _dedupe(found)


def _dedupe(keypoints, radius=1.0):
    # plateau ties refine to the same sub-pixel extremum from several pixels
    kept = []
    for kp in keypoints:
        if not any(k.octave == kp.octave and (k.u - kp.u) ** 2 + (k.v - kp.v) ** 2 < radius ** 2
                   for k in kept):
            kept.append(kp)
    return kept


def _refine(dog, s, y, x, contrast_thresh, edge_limit):
    n_s, h, w = dog.shape
    for _ in range(MAX_REFINE_STEPS):
        grad, hess = _derivatives(dog, s, y, x)
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) <= 0.5 + 1e-9):
            break
        x += int(np.rint(offset[0]))
        y += int(np.rint(offset[1]))
        s += int(np.rint(offset[2]))
        if not (1 <= s < n_s - 1 and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    else:
        return None
    response = abs(dog[s, y, x] + 0.5 * grad @ offset)
    if not response > contrast_thresh:
        return None
    trace = hess[0, 0] + hess[1, 1]
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] ** 2
    if det <= 0 or trace * trace / det >= edge_limit:
        return None
    return (s, y, x), offset, response
