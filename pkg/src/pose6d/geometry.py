"""Core 3D types, pinhole projection, rigid transforms and exact neighbor queries.

Conventions: pixel ``(u, v)`` is column ``u`` and row ``v`` with integer
coordinates at pixel centers. Camera frame is x right, y down, z forward.

All stochastic helpers use ``numpy.random.Generator(PCG64(seed))``; PCG64's
stream is fixed across platforms for a given numpy major version.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BehindCameraError, InvariantError, ValidationError

ORTHO_TOL = 1e-9
NORMAL_TOL = 1e-6
# projections this far below 0 still count as in frame (rounding of lifted edge pixels)
EDGE_TOL = 1e-9


def make_rng(seed) -> np.random.Generator:
    """The single documented PRNG used across the package."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvariantError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera resampled by ``factor`` (e.g. 0.5 halves the image)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                min(self.cx * factor, w - 1), min(self.cy * factor, h - 1), w, h)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation ``r`` and translation ``t`` mapping p -> r @ p + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvariantError("pose contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise InvariantError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise InvariantError(f"rotation determinant is {np.linalg.det(r):.6g}, expected +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.r @ other.r, self.r @ other.t + self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.r.T, -(self.r.T @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.r.T + self.t

    def rotation_error(self, other: "RigidTransform") -> float:
        """Geodesic angle in radians between the two rotations."""
        return rotation_angle(self.r.T @ other.r)

    def translation_error(self, other: "RigidTransform") -> float:
        return float(np.linalg.norm(self.t - other.t))


def rotation_angle(r: np.ndarray) -> float:
    # arccos loses precision near 0; the axis-angle form via arctan2 does not
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = 0.5 * (np.trace(r) - 1.0)
    return float(np.arctan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvariantError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            colors = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
            if colors.shape != pts.shape:
                raise InvariantError("colors must match points")
            object.__setattr__(self, "colors", colors)
        if self.normals is not None:
            normals = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if normals.shape != pts.shape:
                raise InvariantError("normals must match points")
            if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > NORMAL_TOL:
                raise InvariantError("normals must have unit length")
            object.__setattr__(self, "normals", normals)

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx],
            None if self.colors is None else self.colors[idx],
            None if self.normals is None else self.normals[idx],
        )


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[:2] != depth.shape:
            raise InvariantError(f"rgb {rgb.shape} and depth {depth.shape} must share HxW")
        if depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise InvariantError("frame size disagrees with intrinsics")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise InvariantError("depth must be finite and non-negative")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True, eq=False)
class XyzMap:
    xyz: np.ndarray
    valid: np.ndarray = field(repr=False)

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if xyz.shape[:2] != valid.shape or xyz.shape[2:] != (3,):
            raise InvariantError("xyz must be HxWx3 and match the mask")
        if not np.all(np.isfinite(xyz[valid])):
            raise InvariantError("valid xyz entries must be finite")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "valid", valid)

    def valid_points(self):
        """(points K×3, flat pixel indices K) of the valid pixels in row-major order."""
        flat = np.flatnonzero(self.valid.ravel())
        return self.xyz.reshape(-1, 3)[flat], flat


def pixel_grid(height: int, width: int):
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u, v


def lift_depth(frame: RgbdFrame) -> XyzMap:
    intr = frame.intrinsics
    d = frame.depth
    u, v = pixel_grid(*d.shape)
    xyz = np.stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=-1)
    valid = d > 0
    xyz[~valid] = 0.0
    return XyzMap(xyz, valid)


def project(point, intr: CameraIntrinsics):
    """Pixel coordinates of a camera-frame point, or ``None`` when outside the image."""
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    if not z > 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (-EDGE_TOL <= u < intr.width and -EDGE_TOL <= v < intr.height):
        return None
    return u, v


def project_points(points: np.ndarray, intr: CameraIntrinsics):
    """Vectorized projection. Returns (uv N×2, in_frame N bool); z <= 0 is never in frame."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    uv = np.stack([intr.fx * p[:, 0] / zs + intr.cx, intr.fy * p[:, 1] / zs + intr.cy], axis=1)
    inside = (front & (uv[:, 0] >= -EDGE_TOL) & (uv[:, 0] < intr.width)
              & (uv[:, 1] >= -EDGE_TOL) & (uv[:, 1] < intr.height))
    return uv, inside


def apply_transform(pose: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(
        pose.apply(cloud.points),
        cloud.colors,
        None if cloud.normals is None else cloud.normals @ pose.r.T,
    )


def _sq_dists(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    # explicit per-axis differences keep distances bit-identical to a naive loop
    diff = query[:, None, :] - reference[None, :, :]
    out = diff[..., 0] * diff[..., 0]
    for axis in range(1, diff.shape[-1]):
        out = out + diff[..., axis] * diff[..., axis]
    return out


def knn(query, reference, k: int, chunk: int = 1024) -> np.ndarray:
    """Exact k nearest neighbors; rows sorted by ascending distance, ties to lowest index."""
    q = np.asarray(query, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if q.ndim == 1:
        q = q[None]
    if ref.ndim != 2 or len(ref) == 0:
        raise ValidationError("reference set is empty")
    if k < 1 or k > len(ref):
        raise ValidationError(f"k={k} must be in [1, {len(ref)}]")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(ref))):
        raise ValidationError("coordinates must be finite")
    out = np.empty((len(q), k), dtype=np.int64)
    # bound the M×N distance block to roughly 16M entries
    step = max(1, min(chunk, (1 << 24) // max(1, len(ref))))
    for s in range(0, len(q), step):
        d2 = _sq_dists(q[s:s + step], ref)
        if k < len(ref) // 8:
            # partition, then widen to every index tied with the k-th distance
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
            mask = d2 <= kth
            counts = mask.sum(axis=1)
            plain = counts == k
            if plain.any():
                rows = np.flatnonzero(plain)
                cols = np.nonzero(mask[rows])[1].reshape(len(rows), k)
                order = np.argsort(np.take_along_axis(d2[rows], cols, axis=1), axis=1, kind="stable")
                out[s + rows] = np.take_along_axis(cols, order, axis=1)
            for row in np.flatnonzero(~plain):
                cand = np.flatnonzero(mask[row])
                order = np.argsort(d2[row, cand], kind="stable")
                out[s + row] = cand[order[:k]]
        else:
            out[s:s + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def random_subsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    if n > len(cloud) or n < 0:
        raise ValidationError(f"cannot draw {n} points from {len(cloud)}")
    return cloud.subset(random_subsample_indices(len(cloud), n, seed))


def random_subsample_indices(total: int, n: int, seed: int) -> np.ndarray:
    if n > total or n < 0:
        raise ValidationError(f"cannot draw {n} indices from {total}")
    return make_rng(seed).choice(total, size=n, replace=False)
