"""Procedural ground-truth scenes: textured primitives, RGBD rendering and exact annotations.

Procedural objects are rendered by casting one ray per pixel center against
their analytic surfaces, so lifting a rendered depth pixel reproduces a true
surface point to rounding error. Plain colored point clouds (e.g. models read
from PLY) are rendered by z-buffered point splatting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import (CameraIntrinsics, PointCloud, RgbdFrame, RigidTransform, lift_depth,
                       make_rng, pixel_grid, project_points, random_rotation)

SHAPES = ("box", "cylinder", "sphere", "l-bracket")
SYMMETRIC_SHAPES = ("cylinder", "sphere")
_EPS = 1e-12


@dataclass(frozen=True)
class Texture:
    """Base color + 3D checker + Gaussian blobs with known object-frame centers."""

    base_color: tuple = (0.45, 0.45, 0.45)
    checker_amplitude: float = 0.0
    checker_period: float = 0.02
    blob_centers: tuple = ()
    blob_sigma: float = 0.005
    blob_color: tuple = (1.0, 1.0, 1.0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rgb = np.tile(np.asarray(self.base_color, dtype=np.float64), (len(p), 1))
        if self.checker_amplitude:
            cells = np.floor(p / self.checker_period).astype(np.int64).sum(axis=1)
            rgb += np.where(cells % 2 == 0, 1.0, -1.0)[:, None] * self.checker_amplitude
        if len(self.blob_centers):
            centers = np.asarray(self.blob_centers, dtype=np.float64).reshape(-1, 3)
            d2 = ((p[:, None, :] - centers[None]) ** 2).sum(axis=-1)
            beta = np.minimum(1.0, np.exp(-d2 / (2 * self.blob_sigma ** 2)).sum(axis=1))
            rgb = rgb * (1 - beta[:, None]) + np.asarray(self.blob_color)[None] * beta[:, None]
        return np.clip(rgb, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "base_color": list(self.base_color),
            "checker_amplitude": self.checker_amplitude,
            "checker_period": self.checker_period,
            "blob_centers": [list(c) for c in self.blob_centers],
            "blob_sigma": self.blob_sigma,
            "blob_color": list(self.blob_color),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Texture":
        return cls(
            base_color=tuple(d.get("base_color", cls.base_color)),
            checker_amplitude=float(d.get("checker_amplitude", 0.0)),
            checker_period=float(d.get("checker_period", 0.02)),
            blob_centers=tuple(tuple(float(x) for x in c) for c in d.get("blob_centers", ())),
            blob_sigma=float(d.get("blob_sigma", 0.005)),
            blob_color=tuple(d.get("blob_color", (1.0, 1.0, 1.0))),
        )


def _box_hit(o, d, lo, hi):
    """Slab test. Returns entry distance (inf on miss) and outward normal at entry."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, np.inf), t2)
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    axis = np.argmax(tnear, axis=1)
    t_in = tnear[np.arange(len(o)), axis]
    t_out = tfar.min(axis=1)
    hit = (t_in <= t_out) & (t_in > _EPS)
    t = np.where(hit, t_in, np.inf)
    normal = np.zeros_like(o)
    rows = np.arange(len(o))
    normal[rows, axis] = -np.sign(d[rows, axis])
    return t, normal


@dataclass(frozen=True, eq=False)
class ProceduralObject:
    object_id: str
    shape: str
    dimensions: tuple
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        dims = tuple(float(x) for x in self.dimensions)
        need = {"box": 3, "cylinder": 2, "sphere": 1, "l-bracket": 4}[self.shape]
        if len(dims) != need or min(dims) <= 0:
            raise ValidationError(f"{self.shape} needs {need} positive dimensions, got {dims}")
        if self.shape == "l-bracket" and not (dims[2] < min(dims[0], dims[1])):
            raise ValidationError("l-bracket thickness must be below both arm lengths")
        object.__setattr__(self, "dimensions", dims)

    @property
    def symmetric(self) -> bool:
        return self.shape in SYMMETRIC_SHAPES

    # -- geometry -------------------------------------------------------
    def _boxes(self):
        if self.shape == "box":
            half = np.asarray(self.dimensions) / 2
            return [(-half, half)]
        a, b, t, w = self.dimensions
        area_a, area_b = a * t, t * (b - t)
        cx = (area_a * a / 2 + area_b * t / 2) / (area_a + area_b)
        cy = (area_a * t / 2 + area_b * (t + b) / 2) / (area_a + area_b)
        off = np.array([cx, cy, 0.0])
        return [
            (np.array([0, 0, -w / 2]) - off, np.array([a, t, w / 2]) - off),
            (np.array([0, t, -w / 2]) - off, np.array([t, b, w / 2]) - off),
        ]

    def _l_polygon(self):
        a, b, t, _ = self.dimensions
        lo = self._boxes()[0][0]
        poly = np.array([(0, 0), (a, 0), (a, t), (t, t), (t, b), (0, b)], dtype=np.float64)
        return poly + lo[:2]

    def intersect(self, origins, dirs):
        """First hit of rays o + s·d (s > 0) in the object frame: (s, outward normal)."""
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        if self.shape in ("box", "l-bracket"):
            best = np.full(len(o), np.inf)
            normal = np.zeros_like(o)
            for lo, hi in self._boxes():
                t, n = _box_hit(o, d, lo, hi)
                closer = t < best
                best = np.where(closer, t, best)
                normal[closer] = n[closer]
            return best, normal
        if self.shape == "sphere":
            (r,) = self.dimensions
            a = (d * d).sum(1)
            b = (o * d).sum(1)
            c = (o * o).sum(1) - r * r
            disc = b * b - a * c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t = (-b - sq) / a
            t = np.where(ok & (t > _EPS), t, np.inf)
            pts = o + t[:, None] * d
            with np.errstate(invalid="ignore"):
                normal = np.where(np.isfinite(t)[:, None], pts / r, 0.0)
            return t, normal
        r, h = self.dimensions
        # side wall
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
        disc = b * b - a * c
        ok = (disc >= 0) & (a > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = (-b - np.sqrt(np.where(ok, disc, 0.0))) / np.where(a > 0, a, 1.0)
        z_side = o[:, 2] + t_side * d[:, 2]
        t_side = np.where(ok & (t_side > _EPS) & (np.abs(z_side) <= h / 2), t_side, np.inf)
        best = t_side
        pts = o + np.where(np.isfinite(best), best, 0.0)[:, None] * d
        normal = np.zeros_like(o)
        side = np.isfinite(best)
        normal[side, :2] = pts[side, :2] / r
        for sign in (1.0, -1.0):
            with np.errstate(divide="ignore", invalid="ignore"):
                t_cap = (sign * h / 2 - o[:, 2]) / d[:, 2]
            p = o + np.where(np.isfinite(t_cap), t_cap, 0.0)[:, None] * d
            cap_ok = np.isfinite(t_cap) & (t_cap > _EPS) & (p[:, 0] ** 2 + p[:, 1] ** 2 <= r * r)
            closer = cap_ok & (t_cap < best)
            best = np.where(closer, t_cap, best)
            normal[closer] = (0.0, 0.0, sign)
        return best, normal

    def sample_surface(self, count: int, seed: int = 0) -> PointCloud:
        """Area-uniform samples lying exactly on the analytic surface, with normals and texture."""
        rng = make_rng(seed)
        pts, nrm = getattr(self, "_sample_" + self.shape.replace("-", "_"))(count, rng)
        return PointCloud(pts, self.texture(pts), nrm)

    def _sample_sphere(self, n, rng):
        (r,) = self.dimensions
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * r, v

    def _sample_cylinder(self, n, rng):
        r, h = self.dimensions
        areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
        part = rng.choice(3, size=n, p=areas / areas.sum())
        theta = rng.uniform(0, 2 * np.pi, n)
        rad = r * np.sqrt(rng.uniform(0, 1, n))
        z = rng.uniform(-h / 2, h / 2, n)
        side = part == 0
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        pts[side] = np.stack([r * np.cos(theta[side]), r * np.sin(theta[side]), z[side]], 1)
        nrm[side] = np.stack([np.cos(theta[side]), np.sin(theta[side]), np.zeros(side.sum())], 1)
        for k, sign in ((1, 1.0), (2, -1.0)):
            cap = part == k
            pts[cap] = np.stack([rad[cap] * np.cos(theta[cap]), rad[cap] * np.sin(theta[cap]),
                                 np.full(cap.sum(), sign * h / 2)], 1)
            nrm[cap] = (0.0, 0.0, sign)
        return pts, nrm

    def _sample_box(self, n, rng):
        lo, hi = self._boxes()[0]
        ext = hi - lo
        faces = []
        for axis in range(3):
            a1, a2 = [x for x in range(3) if x != axis]
            for side in (0, 1):
                faces.append((axis, side, a1, a2, ext[a1] * ext[a2]))
        areas = np.array([f[4] for f in faces])
        which = rng.choice(len(faces), size=n, p=areas / areas.sum())
        uv = rng.uniform(0, 1, (n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for i, (axis, side, a1, a2, _) in enumerate(faces):
            m = which == i
            pts[m, axis] = hi[axis] if side else lo[axis]
            pts[m, a1] = lo[a1] + uv[m, 0] * ext[a1]
            pts[m, a2] = lo[a2] + uv[m, 1] * ext[a2]
            nrm[m, axis] = 1.0 if side else -1.0
        return pts, nrm

    def _sample_l_bracket(self, n, rng):
        poly = self._l_polygon()
        w = self.dimensions[3]
        edges = [(poly[i], poly[(i + 1) % len(poly)]) for i in range(len(poly))]
        a, b, t, _ = self.dimensions
        cap_area = a * t + t * (b - t)
        areas = np.array([np.linalg.norm(q - p) * w for p, q in edges] + [cap_area, cap_area])
        which = rng.choice(len(areas), size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for i, (p, q) in enumerate(edges):
            m = which == i
            s = rng.uniform(0, 1, m.sum())
            pts[m, :2] = p + s[:, None] * (q - p)
            pts[m, 2] = rng.uniform(-w / 2, w / 2, m.sum())
            e = (q - p) / np.linalg.norm(q - p)
            nrm[m, :2] = (e[1], -e[0])  # polygon is counter-clockwise
        (lo_a, hi_a), (lo_b, hi_b) = self._boxes()
        area_a = a * t
        for k, sign in ((len(edges), 1.0), (len(edges) + 1, -1.0)):
            m = np.flatnonzero(which == k)
            in_a = rng.uniform(0, 1, len(m)) < area_a / cap_area
            ua = rng.uniform(0, 1, (len(m), 2))
            lo = np.where(in_a[:, None], lo_a[:2], lo_b[:2])
            hi = np.where(in_a[:, None], hi_a[:2], hi_b[:2])
            pts[m, :2] = lo + ua * (hi - lo)
            pts[m, 2] = sign * w / 2
            nrm[m] = (0.0, 0.0, sign)
        return pts, nrm

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "shape": self.shape,
                "dimensions": list(self.dimensions), "texture": self.texture.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ProceduralObject":
        return cls(str(d["object_id"]), str(d["shape"]), tuple(d["dimensions"]),
                   Texture.from_dict(d.get("texture", {})))


def blob_cube(side: float = 0.1, sigma: float = 0.005, object_id: str = "blob_cube",
              base: float = 0.3) -> ProceduralObject:
    """Cube whose top and bottom faces carry one bright blob near each of their corners."""
    q, h = side / 4, side / 2
    centers = tuple((sx * q, sy * q, sz * h) for sz in (1, -1) for sy in (1, -1) for sx in (1, -1))
    tex = Texture(base_color=(base, base, base), blob_centers=centers, blob_sigma=sigma)
    return ProceduralObject(object_id, "box", (side, side, side), tex)


# -- rendering ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneInstance:
    instance_id: int
    class_id: int
    object_id: str
    pose: RigidTransform
    visibility: float = 1.0
    symmetric: bool = False


@dataclass(frozen=True, eq=False)
class SceneAnnotation:
    semantic: np.ndarray  # H×W class ids, 0 = background
    instance: np.ndarray  # H×W instance ids, 0 = background
    instances: tuple

    def by_id(self, instance_id: int) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


def camera_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ray directions with unit z, so the hit parameter equals depth."""
    u, v = pixel_grid(intr.height, intr.width)
    return np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], -1).reshape(-1, 3)


def _cast(obj: ProceduralObject, pose: RigidTransform, dirs_cam: np.ndarray):
    origin = pose.r.T @ (-pose.t)
    d_obj = dirs_cam @ pose.r  # rows are r.T @ d
    return obj.intersect(np.broadcast_to(origin, d_obj.shape), d_obj)


def _splat(cloud: PointCloud, pose: RigidTransform, intr: CameraIntrinsics, radius: int):
    """Per-pixel (depth, color) from z-buffered point splats; inf depth where empty."""
    p = pose.apply(cloud.points)
    keep = p[:, 2] > 0
    if cloud.normals is not None:
        n = cloud.normals @ pose.r.T
        keep &= (n * p).sum(1) < 0  # back-face culling
    p = p[keep]
    colors = (cloud.colors if cloud.colors is not None else np.full((len(cloud), 3), 0.5))[keep]
    uv = np.stack([intr.fx * p[:, 0] / p[:, 2] + intr.cx, intr.fy * p[:, 1] / p[:, 2] + intr.cy], 1)
    iu = np.rint(uv[:, 0]).astype(np.int64)
    iv = np.rint(uv[:, 1]).astype(np.int64)
    size = intr.width * intr.height
    depth = np.full(size, np.inf)
    color = np.zeros((size, 3))
    offsets = [(du, dv) for dv in range(-radius, radius + 1) for du in range(-radius, radius + 1)]
    all_pix, all_z, all_src = [], [], []
    for du, dv in offsets:
        u2, v2 = iu + du, iv + dv
        ok = (u2 >= 0) & (u2 < intr.width) & (v2 >= 0) & (v2 < intr.height)
        all_pix.append(v2[ok] * intr.width + u2[ok])
        all_z.append(p[ok, 2])
        all_src.append(np.flatnonzero(ok))
    pix = np.concatenate(all_pix)
    z = np.concatenate(all_z)
    src = np.concatenate(all_src)
    np.minimum.at(depth, pix, z)
    win = z == depth[pix]
    pix, src = pix[win], src[win]
    # equal-depth ties go to the lowest sample index
    order = np.lexsort((src, pix))
    pix, src = pix[order], src[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    color[pix[first]] = colors[src[first]]
    return depth, color


def splat_render(items: Sequence, intr: CameraIntrinsics, background=(0.0, 0.0, 0.0),
                 splat_radius: int = 1, visibility_samples: int = 2000):
    """Render ``items`` = [(object, pose, class_id), ...] into an RgbdFrame + SceneAnnotation.

    ``object`` is a ProceduralObject (ray cast) or a colored PointCloud (splatted).
    Instance ids are assigned 1..len(items) in order. Visibility is the share of
    the instance's self-visible surface samples that no other item occludes.
    """
    if not items:
        raise ValidationError("cannot render an empty scene")
    size = intr.width * intr.height
    dirs = camera_rays(intr)
    depth = np.full(size, np.inf)
    rgb = np.tile(np.asarray(background, dtype=np.float64), (size, 1))
    inst_map = np.zeros(size, dtype=np.int64)
    sem_map = np.zeros(size, dtype=np.int64)
    for k, (obj, pose, class_id) in enumerate(items, start=1):
        if isinstance(obj, ProceduralObject):
            t, _ = _cast(obj, pose, dirs)
            closer = t < depth
            if closer.any():
                hit_cam = dirs[closer] * t[closer, None]
                rgb[closer] = obj.texture(pose.inverse().apply(hit_cam))
        else:
            t, color = _splat(obj, pose, intr, splat_radius)
            closer = t < depth
            rgb[closer] = color[closer]
        depth[closer] = t[closer]
        inst_map[closer] = k
        sem_map[closer] = class_id
    depth[~np.isfinite(depth)] = 0.0
    h, w = intr.height, intr.width
    frame = RgbdFrame(rgb.reshape(h, w, 3), depth.reshape(h, w), intr)

    instances = []
    for k, (obj, pose, class_id) in enumerate(items, start=1):
        vis = _visibility(k, items, intr, inst_map, depth, visibility_samples)
        oid = obj.object_id if isinstance(obj, ProceduralObject) else f"cloud_{k}"
        sym = obj.symmetric if isinstance(obj, ProceduralObject) else False
        instances.append(SceneInstance(k, int(class_id), oid, pose, vis, sym))
    ann = SceneAnnotation(sem_map.reshape(h, w), inst_map.reshape(h, w), tuple(instances))
    return frame, ann


def _visibility(k, items, intr, inst_map, depth, n_samples):
    obj, pose, _ = items[k - 1]
    if isinstance(obj, ProceduralObject):
        pts = pose.apply(obj.sample_surface(n_samples, seed=0).points)
        uv, inside = project_points(pts, intr)
        pts = pts[inside]
        if not len(pts):
            return 0.0
        dirs = pts / pts[:, 2:3]
        z = pts[:, 2]
        own, _ = _cast(obj, pose, dirs)
        self_vis = np.abs(own - z) <= 1e-9 * np.maximum(1.0, z)
        occluded = np.zeros(len(pts), dtype=bool)
        for j, (other, opose, _) in enumerate(items, start=1):
            if j == k:
                continue
            if isinstance(other, ProceduralObject):
                t, _ = _cast(other, opose, dirs)
                occluded |= t < z * (1 - 1e-9)
            else:
                pix = _pixel_index(uv[inside], intr)
                occluded |= (inst_map.ravel()[pix] == j) & (depth.ravel()[pix] < z)
        total = self_vis.sum()
        return float((self_vis & ~occluded).sum() / total) if total else 0.0
    # splatted clouds: front-facing in-frame points vs those that own their pixel
    pts = pose.apply(obj.points)
    uv, inside = project_points(pts, intr)
    front = inside.copy()
    if obj.normals is not None:
        front &= ((obj.normals @ pose.r.T) * pts).sum(1) < 0
    if not front.any():
        return 0.0
    pix = _pixel_index(uv[front], intr)
    owner = inst_map.ravel()[pix]
    return float(np.mean((owner == k) | (owner == 0)))


def _pixel_index(uv, intr):
    iu = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, intr.width - 1)
    iv = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, intr.height - 1)
    return iv * intr.width + iu


# -- scenes ------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    obj: ProceduralObject
    class_id: int


@dataclass(frozen=True)
class SceneSpec:
    catalog: tuple
    intrinsics: CameraIntrinsics = CameraIntrinsics(320.0, 320.0, 160.0, 120.0, 320, 240)
    instances: tuple = (2, 3)
    depth_range: tuple = (0.5, 0.7)
    n_points: int = 2048
    n_keypoints: int = 8
    num_scenes: int = 1
    min_pixels: int = 300
    background: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            catalog = tuple(
                CatalogEntry(ProceduralObject.from_dict(o), int(o["class_id"])) for o in d["objects"]
            )
            intr = d.get("intrinsics")
            kwargs = {}
            if intr is not None:
                kwargs["intrinsics"] = CameraIntrinsics(
                    float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
                    int(intr["width"]), int(intr["height"]))
            for key in ("instances", "depth_range", "background"):
                if key in d:
                    kwargs[key] = tuple(d[key])
            for key in ("n_points", "n_keypoints", "num_scenes", "min_pixels"):
                if key in d:
                    kwargs[key] = int(d[key])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad scene spec: {exc!r}") from exc
        if not catalog:
            raise ValidationError("scene spec lists no objects")
        ids = [e.class_id for e in catalog]
        if len(set(ids)) != len(ids) or min(ids) < 1:
            raise ValidationError("class ids must be unique positive integers")
        return cls(catalog, **kwargs)

    def to_dict(self) -> dict:
        intr = self.intrinsics
        return {
            "format_version": 1,
            "objects": [dict(e.obj.to_dict(), class_id=e.class_id) for e in self.catalog],
            "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                           "width": intr.width, "height": intr.height},
            "instances": list(self.instances),
            "depth_range": list(self.depth_range),
            "n_points": self.n_points,
            "n_keypoints": self.n_keypoints,
            "num_scenes": self.num_scenes,
            "min_pixels": self.min_pixels,
            "background": list(self.background),
        }


@dataclass(frozen=True, eq=False)
class SceneBundle:
    frame: RgbdFrame
    annotation: SceneAnnotation
    votes: "object"  # voting.VoteField
    models: dict  # class_id -> KeypointModel
    objects: dict  # class_id -> ProceduralObject


def default_spec() -> SceneSpec:
    catalog = (
        CatalogEntry(ProceduralObject("box", "box", (0.08, 0.06, 0.04),
                                      Texture((0.8, 0.3, 0.2), 0.15, 0.02)), 1),
        CatalogEntry(ProceduralObject("bracket", "l-bracket", (0.09, 0.07, 0.02, 0.04),
                                      Texture((0.2, 0.6, 0.3), 0.1, 0.015)), 2),
        CatalogEntry(ProceduralObject("can", "cylinder", (0.03, 0.09),
                                      Texture((0.2, 0.3, 0.8), 0.1, 0.02)), 3),
    )
    return SceneSpec(catalog)


_MODEL_SAMPLES = 2000


def keypoint_models_for(spec: SceneSpec) -> dict:
    from .keypoints import fps_keypoint_model

    return {e.class_id: fps_keypoint_model(e.obj.object_id, e.obj.sample_surface(_MODEL_SAMPLES, 0).points,
                                           spec.n_keypoints)
            for e in spec.catalog}


def place_instances(spec: SceneSpec, rng: np.random.Generator, max_tries: int = 50):
    """Draw instance classes and poses spread across the image in horizontal slots."""
    count = int(rng.integers(spec.instances[0], spec.instances[1] + 1))
    intr = spec.intrinsics
    items = []
    for slot in range(count):
        entry = spec.catalog[int(rng.integers(len(spec.catalog)))]
        for _ in range(max_tries):
            z = rng.uniform(*spec.depth_range)
            u = (slot + 0.5 + rng.uniform(-0.15, 0.15)) * intr.width / count
            v = intr.height * (0.5 + rng.uniform(-0.15, 0.15))
            t = np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
            pose = RigidTransform(random_rotation(rng), t)
            if _visible_pixels(entry.obj, pose, intr) >= spec.min_pixels:
                items.append((entry.obj, pose, entry.class_id))
                break
        else:
            raise ValidationError(
                f"could not place {entry.obj.object_id} inside the view frustum in {max_tries} tries"
            )
    return items


def _visible_pixels(obj, pose, intr):
    t, _ = _cast(obj, pose, camera_rays(intr))
    return int(np.isfinite(t).sum())


def make_scene(spec: SceneSpec, seed: int, items=None) -> SceneBundle:
    """Render one annotated scene. ``items`` overrides random placement."""
    from .voting import ground_truth_votes

    rng = make_rng(seed)
    if items is None:
        items = place_instances(spec, rng)
    for obj, pose, _ in items:
        if _visible_pixels(obj, pose, spec.intrinsics) == 0:
            raise ValidationError(f"{obj.object_id} lies entirely outside the view frustum")
    frame, ann = splat_render(items, spec.intrinsics, background=spec.background)
    for inst in ann.instances:
        if not (ann.instance == inst.instance_id).any():
            raise ValidationError(f"instance {inst.instance_id} is fully occluded")
    models = keypoint_models_for(spec)
    objects = {e.class_id: e.obj for e in spec.catalog}
    votes = ground_truth_votes(frame, ann, models, spec.n_points, seed)
    return SceneBundle(frame, ann, votes, models, objects)


def make_scenes(spec: SceneSpec, seed: int):
    return [make_scene(spec, seed * 100003 + i) for i in range(spec.num_scenes)]


def corrupt_votes(votes, gaussian_sigma: float, outlier_frac: float, seed: int):
    """Seeded Gaussian offset noise; ``outlier_frac`` of rows get uniform ±1 m offsets."""
    from .voting import VoteField

    if not 0 <= outlier_frac <= 1:
        raise ValidationError("outlier fraction must lie in [0, 1]")
    rng = make_rng(seed)
    n, k = votes.keypoint_offsets.shape[:2]
    center = votes.center_offset + rng.normal(0.0, gaussian_sigma, (n, 3)) if gaussian_sigma else votes.center_offset.copy()
    kps = votes.keypoint_offsets + rng.normal(0.0, gaussian_sigma, (n, k, 3)) if gaussian_sigma else votes.keypoint_offsets.copy()
    n_out = int(round(outlier_frac * n))
    if n_out:
        rows = rng.choice(n, size=n_out, replace=False)
        center[rows] = rng.uniform(-1.0, 1.0, (n_out, 3))
        kps[rows] = rng.uniform(-1.0, 1.0, (n_out, k, 3))
    return VoteField(votes.points, votes.semantic, center, kps, votes.instance)


def lifted_surface_error(bundle: SceneBundle) -> float:
    """Max distance from lifted valid pixels to their instance's analytic surface."""
    xyz = lift_depth(bundle.frame)
    worst = 0.0
    for inst in bundle.annotation.instances:
        mask = bundle.annotation.instance == inst.instance_id
        pts = xyz.xyz[mask & xyz.valid]
        obj = bundle.objects[inst.class_id]
        local = inst.pose.inverse().apply(pts)
        worst = max(worst, float(np.max(surface_distance(obj, local), initial=0.0)))
    return worst


def surface_distance(obj: ProceduralObject, pts: np.ndarray) -> np.ndarray:
    """Unsigned distance from object-frame points to the analytic surface."""
    p = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if obj.shape == "sphere":
        return np.abs(np.linalg.norm(p, axis=1) - obj.dimensions[0])
    if obj.shape == "cylinder":
        r, h = obj.dimensions
        dr = np.hypot(p[:, 0], p[:, 1]) - r
        dz = np.abs(p[:, 2]) - h / 2
        outside = np.hypot(np.maximum(dr, 0), np.maximum(dz, 0))
        return np.where((dr <= 0) & (dz <= 0), -np.maximum(dr, dz), outside)
    dists = []
    for lo, hi in obj._boxes():
        c, half = (lo + hi) / 2, (hi - lo) / 2
        q = np.abs(p - c) - half
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        inside = np.minimum(q.max(axis=1), 0)
        dists.append(outside + inside)  # signed box distance
    sdf = np.min(dists, axis=0)
    return np.abs(sdf)
