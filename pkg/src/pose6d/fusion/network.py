"""Toy bidirectional RGB/point-cloud fusion network.

Two branches run side by side:

* a CNN over the RGB image (two stride-2 encoder convolutions, two decoder
  convolutions with nearest upsampling and skip connections), and
* a point network over the sampled cloud (random subsampling with a
  single-layer local aggregation per encoder stage, nearest-neighbor
  upsampling with skips in the decoder).

The four stages are paired (enc1, enc2, dec1, dec2). At each enabled stage
both fusion blocks read the *pre-fusion* activations of the other branch, so
the two directions are computed simultaneously and either can be switched off
independently. Point features are finally concatenated with the CNN feature
at each point's pixel and fed to three prediction heads.

All geometry (neighbor lists, subsampling, downsampled XYZ maps) depends only
on the inputs, so it is computed once into a :class:`FusionPlan` and reused
across training steps.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, ValidationError
from ..geometry import PointCloud, RgbdFrame, XyzMap, knn, lift_depth, make_rng, random_subsample_indices
from .autodiff import (Tensor, concat, gather_max, gather_rows, linear, reduce_max,
                       relu, reshape)

DOWNSAMPLE_MODES = ("nearest", "mean-kernel")
STAGES = ("enc1", "enc2", "dec1", "dec2")
STAGE_STRIDES = {"enc1": 2, "enc2": 4, "dec1": 2, "dec2": 1}
GLOBAL_WIDTH = 16


@dataclass(frozen=True)
class FusionConfig:
    enable_encode_fusion: bool = True
    enable_decode_fusion: bool = True
    enable_final_dense_fusion: bool = False
    enable_p2r: bool = True
    enable_r2p: bool = True
    k_r2p: int = 16
    k_p2r: int = 1
    downsample_mode: str = "nearest"
    cnn_widths: tuple = (8, 16)
    pcn_widths: tuple = (8, 16)
    head_widths: tuple = (128, 128, 128)
    lfa_k: int = 8
    n_classes: int = 4
    n_keypoints: int = 8

    def __post_init__(self):
        for name in ("cnn_widths", "pcn_widths", "head_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.k_r2p < 1 or self.k_p2r < 1:
            raise ConfigurationError("k_r2p and k_p2r must be >= 1")
        if self.lfa_k < 1:
            raise ConfigurationError("lfa_k must be >= 1")
        if self.downsample_mode not in DOWNSAMPLE_MODES:
            raise ConfigurationError(f"downsample_mode must be one of {DOWNSAMPLE_MODES}")
        if len(self.cnn_widths) != 2 or len(self.pcn_widths) != 2:
            raise ConfigurationError("cnn_widths and pcn_widths need two entries")
        if min(self.cnn_widths + self.pcn_widths + self.head_widths, default=1) < 1:
            raise ConfigurationError("layer widths must be positive")
        if self.n_classes < 2 or self.n_keypoints < 1:
            raise ConfigurationError("need n_classes >= 2 and n_keypoints >= 1")
        for flag in ("enable_encode_fusion", "enable_decode_fusion", "enable_final_dense_fusion",
                     "enable_p2r", "enable_r2p"):
            if not isinstance(getattr(self, flag), bool):
                raise ConfigurationError(f"{flag} must be a boolean")

    def fused_stages(self) -> tuple:
        return (("enc1", "enc2") if self.enable_encode_fusion else ()) + \
               (("dec1", "dec2") if self.enable_decode_fusion else ())

    def stage_widths(self, stage) -> tuple:
        """(C_r, C_p) at ``stage``."""
        c, p = self.cnn_widths, self.pcn_widths
        return {"enc1": (c[0], p[0]), "enc2": (c[1], p[1]),
                "dec1": (c[1], p[1]), "dec2": (c[0], p[0])}[stage]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("cnn_widths", "pcn_widths", "head_widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        for key in ("k_r2p", "k_p2r", "lfa_k", "n_classes", "n_keypoints"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigurationError(f"{key} must be an integer")
        for key in ("cnn_widths", "pcn_widths", "head_widths"):
            if key in d and (not isinstance(d[key], list)
                             or not all(isinstance(w, int) and not isinstance(w, bool) for w in d[key])):
                raise ConfigurationError(f"{key} must be a list of integers")
        if "downsample_mode" in d and not isinstance(d["downsample_mode"], str):
            raise ConfigurationError("downsample_mode must be a string")
        return cls(**d)


@dataclass
class NetworkOutput:
    semantic_logits: Tensor
    center_offsets: Tensor
    keypoint_offsets: Tensor
    activations: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.semantic_logits.shape[0]
        if self.center_offsets.shape != (n, 3) or self.keypoint_offsets.shape[0] != n:
            raise ValidationError("head outputs disagree on the point count")


# -- parameters ------------------------------------------------------------------

def parameter_shapes(cfg: FusionConfig) -> dict:
    """Every weight/bias the config uses, name -> shape."""
    c1, c2 = cfg.cnn_widths
    p1, p2 = cfg.pcn_widths
    layers = {
        "cnn.enc1": (9 * 3, c1),
        "cnn.enc2": (9 * c1, c2),
        "cnn.dec1": (9 * (c2 + c1), c2),
        "cnn.dec2": (9 * (c2 + 3), c1),
        "pcn.input": (9, p1),
        "pcn.enc1": (p1 + 3, p1),
        "pcn.enc2": (p1 + 3, p2),
        "pcn.dec1": (p2 + p1, p2),
        "pcn.dec2": (p2 + p1, p1),
    }
    for stage in cfg.fused_stages():
        cr, cp = cfg.stage_widths(stage)
        if cfg.enable_r2p:
            layers[f"r2p.{stage}.proj"] = (cr, cp)
            layers[f"r2p.{stage}.fuse"] = (2 * cp, cp)
        if cfg.enable_p2r:
            layers[f"p2r.{stage}.proj"] = (cp, cr)
            layers[f"p2r.{stage}.fuse"] = (2 * cr, cr)
    feat = head_input_width(cfg)
    if cfg.enable_final_dense_fusion:
        layers["df.global"] = (c1 + p1, GLOBAL_WIDTH)
    outs = {"sem": cfg.n_classes, "ctr": 3, "kp": 3 * cfg.n_keypoints}
    for head, out in outs.items():
        widths = (feat,) + cfg.head_widths + (out,)
        for i in range(len(widths) - 1):
            layers[f"head.{head}.{i}"] = (widths[i], widths[i + 1])
    shapes = {}
    for name, (fan_in, fan_out) in layers.items():
        shapes[name + ".w"] = (fan_in, fan_out)
        shapes[name + ".b"] = (fan_out,)
    return shapes


def head_input_width(cfg: FusionConfig) -> int:
    w = cfg.cnn_widths[0] + cfg.pcn_widths[0]
    return w + GLOBAL_WIDTH if cfg.enable_final_dense_fusion else w


def init_params(cfg: FusionConfig, seed: int) -> dict:
    """Uniform ±1/sqrt(fan_in) for weights and biases.

    Each array draws from its own stream keyed by (seed, name), so a parameter
    has the same value under every config that uses it.
    """
    out = {}
    shapes = parameter_shapes(cfg)
    for name, shape in shapes.items():
        fan_in = shapes[name[:-2] + ".w"][0]
        bound = 1.0 / np.sqrt(fan_in)
        rng = make_rng([seed, zlib.crc32(name.encode())])
        out[name] = rng.uniform(-bound, bound, size=shape)
    return out


def _tensors(params: dict, cfg: FusionConfig) -> dict:
    shapes = parameter_shapes(cfg)
    out = {}
    for name, shape in shapes.items():
        if name not in params:
            raise ConfigurationError(f"missing parameter {name!r}")
        p = params[name]
        t = p if isinstance(p, Tensor) else Tensor(p)
        if t.shape != shape:
            raise ConfigurationError(f"parameter {name!r} has shape {t.shape}, expected {shape}")
        out[name] = t
    return out


def _layer(x, p, name):
    return linear(x, p[name + ".w"], p[name + ".b"])


def shared_mlp(x, layers) -> Tensor:
    """Chain of linear layers over the last axis, ReLU between them (not after the last).

    ``layers`` is a sequence of (weight C_in×C_out, bias C_out) pairs shared by
    every leading position.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    for i, (w, b) in enumerate(layers):
        if x.shape[-1] != w.shape[0]:
            raise ValidationError(f"layer {i} expects {w.shape[0]} channels, got {x.shape[-1]}")
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = relu(x)
    return x


# -- image ops --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _im2col_index(h, w, stride):
    """Rows of a zero-padded flat image feeding each 3×3 output window (pad row = h*w)."""
    ho, wo = -(-h // stride), -(-w // stride)
    oy, ox = np.mgrid[0:ho, 0:wo]
    idx = np.empty((ho, wo, 9), dtype=np.int64)
    k = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y = oy * stride + dy
            x = ox * stride + dx
            inside = (y >= 0) & (y < h) & (x >= 0) & (x < w)
            idx[:, :, k] = np.where(inside, y * w + x, h * w)
            k += 1
    idx.setflags(write=False)
    return idx


def conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3×3 convolution with zero padding 1 on an H×W×C tensor (weights 9C×D, tap-major)."""
    h, wd, c = x.shape
    idx = _im2col_index(h, wd, stride)
    flat = concat([reshape(x, (h * wd, c)), Tensor(np.zeros((1, c)))], axis=0)
    cols = gather_rows(flat, idx)  # H'×W'×9×C
    return linear(reshape(cols, idx.shape[:2] + (9 * c,)), w, b)


@lru_cache(maxsize=64)
def _upsample_index(h, w):
    y, x = np.mgrid[0:2 * h, 0:2 * w]
    idx = (y // 2) * w + x // 2
    idx.setflags(write=False)
    return idx


def upsample2(x: Tensor) -> Tensor:
    h, w, c = x.shape
    return gather_rows(reshape(x, (h * w, c)), _upsample_index(h, w))


# -- XYZ maps ---------------------------------------------------------------------------

def downsample_xyz(xyz_map: XyzMap, stride: int, mode: str = "nearest") -> XyzMap:
    """Reduce an XYZ map by ``stride`` per axis.

    ``nearest`` keeps the first valid pixel of each cell in row-major order, so
    every output point is an input point. ``mean-kernel`` averages the valid
    pixels of the cell. A cell is valid when any member is. Sizes that the
    stride does not divide are padded by repeating the last row/column.
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    if mode not in DOWNSAMPLE_MODES:
        raise ValidationError(f"unknown downsample mode {mode!r}")
    if stride == 1:
        return XyzMap(xyz_map.xyz.copy(), xyz_map.valid.copy())
    h, w = xyz_map.valid.shape
    ho, wo = -(-h // stride), -(-w // stride)
    pad = ((0, ho * stride - h), (0, wo * stride - w))
    xyz = np.pad(xyz_map.xyz, pad + ((0, 0),), mode="edge")
    valid = np.pad(xyz_map.valid, pad, mode="edge")
    cells_xyz = xyz.reshape(ho, stride, wo, stride, 3).transpose(0, 2, 1, 3, 4).reshape(ho, wo, -1, 3)
    cells_ok = valid.reshape(ho, stride, wo, stride).transpose(0, 2, 1, 3).reshape(ho, wo, -1)
    any_ok = cells_ok.any(axis=2)
    if mode == "nearest":
        first = np.argmax(cells_ok, axis=2)
        out = np.take_along_axis(cells_xyz, first[:, :, None, None], axis=2)[:, :, 0, :]
    else:
        count = np.maximum(cells_ok.sum(axis=2), 1)
        out = (cells_xyz * cells_ok[..., None]).sum(axis=2) / count[..., None]
    out = np.where(any_ok[..., None], out, 0.0)
    return XyzMap(out, any_ok)


# -- fusion blocks ----------------------------------------------------------------------

def _r2p_neighbors(xyz_ds: XyzMap, point_xyz, k):
    pix_xyz, flat = xyz_ds.valid_points()
    if len(flat) < k:
        raise ValidationError(f"only {len(flat)} valid map pixels for k_r2p={k}")
    return flat[knn(point_xyz, pix_xyz, k)]


def _p2r_neighbors(xyz_ds: XyzMap, point_xyz, k):
    if len(point_xyz) == 0:
        raise ValidationError("point cloud is empty")
    if len(point_xyz) < k:
        raise ValidationError(f"{len(point_xyz)} points for k_p2r={k}")
    pix_xyz, flat = xyz_ds.valid_points()
    if len(flat) == 0:
        return flat, np.zeros((0, k), dtype=np.int64)
    return flat, knn(pix_xyz, point_xyz, k)


def pixel_to_point_fuse(rgb_feat, xyz_map_ds: XyzMap, point_feat, point_xyz, cfg: FusionConfig,
                        proj, fuse, neighbors=None) -> Tensor:
    """Per point: max over the RGB features of its k_r2p nearest map pixels, project to C_p,
    concatenate with the point feature and mix back to C_p.

    ``proj`` and ``fuse`` are (weight, bias) pairs; ``neighbors`` (N×k flat
    pixel indices) may be passed precomputed.
    """
    rgb = rgb_feat if isinstance(rgb_feat, Tensor) else Tensor(rgb_feat)
    pf = point_feat if isinstance(point_feat, Tensor) else Tensor(point_feat)
    h, w, cr = rgb.shape
    if xyz_map_ds.valid.shape != (h, w):
        raise ValidationError("XYZ map and RGB features differ in size")
    if pf.shape[0] != len(point_xyz):
        raise ValidationError("point features and coordinates differ in count")
    if neighbors is None:
        neighbors = _r2p_neighbors(xyz_map_ds, np.asarray(point_xyz, dtype=np.float64), cfg.k_r2p)
    pooled = gather_max(reshape(rgb, (h * w, cr)), neighbors)
    f_r2p = shared_mlp(pooled, [proj])
    return shared_mlp(concat([pf, f_r2p], axis=1), [fuse])


def point_to_pixel_fuse(point_feat, point_xyz, rgb_feat, xyz_map_ds: XyzMap, cfg: FusionConfig,
                        proj, fuse, neighbors=None) -> Tensor:
    """Per valid pixel: project each of its k_p2r nearest points' features to C_r, take the max,
    concatenate with the pixel's RGB feature and mix back to C_r. Invalid pixels keep F_rgb.

    ``neighbors`` may be passed as (flat valid pixel indices V, V×k point indices).
    """
    rgb = rgb_feat if isinstance(rgb_feat, Tensor) else Tensor(rgb_feat)
    pf = point_feat if isinstance(point_feat, Tensor) else Tensor(point_feat)
    h, w, cr = rgb.shape
    if xyz_map_ds.valid.shape != (h, w):
        raise ValidationError("XYZ map and RGB features differ in size")
    if pf.shape[0] == 0:
        raise ValidationError("point cloud is empty")
    if neighbors is None:
        neighbors = _p2r_neighbors(xyz_map_ds, np.asarray(point_xyz, dtype=np.float64), cfg.k_p2r)
    flat, nbr = neighbors
    rgb_flat = reshape(rgb, (h * w, cr))
    if len(flat) == 0:
        return rgb
    f_p2r = gather_max(shared_mlp(pf, [proj]), nbr)  # MLP first, then max
    fused = shared_mlp(concat([gather_rows(rgb_flat, flat), f_p2r], axis=1), [fuse])
    route = np.arange(h * w)
    route[flat] = h * w + np.arange(len(flat))
    return reshape(gather_rows(concat([rgb_flat, fused], axis=0), route), (h, w, cr))


# -- geometry plan ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FusionPlan:
    image_shape: tuple
    point_pixels: np.ndarray  # N flat pixel indices
    level_xyz: tuple  # points at PCN levels 0, 1, 2
    sub: tuple  # indices of level l+1 inside level l
    lfa: tuple  # level l+1 queries -> lfa_k neighbors in level l
    up: tuple  # level l -> nearest point in level l+1 (for l = 0, 1)
    maps: dict  # stage -> XyzMap
    r2p: dict  # stage -> N_s×k flat pixel indices
    p2r: dict  # stage -> (flat valid pixels, V×k point indices)


STAGE_LEVEL = {"enc1": 1, "enc2": 2, "dec1": 1, "dec2": 0}


def point_pixels(points: np.ndarray, frame: RgbdFrame) -> np.ndarray:
    intr = frame.intrinsics
    z = points[:, 2]
    if np.any(z <= 0):
        raise ValidationError("sampled points must lie in front of the camera")
    u = np.clip(np.rint(points[:, 0] * intr.fx / z + intr.cx), 0, intr.width - 1).astype(np.int64)
    v = np.clip(np.rint(points[:, 1] * intr.fy / z + intr.cy), 0, intr.height - 1).astype(np.int64)
    return v * intr.width + u


def build_plan(frame: RgbdFrame, points: PointCloud, cfg: FusionConfig, seed: int = 0) -> FusionPlan:
    h, w = frame.shape
    if h % 4 or w % 4:
        raise ConfigurationError(f"image size {w}x{h} must be divisible by 4")
    n0 = len(points)
    n1, n2 = n0 // 2, n0 // 4
    if n2 < max(cfg.lfa_k, 1) or n1 < cfg.lfa_k:
        raise ValidationError(f"{n0} points are too few for lfa_k={cfg.lfa_k}")
    p0 = points.points
    s1 = random_subsample_indices(n0, n1, seed)
    p1 = p0[s1]
    s2 = random_subsample_indices(n1, n2, seed + 1)
    p2 = p1[s2]
    lfa = (knn(p1, p0, cfg.lfa_k), knn(p2, p1, cfg.lfa_k))
    up = (knn(p0, p1, 1)[:, 0], knn(p1, p2, 1)[:, 0])
    full = lift_depth(frame)
    levels = (p0, p1, p2)
    maps, r2p, p2r = {}, {}, {}
    for stage in cfg.fused_stages():
        m = downsample_xyz(full, STAGE_STRIDES[stage], cfg.downsample_mode)
        maps[stage] = m
        pts = levels[STAGE_LEVEL[stage]]
        if cfg.enable_r2p:
            r2p[stage] = _r2p_neighbors(m, pts, cfg.k_r2p)
        if cfg.enable_p2r:
            p2r[stage] = _p2r_neighbors(m, pts, cfg.k_p2r)
    return FusionPlan((h, w), point_pixels(p0, frame), levels, (s1, s2), lfa, up, maps, r2p, p2r)


def point_inputs(points: PointCloud) -> np.ndarray:
    """N×9 xyz-rgb-normal features (missing colors 0.5, missing normals 0)."""
    n = len(points)
    rgb = points.colors if points.colors is not None else np.full((n, 3), 0.5)
    nrm = points.normals if points.normals is not None else np.zeros((n, 3))
    return np.hstack([points.points, rgb, nrm])


# -- branches -------------------------------------------------------------------------------

def cnn_stage(stage, x, skip, rgb_input, p):
    if stage == "enc1":
        return relu(conv3x3(x, p["cnn.enc1.w"], p["cnn.enc1.b"], stride=2))
    if stage == "enc2":
        return relu(conv3x3(x, p["cnn.enc2.w"], p["cnn.enc2.b"], stride=2))
    if stage == "dec1":
        return relu(conv3x3(concat([upsample2(x), skip], axis=2), p["cnn.dec1.w"], p["cnn.dec1.b"]))
    return relu(conv3x3(concat([upsample2(x), rgb_input], axis=2), p["cnn.dec2.w"], p["cnn.dec2.b"]))


def _lfa(feat, plan, level, name, p):
    """Gather lfa_k neighbors from ``level - 1``, append relative positions, MLP, max."""
    nbr = plan.lfa[level - 1]
    q = plan.level_xyz[level]
    rel = plan.level_xyz[level - 1][nbr] - q[:, None, :]
    grouped = concat([gather_rows(feat, nbr), Tensor(rel)], axis=2)
    return reduce_max(relu(_layer(grouped, p, name)), axis=1)


def pcn_stage(stage, x, skip, plan, p):
    if stage == "enc1":
        return _lfa(x, plan, 1, "pcn.enc1", p)
    if stage == "enc2":
        return _lfa(x, plan, 2, "pcn.enc2", p)
    if stage == "dec1":
        return relu(_layer(concat([gather_rows(x, plan.up[1]), skip], axis=1), p, "pcn.dec1"))
    return relu(_layer(concat([gather_rows(x, plan.up[0]), skip], axis=1), p, "pcn.dec2"))


def cnn_branch(rgb, params, cfg: FusionConfig) -> Tensor:
    """The CNN alone (no fusion): H×W×3 image -> H×W×C_r."""
    p = _tensors(params, cfg) if not _is_tensor_dict(params) else params
    img = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    e1 = cnn_stage("enc1", img, None, img, p)
    e2 = cnn_stage("enc2", e1, None, img, p)
    d1 = cnn_stage("dec1", e2, e1, img, p)
    return cnn_stage("dec2", d1, None, img, p)


def pcn_branch(points: PointCloud, plan: FusionPlan, params, cfg: FusionConfig) -> Tensor:
    """The point network alone (no fusion): N points -> N×C_p."""
    p = _tensors(params, cfg) if not _is_tensor_dict(params) else params
    f0 = relu(_layer(Tensor(point_inputs(points)), p, "pcn.input"))
    e1 = pcn_stage("enc1", f0, None, plan, p)
    e2 = pcn_stage("enc2", e1, None, plan, p)
    d1 = pcn_stage("dec1", e2, e1, plan, p)
    return pcn_stage("dec2", d1, f0, plan, p)


def _is_tensor_dict(params):
    return bool(params) and all(isinstance(v, Tensor) for v in params.values())


def dense_features(rgb_feat: Tensor, point_feat: Tensor, plan: FusionPlan, params, cfg) -> Tensor:
    """Per-point concat of the CNN feature at the point's pixel and the point feature."""
    p = _tensors(params, cfg) if not _is_tensor_dict(params) else params
    h, w, cr = rgb_feat.shape
    feat = concat([gather_rows(reshape(rgb_feat, (h * w, cr)), plan.point_pixels), point_feat], axis=1)
    if cfg.enable_final_dense_fusion:
        # global context: max-pooled embedding appended to every point
        g = reduce_max(reshape(relu(_layer(feat, p, "df.global")), (1, -1, GLOBAL_WIDTH)), axis=1)
        feat = concat([feat, gather_rows(g, np.zeros(feat.shape[0], dtype=np.int64))], axis=1)
    return feat


def heads(features: Tensor, params, cfg: FusionConfig) -> tuple:
    p = _tensors(params, cfg) if not _is_tensor_dict(params) else params
    out = []
    for head in ("sem", "ctr", "kp"):
        n_layers = len(cfg.head_widths) + 1
        layers = [(p[f"head.{head}.{i}.w"], p[f"head.{head}.{i}.b"]) for i in range(n_layers)]
        out.append(shared_mlp(features, layers))
    return tuple(out)


def forward(frame: RgbdFrame, sampled_points: PointCloud, cfg: FusionConfig, params,
            seed: int = 0, plan: Optional[FusionPlan] = None) -> NetworkOutput:
    """Run both branches with the configured fusion and the three heads.

    ``activations`` in the result holds every stage's pre- and post-fusion
    tensors under keys like ``"cnn.enc2.pre"`` and ``"pcn.dec1.post"``.
    """
    if plan is None:
        plan = build_plan(frame, sampled_points, cfg, seed)
    if plan.image_shape != frame.shape or len(plan.point_pixels) != len(sampled_points):
        raise ValidationError("plan was built for different inputs")
    p = _tensors(params, cfg)
    img = Tensor(frame.rgb)
    acts = {}
    f0 = relu(_layer(Tensor(point_inputs(sampled_points)), p, "pcn.input"))
    x_r, x_p = img, f0
    skips_r, skips_p = {}, {}
    fused = cfg.fused_stages()
    for stage in STAGES:
        skip_r = skips_r.get("enc1") if stage == "dec1" else None
        skip_p = skips_p.get("enc1") if stage == "dec1" else (f0 if stage == "dec2" else None)
        pre_r = cnn_stage(stage, x_r, skip_r, img, p)
        pre_p = pcn_stage(stage, x_p, skip_p, plan, p)
        post_r, post_p = pre_r, pre_p
        if stage in fused:
            level_xyz = plan.level_xyz[STAGE_LEVEL[stage]]
            if cfg.enable_r2p:
                post_p = pixel_to_point_fuse(
                    pre_r, plan.maps[stage], pre_p, level_xyz, cfg,
                    (p[f"r2p.{stage}.proj.w"], p[f"r2p.{stage}.proj.b"]),
                    (p[f"r2p.{stage}.fuse.w"], p[f"r2p.{stage}.fuse.b"]), plan.r2p[stage])
            if cfg.enable_p2r:
                post_r = point_to_pixel_fuse(
                    pre_p, level_xyz, pre_r, plan.maps[stage], cfg,
                    (p[f"p2r.{stage}.proj.w"], p[f"p2r.{stage}.proj.b"]),
                    (p[f"p2r.{stage}.fuse.w"], p[f"p2r.{stage}.fuse.b"]), plan.p2r[stage])
        acts[f"cnn.{stage}.pre"], acts[f"cnn.{stage}.post"] = pre_r, post_r
        acts[f"pcn.{stage}.pre"], acts[f"pcn.{stage}.post"] = pre_p, post_p
        skips_r[stage], skips_p[stage] = post_r, post_p
        x_r, x_p = post_r, post_p
    feat = dense_features(x_r, x_p, plan, p, cfg)
    sem, ctr, kp = heads(feat, p, cfg)
    return NetworkOutput(sem, ctr, kp, acts)
