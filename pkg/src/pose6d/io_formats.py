"""Readers and writers for every on-disk artifact.

* ASCII PLY vertex clouds (binary PLY is rejected). Floats are written with 9
  significant digits, so ``read_ply(write_ply(c))`` matches ``c`` to ~5e-9
  relative and is exact for clouds that already went through one round trip.
* Binary PPM (P6) and PGM (P5) images.
* Raw depth: magic ``P6DD1``, little-endian uint32 width and height, then
  row-major little-endian float32 meters (0 = invalid).
* JSON documents tagged ``"format_version": 1``: poses (row-major 3×3 rotation
  + translation), keypoint models, detection lists, fusion configs and named
  parameter bundles.

Every parser raises a :class:`~pose6d.errors.FormatError` subclass on bad input
and nothing else.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import (FormatError, InvariantError, MagicMismatchError, PlyParseError,
                     RotationInvariantError, SchemaError, TruncatedPayloadError)
from .geometry import PointCloud, RigidTransform

FORMAT_VERSION = 1
DEPTH_MAGIC = b"P6DD1"

_PLY_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint",
                  "int8", "uint8", "int16", "uint16", "int32", "uint32"}
_PLY_FLOAT_TYPES = {"float", "double", "float32", "float64"}


# -- PLY -----------------------------------------------------------------------

def _ply_number(token, kind, line):
    try:
        if kind in _PLY_INT_TYPES:
            return int(token)
        value = float(token)
    except ValueError:
        raise PlyParseError(f"bad {kind} value {token!r}", line) from None
    if not math.isfinite(value):
        raise PlyParseError(f"non-finite value {token!r}", line)
    return value


def _parse_ply_header(lines):
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("missing 'ply' magic", 1)
    elements = []
    fmt = None
    for i, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if not parts:
            continue
        key = parts[0]
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(parts) != 3:
                raise PlyParseError("malformed format line", i)
            if parts[1] != "ascii":
                raise PlyParseError(f"unsupported PLY format {parts[1]!r}: only ascii is read", i)
            if parts[2] != "1.0":
                raise PlyParseError(f"unsupported PLY version {parts[2]!r}", i)
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise PlyParseError("malformed element line", i)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyParseError(f"bad element count {parts[2]!r}", i) from None
            if count < 0:
                raise PlyParseError("negative element count", i)
            elements.append([parts[1], count, []])
        elif key == "property":
            if not elements:
                raise PlyParseError("property before any element", i)
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_INT_TYPES or parts[3] not in _PLY_INT_TYPES | _PLY_FLOAT_TYPES:
                    raise PlyParseError("bad list property types", i)
                elements[-1][2].append((parts[4], "list", parts[3]))
            elif len(parts) == 3 and parts[1] in _PLY_INT_TYPES | _PLY_FLOAT_TYPES:
                if any(p[0] == parts[2] for p in elements[-1][2]):
                    raise PlyParseError(f"duplicate property {parts[2]!r}", i)
                elements[-1][2].append((parts[2], "scalar", parts[1]))
            else:
                raise PlyParseError(f"malformed property line {raw.strip()!r}", i)
        elif key == "end_header":
            if fmt is None:
                raise PlyParseError("header has no format line", i)
            return elements, i
        else:
            raise PlyParseError(f"unknown header keyword {key!r}", i)
    raise PlyParseError("header not terminated by end_header", len(lines))


def read_ply(data: bytes) -> PointCloud:
    try:
        text = bytes(data).decode("ascii")
    except UnicodeDecodeError as exc:
        raise PlyParseError(f"non-ASCII content at byte {exc.start} (binary PLY is not supported)") from None
    lines = text.split("\n")
    elements, header_end = _parse_ply_header(lines)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise PlyParseError("no vertex element", header_end)
    pos = header_end  # 0-based index of the first data line
    vertex_rows = None
    vertex_props = None
    for name, count, props in elements:
        rows = []
        for r in range(count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise PlyParseError(f"expected {count} {name} rows, found {r}", pos)
            tokens = lines[pos].split()
            line_no = pos + 1
            row = []
            t = 0
            for pname, kind, ptype in props:
                if kind == "list":
                    if t >= len(tokens):
                        raise PlyParseError("row too short", line_no)
                    n = _ply_number(tokens[t], "int", line_no)
                    if n < 0 or t + 1 + n > len(tokens):
                        raise PlyParseError("list length exceeds row", line_no)
                    t += 1 + n
                else:
                    if t >= len(tokens):
                        raise PlyParseError(f"row has too few values for {name}", line_no)
                    row.append(_ply_number(tokens[t], ptype, line_no))
                    t += 1
            if t != len(tokens):
                raise PlyParseError(f"row has {len(tokens)} values, expected {t}", line_no)
            rows.append(row)
            pos += 1
        if name == "vertex":
            vertex_rows = rows
            vertex_props = [(p[0], p[2]) for p in props if p[1] == "scalar"]
    for extra in range(pos, len(lines)):
        if lines[extra].strip():
            raise PlyParseError("data beyond the declared element counts", extra + 1)
    return _vertex_cloud(vertex_rows, vertex_props, header_end)


def _vertex_cloud(rows, props, header_line):
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise PlyParseError(f"vertex element lacks property {axis!r}", header_line)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    col = {n: i for i, n in enumerate(names)}
    points = arr[:, [col["x"], col["y"], col["z"]]]
    colors = normals = None
    if all(c in col for c in ("red", "green", "blue")):
        colors = arr[:, [col["red"], col["green"], col["blue"]]]
        if dict(props)["red"] in _PLY_INT_TYPES:
            colors = colors / 255.0
        if colors.size and (colors.min() < 0 or colors.max() > 1):
            raise PlyParseError("vertex colors outside [0, 1]", header_line)
    if all(c in col for c in ("nx", "ny", "nz")):
        normals = arr[:, [col["nx"], col["ny"], col["nz"]]]
    try:
        return PointCloud(points, colors, normals)
    except InvariantError as exc:
        raise PlyParseError(str(exc), header_line) from None


def _fmt(x) -> str:
    return format(float(x), ".9g")


def write_ply(cloud: PointCloud) -> bytes:
    props = ["property double x", "property double y", "property double z"]
    cols = [cloud.points]
    if cloud.colors is not None:
        props += ["property float red", "property float green", "property float blue"]
        cols.append(cloud.colors)
    if cloud.normals is not None:
        props += ["property double nx", "property double ny", "property double nz"]
        cols.append(cloud.normals)
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}", *props, "end_header"]
    data = np.hstack(cols) if cols else np.zeros((0, 0))
    body = [" ".join(_fmt(v) for v in row) for row in data]
    return ("\n".join(header + body) + "\n").encode("ascii")


# -- PPM / PGM -------------------------------------------------------------------

def _netpbm_header(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise MagicMismatchError(f"expected {magic.decode()} magic, found {data[:2]!r}")
    fields = []
    i = 2
    while len(fields) < 3:
        if i >= len(data):
            raise TruncatedPayloadError("header ended early")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < len(data) and data[j:j + 1].isdigit():
                j += 1
            fields.append(int(data[i:j]))
            i = j
        else:
            raise FormatError(f"unexpected byte {c!r} in header")
    if i >= len(data) or not data[i:i + 1].isspace():
        raise TruncatedPayloadError("missing whitespace after header")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"invalid image size {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"invalid maxval {maxval}")
    return width, height, maxval, i + 1


def _read_netpbm(data, magic, channels):
    data = bytes(data)
    w, h, maxval, start = _netpbm_header(data, magic)
    depth = 1 if maxval < 256 else 2
    need = w * h * channels * depth
    payload = data[start:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise FormatError(f"{len(payload) - need} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=np.uint8 if depth == 1 else ">u2")
    if arr.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval")
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape).astype(np.uint8 if depth == 1 else np.uint16), maxval


def read_ppm(data: bytes) -> np.ndarray:
    img, maxval = _read_netpbm(data, b"P6", 3)
    if maxval != 255:
        raise FormatError(f"only maxval 255 PPM is supported, got {maxval}")
    return img


def write_ppm(img) -> bytes:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("PPM needs an H×W×3 image")
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    img, _ = _read_netpbm(data, b"P5", 1)
    return img


def write_pgm(img) -> bytes:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError("PGM needs an H×W image")
    if arr.size and (arr.min() < 0 or arr.max() > 65535):
        raise ValueError("PGM samples must lie in [0, 65535]")
    h, w = arr.shape
    if arr.dtype == np.uint8 or (arr.size and arr.max() < 256) or arr.size == 0:
        return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + arr.astype(">u2").tobytes()


def to_uint8(rgb) -> np.ndarray:
    return np.clip(np.rint(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# -- raw depth ---------------------------------------------------------------------

def write_depth(depth) -> bytes:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth must be H×W")
    h, w = d.shape
    return DEPTH_MAGIC + struct.pack("<II", w, h) + np.ascontiguousarray(d, dtype="<f4").tobytes()


def read_depth(data: bytes) -> np.ndarray:
    data = bytes(data)
    if data[:5] != DEPTH_MAGIC:
        raise MagicMismatchError(f"expected {DEPTH_MAGIC!r}, found {data[:5]!r}")
    if len(data) < 13:
        raise TruncatedPayloadError("depth header truncated")
    w, h = struct.unpack("<II", data[5:13])
    need = 4 * w * h
    payload = data[13:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise FormatError(f"{len(payload) - need} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise FormatError("depth values must be finite and non-negative")
    return arr.copy()


# -- JSON ------------------------------------------------------------------------------

def dumps(doc) -> str:
    """Deterministic JSON: sorted keys, two-space indent, shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text) -> dict:
    try:
        if isinstance(text, (bytes, bytearray)):
            text = bytes(text).decode("utf-8")
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported format_version {doc.get('format_version')!r}")
    return doc


def _numbers(value, count, what):
    if not isinstance(value, list) or len(value) != count:
        raise SchemaError(f"{what} must be a list of {count} numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"{what} holds a non-numeric or non-finite entry")
        out.append(float(v))
    return out


_INDEX_LIMIT = 2 ** 62


def _field(doc, key, kind):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SchemaError(f"{key} must be a finite number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int) or abs(value) >= _INDEX_LIMIT:
            raise SchemaError(f"{key} must be an integer in range")
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"{key} has the wrong type")
    return value


def pose_to_dict(pose: RigidTransform) -> dict:
    return {"rotation": [float(x) for x in pose.r.ravel()], "translation": [float(x) for x in pose.t]}


def pose_from_dict(d) -> RigidTransform:
    if not isinstance(d, dict):
        raise SchemaError("pose must be an object")
    r = _numbers(d.get("rotation"), 9, "rotation")
    t = _numbers(d.get("translation"), 3, "translation")
    try:
        return RigidTransform(np.array(r).reshape(3, 3), np.array(t))
    except InvariantError as exc:
        raise RotationInvariantError(str(exc)) from None


def write_pose_json(pose: RigidTransform) -> str:
    return dumps(dict(pose_to_dict(pose), format_version=FORMAT_VERSION))


def read_pose_json(text) -> RigidTransform:
    return pose_from_dict(loads(text))


def keypoint_model_to_dict(model) -> dict:
    return {"object_id": model.object_id,
            "keypoints": [[float(x) for x in p] for p in model.keypoints],
            "center": [float(x) for x in model.center],
            "diameter": float(model.diameter)}


def keypoint_model_from_dict(d):
    from .keypoints import KeypointModel

    if not isinstance(d, dict):
        raise SchemaError("keypoint model must be an object")
    oid = _field(d, "object_id", str)
    kps = _field(d, "keypoints", list)
    if not kps:
        raise SchemaError("keypoint model has no keypoints")
    pts = [_numbers(p, 3, "keypoint") for p in kps]
    center = _numbers(d.get("center"), 3, "center")
    diameter = _field(d, "diameter", float)
    try:
        return KeypointModel(oid, np.array(pts), np.array(center), diameter)
    except InvariantError as exc:
        raise SchemaError(str(exc)) from None


def write_keypoint_model_json(model) -> str:
    return dumps(dict(keypoint_model_to_dict(model), format_version=FORMAT_VERSION))


def write_keypoint_models_json(models: dict) -> str:
    """``models`` maps class id -> KeypointModel."""
    entries = [dict(keypoint_model_to_dict(m), class_id=int(c)) for c, m in sorted(models.items())]
    return dumps({"format_version": FORMAT_VERSION, "models": entries})


def read_keypoint_models_json(text) -> dict:
    """Either a single model document or a ``models`` list. Returns object_id/class_id keyed dict.

    Single documents are keyed by ``object_id``; list entries by ``class_id``
    when present, otherwise by ``object_id``.
    """
    doc = loads(text)
    if "models" not in doc:
        m = keypoint_model_from_dict(doc)
        return {m.object_id: m}
    entries = _field(doc, "models", list)
    out = {}
    for e in entries:
        m = keypoint_model_from_dict(e)
        key = _field(e, "class_id", int) if "class_id" in e else m.object_id
        if key in out:
            raise SchemaError(f"duplicate model key {key!r}")
        out[key] = m
    return out


def detection_to_dict(det) -> dict:
    out = {"class_id": int(det.class_id),
           "member_indices": [int(i) for i in det.member_indices],
           "voted_center": [float(x) for x in det.voted_center]}
    if det.voted_keypoints is not None:
        out["voted_keypoints"] = [[float(x) for x in p] for p in det.voted_keypoints]
    if det.pose is not None:
        out["pose"] = pose_to_dict(det.pose)
    return out


def detection_from_dict(d):
    from .voting import Detection

    if not isinstance(d, dict):
        raise SchemaError("detection must be an object")
    cls = _field(d, "class_id", int)
    members = _field(d, "member_indices", list)
    if not members or not all(isinstance(i, int) and not isinstance(i, bool) and 0 <= i < _INDEX_LIMIT
                              for i in members):
        raise SchemaError("member_indices must be non-empty non-negative integers")
    center = _numbers(d.get("voted_center"), 3, "voted_center")
    kps = None
    if "voted_keypoints" in d:
        kps = np.array([_numbers(p, 3, "voted keypoint") for p in _field(d, "voted_keypoints", list)])
    pose = pose_from_dict(d["pose"]) if "pose" in d else None
    return Detection(cls, np.array(members), np.array(center), kps, pose)


def write_detections_json(detections, extra=None) -> str:
    doc = {"format_version": FORMAT_VERSION, "detections": [detection_to_dict(d) for d in detections]}
    doc.update(extra or {})
    return dumps(doc)


def read_detections_json(text) -> list:
    doc = loads(text)
    return [detection_from_dict(d) for d in _field(doc, "detections", list)]


def write_scene_detections_json(per_scene: dict) -> str:
    """Detections grouped by scene name."""
    return dumps({"format_version": FORMAT_VERSION,
                  "scenes": {name: [detection_to_dict(d) for d in dets]
                             for name, dets in sorted(per_scene.items())}})


def read_scene_detections_json(text) -> dict:
    doc = loads(text)
    scenes = _field(doc, "scenes", dict)
    out = {}
    for name, dets in scenes.items():
        if not isinstance(dets, list):
            raise SchemaError(f"scene {name!r} must hold a detection list")
        out[name] = [detection_from_dict(d) for d in dets]
    return out


def write_fusion_config_json(cfg) -> str:
    return dumps(dict(cfg.to_dict(), format_version=FORMAT_VERSION))


def read_fusion_config_json(text):
    from .fusion.network import FusionConfig

    doc = loads(text)
    doc.pop("format_version")
    try:
        return FusionConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid fusion config: {exc}") from None


def write_parameters_json(params: dict) -> str:
    """Named arrays as {"shape": [...], "data": [flat row-major values]}."""
    return dumps({"format_version": FORMAT_VERSION,
                  "parameters": {name: {"shape": list(np.shape(a)),
                                        "data": [float(x) for x in np.ravel(a)]}
                                 for name, a in sorted(params.items())}})


def read_parameters_json(text) -> dict:
    doc = loads(text)
    params = _field(doc, "parameters", dict)
    out = {}
    for name, entry in params.items():
        if not isinstance(entry, dict):
            raise SchemaError(f"parameter {name!r} must be an object")
        shape = _field(entry, "shape", list)
        if not all(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < _INDEX_LIMIT for s in shape):
            raise SchemaError(f"parameter {name!r} has a bad shape")
        data = _field(entry, "data", list)
        size = math.prod(shape)
        values = _numbers(data, size, f"parameter {name!r} data")
        out[name] = np.array(values, dtype=np.float64).reshape(shape)
    return out


# -- file helpers ----------------------------------------------------------------------

def read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def write_bytes(path, data: bytes) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)


def write_text(path, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))


# -- scene directories ---------------------------------------------------------------------
#
# <dir>/rgb.ppm, depth.p6dd, semantic.pgm, instance.pgm and annotation.json.
# The annotation stores intrinsics, every instance (ids, pose, visibility) and
# the procedural definitions of the objects involved.

def _intrinsics_to_dict(intr) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def _intrinsics_from_dict(d):
    from .geometry import CameraIntrinsics

    if not isinstance(d, dict):
        raise SchemaError("intrinsics must be an object")
    try:
        return CameraIntrinsics(_field(d, "fx", float), _field(d, "fy", float), _field(d, "cx", float),
                                _field(d, "cy", float), _field(d, "width", int), _field(d, "height", int))
    except InvariantError as exc:
        raise SchemaError(str(exc)) from None


def write_scene_dir(path, frame, annotation, objects: dict) -> None:
    """``objects`` maps class id -> ProceduralObject."""
    root = Path(path)
    write_bytes(root / "rgb.ppm", write_ppm(to_uint8(frame.rgb)))
    write_bytes(root / "depth.p6dd", write_depth(frame.depth))
    write_bytes(root / "semantic.pgm", write_pgm(annotation.semantic))
    write_bytes(root / "instance.pgm", write_pgm(annotation.instance))
    doc = {
        "format_version": FORMAT_VERSION,
        "intrinsics": _intrinsics_to_dict(frame.intrinsics),
        "instances": [{"instance_id": i.instance_id, "class_id": i.class_id, "object_id": i.object_id,
                       "symmetric": bool(i.symmetric), "visibility": float(i.visibility),
                       "pose": pose_to_dict(i.pose)} for i in annotation.instances],
        "objects": [dict(obj.to_dict(), class_id=int(c)) for c, obj in sorted(objects.items())],
    }
    write_text(root / "annotation.json", dumps(doc))


def read_scene_dir(path):
    """Returns (RgbdFrame, SceneAnnotation, {class_id: ProceduralObject})."""
    from .errors import ValidationError
    from .geometry import RgbdFrame
    from .synth import ProceduralObject, SceneAnnotation, SceneInstance

    root = Path(path)
    for name in ("rgb.ppm", "depth.p6dd", "semantic.pgm", "instance.pgm", "annotation.json"):
        if not (root / name).is_file():
            raise FormatError(f"scene directory {root} lacks {name}")
    doc = loads(read_bytes(root / "annotation.json"))
    intr = _intrinsics_from_dict(doc.get("intrinsics"))
    rgb = read_ppm(read_bytes(root / "rgb.ppm")).astype(np.float64) / 255.0
    depth = read_depth(read_bytes(root / "depth.p6dd")).astype(np.float64)
    semantic = read_pgm(read_bytes(root / "semantic.pgm")).astype(np.int64)
    instance = read_pgm(read_bytes(root / "instance.pgm")).astype(np.int64)
    try:
        frame = RgbdFrame(rgb, depth, intr)
    except InvariantError as exc:
        raise SchemaError(f"scene images disagree: {exc}") from None
    if semantic.shape != depth.shape or instance.shape != depth.shape:
        raise SchemaError("label images must match the depth size")
    instances = []
    for d in _field(doc, "instances", list):
        if not isinstance(d, dict):
            raise SchemaError("instance entries must be objects")
        instances.append(SceneInstance(_field(d, "instance_id", int), _field(d, "class_id", int),
                                       _field(d, "object_id", str), pose_from_dict(d.get("pose")),
                                       _field(d, "visibility", float), _field(d, "symmetric", bool)))
    objects = {}
    for d in _field(doc, "objects", list):
        try:
            objects[_field(d, "class_id", int)] = ProceduralObject.from_dict(d)
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise SchemaError(f"bad object definition: {exc}") from None
    return frame, SceneAnnotation(semantic, instance, tuple(instances)), objects


def scene_dirs(path) -> list:
    """A scene directory itself, or the sorted ``scene_*`` children of a generated set."""
    root = Path(path)
    if not root.is_dir():
        raise FormatError(f"{root} is not a directory")
    if (root / "annotation.json").is_file():
        return [root]
    found = sorted(p for p in root.iterdir() if p.is_dir() and (p / "annotation.json").is_file())
    if not found:
        raise FormatError(f"no scene directories under {root}")
    return found
