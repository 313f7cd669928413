import numpy as np
import pytest

from pose6d.errors import ValidationError
from pose6d.geometry import CameraIntrinsics, RigidTransform, make_rng, project
from pose6d.synth import (SHAPES, ProceduralObject, blob_cube, corrupt_votes, default_spec,
                          lifted_surface_error, make_scene, splat_render, surface_distance)

INTR = CameraIntrinsics(320.0, 320.0, 160.0, 120.0, 320, 240)
BOX = ProceduralObject("box", "box", (0.08, 0.06, 0.04))

OBJECTS = [
    BOX,
    ProceduralObject("can", "cylinder", (0.03, 0.09)),
    ProceduralObject("ball", "sphere", (0.04,)),
    ProceduralObject("bracket", "l-bracket", (0.09, 0.07, 0.02, 0.04)),
]


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


@pytest.mark.parametrize("obj", OBJECTS, ids=lambda o: o.shape)
def test_samples_lie_on_surface(obj):
    cloud = obj.sample_surface(3000, seed=1)
    assert surface_distance(obj, cloud.points).max() < 1e-9
    assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1.0)
    assert {o.shape for o in OBJECTS} == set(SHAPES)


def test_single_box_on_axis():
    pose = RigidTransform(rot_x(0.3), [0, 0, 0.5])
    frame, ann = splat_render([(BOX, pose, 1)], INTR)
    ours = ann.instance == 1
    assert ours[120, 160]
    assert np.array_equal(ours, frame.depth > 0)
    assert (ann.semantic[ours] == 1).all()
    assert ann.instances[0].visibility == 1.0


def test_occlusion_lowers_visibility():
    front = RigidTransform(np.eye(3), [0.02, 0, 0.4])
    back = RigidTransform(np.eye(3), [0, 0, 0.6])
    _, ann = splat_render([(BOX, back, 1), (BOX, front, 1)], INTR)
    assert ann.by_id(1).visibility < 1.0
    assert ann.by_id(2).visibility == 1.0


def test_empty_scene_rejected():
    with pytest.raises(ValidationError):
        splat_render([], INTR)


def test_outside_frustum_rejected():
    with pytest.raises(ValidationError):
        make_scene(default_spec(), 0, items=[(BOX, RigidTransform(np.eye(3), [5.0, 0, 0.5]), 1)])


def test_lift_matches_surface(default_scene):
    assert lifted_surface_error(default_scene) < 1e-6


def test_make_scene_deterministic(default_scene):
    again = make_scene(default_spec(), 11)
    assert np.array_equal(again.frame.rgb, default_scene.frame.rgb)
    assert np.array_equal(again.frame.depth, default_scene.frame.depth)
    assert np.array_equal(again.annotation.instance, default_scene.annotation.instance)
    assert np.array_equal(again.votes.keypoint_offsets, default_scene.votes.keypoint_offsets)


def test_offsets_reach_posed_targets(default_scene):
    b = default_scene
    v = b.votes
    for inst in b.annotation.instances:
        rows = v.instance == inst.instance_id
        model = b.models[inst.class_id]
        assert np.abs(v.points[rows] + v.center_offset[rows] - inst.pose.apply(model.center)).max() < 1e-12
        target = inst.pose.apply(model.keypoints)
        assert np.abs(v.points[rows][:, None] + v.keypoint_offsets[rows] - target[None]).max() < 1e-12


def test_ids_consistent_between_pixels_and_points(default_scene):
    b = default_scene
    for inst in b.annotation.instances:
        mask = b.annotation.instance == inst.instance_id
        assert (b.annotation.semantic[mask] == inst.class_id).all()
        assert (b.votes.semantic[b.votes.instance == inst.instance_id] == inst.class_id).all()


def test_corrupt_votes_identity_and_full_replacement(default_scene):
    v = default_scene.votes
    same = corrupt_votes(v, 0.0, 0.0, 3)
    assert np.array_equal(same.center_offset, v.center_offset)
    assert np.array_equal(same.keypoint_offsets, v.keypoint_offsets)
    allout = corrupt_votes(v, 0.0, 1.0, 3)
    assert not np.any(np.all(allout.center_offset == v.center_offset, axis=1))
    assert np.abs(allout.center_offset).max() <= 1.0
    with pytest.raises(ValidationError):
        corrupt_votes(v, 0.0, 1.5, 0)


def test_corrupt_votes_noise_statistics():
    from pose6d.voting import VoteField

    n = 10 ** 4
    v = VoteField(np.zeros((n, 3)), np.ones(n, dtype=int), np.zeros((n, 3)), np.zeros((n, 2, 3)))
    noisy = corrupt_votes(v, 0.005, 0.0, 7)
    for arr in (noisy.center_offset, noisy.keypoint_offsets):
        assert abs(arr.std() / 0.005 - 1) < 0.1
        assert abs(arr.mean()) < 0.1 * 0.005
    outl = corrupt_votes(v, 0.0, 0.1, 7)
    assert np.count_nonzero(np.any(outl.center_offset != 0, axis=1)) == 1000


def test_blob_centers_project_onto_brightest_pixel():
    cube = blob_cube()
    # face +z toward the camera with a slight tilt
    pose = RigidTransform(rot_x(np.pi + 0.15), [0.004, -0.003, 0.4])
    frame, _ = splat_render([(cube, pose, 1)], INTR)
    gray = frame.rgb.mean(axis=2)
    checked = 0
    for c in cube.texture.blob_centers:
        if c[2] < 0:
            continue  # bottom face, hidden
        u, v = project(pose.apply(np.asarray(c)), INTR)
        iu, iv = int(round(u)), int(round(v))
        win = gray[iv - 6:iv + 7, iu - 6:iu + 7]
        dv, du = np.unravel_index(np.argmax(win), win.shape)
        assert abs(iu - 6 + du - u) <= 0.5 and abs(iv - 6 + dv - v) <= 0.5
        checked += 1
    assert checked == 4


def test_surface_distance_detects_offsurface():
    assert surface_distance(BOX, np.zeros((1, 3)))[0] == pytest.approx(0.02)
