import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.distance import pdist

from pose6d.dog import detect_dog_keypoints
from pose6d.errors import InsufficientSaliencyError, ValidationError
from pose6d.geometry import make_rng
from pose6d.keypoints import (KeypointModel, farthest_from_centroid, fps, look_at, model_diameter,
                              sift_fps_candidates, sift_fps_select, sphere_viewpoints)
from pose6d.synth import ProceduralObject, Texture, blob_cube, surface_distance

CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)


def brute_fps(points, n, seed):
    chosen = [seed]
    while len(chosen) < n:
        best, best_d = None, -1.0
        for i, p in enumerate(points):
            d = min(float(((p - points[j]) ** 2).sum()) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def blob_image(u0, v0, sigma=4.0, shape=(128, 128)):
    v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    return 0.2 + 0.7 * np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2 * sigma ** 2))


def test_fps_examples():
    line = np.c_[np.arange(10.0), np.zeros(10), np.zeros(10)]
    assert fps(line, 3, 0).tolist() == [0, 9, 4]
    assert fps(line, 1, 6).tolist() == [6]
    with pytest.raises(ValidationError):
        fps(line, 11, 0)


@given(st.integers(1, 64), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_fps_matches_brute_force(m, seed, grid):
    rng = make_rng(seed)
    pts = rng.integers(0, 4, (m, 3)).astype(float) if grid else rng.normal(size=(m, 3))
    n = int(rng.integers(1, m + 1))
    s = int(rng.integers(m))
    assert fps(pts, n, s).tolist() == brute_fps(pts, n, s)


@given(st.integers(2, 40), st.integers(0, 2 ** 32 - 1))
def test_fps_permutation_covariance(m, seed):
    rng = make_rng(seed)
    pts = rng.normal(size=(m, 3))
    perm = rng.permutation(m)
    inv = np.argsort(perm)
    n = int(rng.integers(1, m + 1))
    a = fps(pts, n, 0)
    b = fps(pts[perm], n, int(inv[0]))
    assert np.array_equal(perm[b], a)


def test_fps_coverage_radius_is_monotone():
    rng = make_rng(3)
    pts = rng.normal(size=(300, 3))
    radii = []
    for n in range(1, 30):
        kp = pts[fps(pts, n, 0)]
        radii.append(np.sqrt(((pts[:, None] - kp[None]) ** 2).sum(-1)).min(1).max())
    assert all(b <= a for a, b in zip(radii, radii[1:]))


def test_model_diameter():
    assert abs(model_diameter(CUBE) - np.sqrt(3)) < 1e-15
    assert model_diameter([[0, 0, 0], [0, 2.0, 0]]) == 2.0
    pts = make_rng(0).normal(size=(1000, 3))
    assert model_diameter(pts) == pdist(pts).max()


def test_fps_on_cube_corners_gives_distinct_corners():
    model = KeypointModel("cube", CUBE[fps(CUBE, 4, farthest_from_centroid(CUBE))], CUBE.mean(0), np.sqrt(3))
    assert len({tuple(p) for p in model.keypoints}) == 4


def test_sphere_viewpoints():
    single = sphere_viewpoints(1, 2.0)
    assert np.allclose(single[0].inverse().t, [0, 0, 2.0], atol=1e-12)
    poses = sphere_viewpoints(100, 0.7)
    centers = np.array([p.inverse().t for p in poses])
    assert np.abs(np.linalg.norm(centers, axis=1) - 0.7).max() < 1e-12
    for p in poses[:10]:
        # the origin lies on each camera's optical axis
        assert np.abs(p.apply(np.zeros(3))[:2]).max() < 1e-12 and p.apply(np.zeros(3))[2] > 0
    u = centers / 0.7
    cos = u @ u.T
    np.fill_diagonal(cos, -1)
    gap = np.arccos(np.clip(cos.max(1), -1, 1)).min()
    expected = np.sqrt(4 * np.pi / 100)  # spacing of equal-area cells
    assert gap >= 0.6 * expected


def test_look_at_handles_polar_axis():
    p = look_at([0, 0, 1.0])
    assert abs(np.linalg.det(p.r) - 1) < 1e-12


def test_dog_constant_and_edge_images():
    assert detect_dog_keypoints(np.full((96, 96), 0.4)) == []
    step = np.zeros((96, 96))
    step[:, 48:] = 1.0
    assert detect_dog_keypoints(step) == []


def test_dog_single_blob():
    kps = detect_dog_keypoints(blob_image(40, 60))
    assert len(kps) == 1
    assert np.hypot(kps[0].u - 40, kps[0].v - 60) < 1.0


@pytest.mark.parametrize("shift", [(5, 3), (-7, 2), (0, -9)])
def test_dog_translation_equivariance(shift):
    a = detect_dog_keypoints(blob_image(50, 55))
    b = detect_dog_keypoints(blob_image(50 + shift[0], 55 + shift[1]))
    assert len(a) == len(b) == 1
    assert abs(b[0].u - a[0].u - shift[0]) < 0.5 and abs(b[0].v - a[0].v - shift[1]) < 0.5


def test_dog_rejects_tiny_images():
    with pytest.raises(ValidationError):
        detect_dog_keypoints(np.zeros((8, 8)))


@pytest.fixture(scope="module")
def blob_candidates():
    return sift_fps_candidates(blob_cube(), views=60)


def test_sift_fps_on_blob_cube(blob_candidates):
    cube = blob_cube()
    model = sift_fps_select(cube, 8)
    centers = np.asarray(cube.texture.blob_centers)
    d = np.linalg.norm(model.keypoints[:, None] - centers[None], axis=2)
    assert d.min(axis=1).max() < 5e-3
    assert len(set(d.argmin(axis=1))) == 8
    # every keypoint lies on the rendered surface
    assert surface_distance(cube, model.keypoints).max() < 1e-3


def test_sift_fps_matches_brute_force_fps(blob_candidates):
    cands = blob_candidates
    model = sift_fps_select(blob_cube(), 8)
    ref = cands[brute_fps(cands, 8, farthest_from_centroid(cands))]
    assert np.isclose(pdist(model.keypoints).min(), pdist(ref).min(), rtol=0, atol=0)


def test_sift_fps_all_candidates(blob_candidates):
    n = len(blob_candidates)
    model = sift_fps_select(blob_cube(), n)
    assert sorted(map(tuple, model.keypoints)) == sorted(map(tuple, blob_candidates))


def test_sift_fps_textureless_object_raises():
    plain = ProceduralObject("plain", "box", (0.1, 0.1, 0.1), Texture((0.5, 0.5, 0.5)))
    with pytest.raises(InsufficientSaliencyError):
        sift_fps_select(plain, 8, views=6)
