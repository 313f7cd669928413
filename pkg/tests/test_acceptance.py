"""End-to-end acceptance criteria. Each test prints one PASS/FAIL line."""
import csv
import time
from dataclasses import replace

import numpy as np
import pytest

from fuzz_corpus import corrupt, valid_corpus
from pose6d import io_formats as io
from pose6d.cli import main
from pose6d.errors import FormatError
from pose6d.fusion.gradcheck import run_suite
from pose6d.fusion.network import (FusionConfig, build_plan, cnn_branch, dense_features, downsample_xyz,
                                   forward, heads, init_params, pcn_branch)
from pose6d.geometry import PointCloud, RigidTransform, XyzMap, knn, make_rng, random_pose, rotation_angle
from pose6d.keypoints import fps
from pose6d.metrics import accuracy_at_threshold, add, add_auc, add_or_adds, add_s
from pose6d.rigid_fit import Correspondences, fit_pose
from pose6d.synth import blob_cube, corrupt_votes, default_spec, make_scene, make_scenes
from pose6d.voting import detect_and_fit


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'} {title}: {detail}")
        return passed
    return emit


def match_detections(bundle, dets):
    """Pair each ground-truth instance with the detection holding most of its points."""
    out = {}
    for det in dets:
        ids, counts = np.unique(bundle.votes.instance[det.member_indices], return_counts=True)
        iid = int(ids[np.argmax(counts)])
        if iid not in out:
            out[iid] = det
    return out


def test_criterion_01_rigid_fit_oracle(report):
    rng = make_rng(2024)
    cases = [(rng.normal(size=(8, 3)), random_pose(rng)) for _ in range(1000)]
    start = time.perf_counter()
    fits = [fit_pose(Correspondences(m, g.apply(m))) for m, g in cases]
    elapsed = time.perf_counter() - start
    rot = max(rotation_angle(f.r @ g.r.T) for f, (_, g) in zip(fits, cases))
    trans = max(np.linalg.norm(f.t - g.t) for f, (_, g) in zip(fits, cases))
    ok = rot < 1e-9 and trans < 1e-9 and elapsed < 1.0
    assert report(1, "rigid fit on 1000 noiseless poses", ok,
                  f"max rot err {rot:.2e} rad, max trans err {trans:.2e} m, {elapsed:.3f} s")


def brute_knn(q, ref, k):
    out = []
    for x in q:
        d = [sum((x[a] - r[a]) * (x[a] - r[a]) for a in range(3)) for r in ref]
        out.append(sorted(range(len(ref)), key=lambda i: (d[i], i))[:k])
    return np.array(out)


def brute_fps(pts, n, seed):
    chosen = [seed]
    while len(chosen) < n:
        best, best_d = None, -1.0
        for i, p in enumerate(pts):
            d = min(float(((p - pts[j]) ** 2).sum()) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def test_criterion_02_knn_fps_brute_force(report):
    rng = make_rng(7)
    knn_ok = fps_ok = 0
    for trial in range(200):
        n = int(rng.integers(1, 65))
        # half the instances live on a small integer grid to force exact ties
        ref = rng.integers(0, 3, (n, 3)).astype(float) if trial % 2 else rng.normal(size=(n, 3))
        q = rng.integers(0, 3, (5, 3)).astype(float) if trial % 2 else rng.normal(size=(5, 3))
        k = int(rng.integers(1, n + 1))
        knn_ok += np.array_equal(knn(q, ref, k), brute_knn(q, ref, k))
        m = int(rng.integers(1, n + 1))
        s = int(rng.integers(n))
        fps_ok += fps(ref, m, s).tolist() == brute_fps(ref, m, s)
    ok = knn_ok == 200 and fps_ok == 200
    assert report(2, "knn/fps vs O(N^2) oracles", ok, f"knn {knn_ok}/200, fps {fps_ok}/200")


def test_criterion_03_metric_identities(report):
    rng = make_rng(3)
    violations = 0
    for _ in range(1000):
        model = rng.normal(size=(int(rng.integers(1, 50)), 3))
        p, g = random_pose(rng), random_pose(rng)
        a, s = add(model, p, g), add_s(model, p, g)
        violations += not (0.0 <= s <= a)
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    flip = RigidTransform(np.diag([-1.0, -1.0, 1.0]), np.zeros(3))
    sym_add, sym_adds = add(pts, flip, RigidTransform.identity()), add_s(pts, flip, RigidTransform.identity())
    grid_err = 0.0
    steps = 10 ** 6
    for _ in range(5):
        d = rng.uniform(0, 0.15, int(rng.integers(1, 300)))
        t = (np.arange(steps) + 0.5) * (0.1 / steps)
        grid = (np.searchsorted(np.sort(d), t, side="right") / len(d)).mean()
        grid_err = max(grid_err, abs(add_auc(d, 0.1) - grid))
    ok = violations == 0 and abs(sym_add - 2.0) <= 1e-12 and abs(sym_adds) <= 1e-12 and grid_err < 1e-5
    assert report(3, "metric identities", ok,
                  f"{violations} ADD-S>ADD violations, fixture ADD={sym_add} ADD-S={sym_adds}, "
                  f"AUC vs grid {grid_err:.2e}")


def test_criterion_04_gradient_checks(report):
    start = time.perf_counter()
    results = run_suite((0, 1, 2, 3, 4))
    elapsed = time.perf_counter() - start
    per_op = max(r.max_rel_error for r in results if not r.name.startswith("forward"))
    e2e = max(r.max_rel_error for r in results if r.name.startswith("forward"))
    failed = [r.name for r in results if not r.passed]
    ok = not failed and per_op < 1e-5 and e2e < 1e-4 and elapsed < 30
    assert report(4, "finite-difference gradient checks (5 seeds)", ok,
                  f"{len(results)} checks, per-op max {per_op:.2e}, end-to-end max {e2e:.2e}, "
                  f"{elapsed:.1f} s, failed={failed}")


def test_criterion_05_noiseless_pipeline(report):
    spec = replace(default_spec(), num_scenes=10)
    bundles = make_scenes(spec, 5)
    worst_t = worst_r = 0.0
    dists, missed, counts = [], 0, []
    for b in bundles:
        counts.append(len(b.annotation.instances))
        matched = match_detections(b, detect_and_fit(b.votes, b.models))
        pts = {c: o.sample_surface(2000, 0).points for c, o in b.objects.items()}
        for inst in b.annotation.instances:
            det = matched.get(inst.instance_id)
            if det is None:
                missed += 1
                dists.append(np.inf)
                continue
            worst_t = max(worst_t, float(np.linalg.norm(det.pose.t - inst.pose.t)))
            worst_r = max(worst_r, rotation_angle(det.pose.r @ inst.pose.r.T))
            dists.append(add_or_adds(pts[inst.class_id], det.pose, inst.pose, inst.symmetric))
    auc = add_auc(dists)
    ok = (missed == 0 and worst_t < 1e-6 and worst_r < 1e-6 and auc == 1.0
          and all(2 <= c <= 3 for c in counts))
    assert report(5, "noiseless detect_and_fit on 10 scenes", ok,
                  f"{sum(counts)} instances, {missed} missed, max err {worst_t:.2e} m / {worst_r:.2e} rad, "
                  f"AUC {auc!r}")


def test_criterion_06_robust_voting(report):
    spec = default_spec()
    adds = []
    for seed in range(20):
        b = make_scene(spec, 1000 + seed)
        votes = corrupt_votes(b.votes, 0.005, 0.10, seed)
        matched = match_detections(b, detect_and_fit(votes, b.models))
        pts = {c: o.sample_surface(2000, 0).points for c, o in b.objects.items()}
        for inst in b.annotation.instances:
            det = matched.get(inst.instance_id)
            adds.append(np.inf if det is None else add(pts[inst.class_id], det.pose, inst.pose))
    median = float(np.median(adds))
    acc = accuracy_at_threshold(adds, 0.02)
    ok = median < 0.01 and acc >= 0.9
    assert report(6, "voting under 5 mm noise + 10% outliers (20 seeds)", ok,
                  f"{len(adds)} instances, median ADD {median * 1000:.2f} mm, accuracy@2cm {acc:.3f}")


def test_criterion_07_sift_fps_cli(report, tmp_path):
    centers = np.asarray(blob_cube().texture.blob_centers)
    lines, ok = [], True
    for seed in (0, 1, 2):
        ply, out = tmp_path / f"cube{seed}.ply", tmp_path / f"kp{seed}.json"
        code = main(["synth", "object", "--kind", "blob-cube", "--seed", str(seed), "-o", str(ply)])
        code = code or main(["keypoints", "select", "--mesh", str(ply), "--algo", "sift-fps", "--n", "8",
                             "--seed", str(seed), "-o", str(out)])
        if code:
            ok = False
            lines.append(f"seed {seed}: exit {code}")
            continue
        (model,) = io.read_keypoint_models_json(out.read_bytes()).values()
        d = np.linalg.norm(model.keypoints[:, None] - centers[None], axis=2)
        nearest = d.argmin(axis=1)
        worst = d.min(axis=1).max()
        good = len(model.keypoints) == 8 and worst < 5e-3 and len(set(nearest)) == 8
        ok &= good
        lines.append(f"seed {seed}: max {worst * 1000:.2f} mm, {len(set(nearest))} distinct blobs")
    assert report(7, "sift-fps on blob cube via CLI", ok, "; ".join(lines))


def test_criterion_08_downsample_divergence(report):
    xyz = np.zeros((2, 2, 3))
    xyz[:, 0, 2] = 1.0
    xyz[:, 1, 2] = 3.0
    m = XyzMap(xyz, np.ones((2, 2), dtype=bool))
    members = {tuple(p) for p in xyz.reshape(-1, 3)}
    mean_pt = tuple(float(v) for v in downsample_xyz(m, 2, "mean-kernel").xyz[0, 0])
    near_pt = tuple(float(v) for v in downsample_xyz(m, 2, "nearest").xyz[0, 0])
    ok = mean_pt[2] == 2.0 and mean_pt not in members and near_pt in members
    assert report(8, "depth-step cell: mean vs nearest", ok, f"mean-kernel {mean_pt}, nearest {near_pt}")


def _same(a, b):
    return np.array_equal(a.data, b.data)


def test_criterion_09_ablation_consistency(report, tiny_training_scenes):
    scene = tiny_training_scenes[0]
    checks = {}
    off = FusionConfig(enable_encode_fusion=False, enable_decode_fusion=False)
    params = init_params(FusionConfig(), 0)
    plan = build_plan(scene.frame, scene.points, off, 0)
    out = forward(scene.frame, scene.points, off, params, plan=plan)
    rgb = cnn_branch(scene.frame.rgb, params, off)
    pts = pcn_branch(scene.points, plan, params, off)
    sem, ctr, kp = heads(dense_features(rgb, pts, plan, params, off), params, off)
    checks["no-fusion = branches"] = (_same(out.semantic_logits, sem) and _same(out.center_offsets, ctr)
                                      and _same(out.keypoint_offsets, kp))

    def acts(cfg):
        return forward(scene.frame, scene.points, cfg, params).activations

    stages = ("enc1", "enc2", "dec1", "dec2")
    # p2r off: the CNN never reads point features, so r2p cannot reach it
    a, b = acts(FusionConfig(enable_p2r=False)), acts(FusionConfig(enable_p2r=False, enable_r2p=False))
    checks["r2p toggle, CNN pre (p2r off)"] = all(_same(a[f"cnn.{s}.pre"], b[f"cnn.{s}.pre"]) for s in stages)
    a, b = acts(FusionConfig(enable_r2p=False)), acts(FusionConfig(enable_r2p=False, enable_p2r=False))
    checks["p2r toggle, PCN pre (r2p off)"] = all(_same(a[f"pcn.{s}.pre"], b[f"pcn.{s}.pre"]) for s in stages)
    # both directions on: stages before r2p output can flow back through p2r
    a, b = acts(FusionConfig()), acts(FusionConfig(enable_r2p=False))
    checks["r2p toggle, CNN pre enc1/enc2 (p2r on)"] = all(
        _same(a[f"cnn.{s}.pre"], b[f"cnn.{s}.pre"]) for s in ("enc1", "enc2"))
    checks["r2p changes PCN post"] = not _same(a["pcn.enc1.post"], b["pcn.enc1.post"])
    ok = all(checks.values())
    assert report(9, "fusion ablation switches", ok, ", ".join(f"{k}: {v}" for k, v in checks.items()))


def test_criterion_10_toy_training(report, tmp_path):
    out = tmp_path / "trace.csv"
    start = time.perf_counter()
    code = main(["train-toy", "--steps", "200", "--lr", "0.05", "--scenes", "4", "--seed", "0", "-o", str(out)])
    elapsed = time.perf_counter() - start
    trace = [float(r["loss"]) for r in csv.DictReader(out.open())] if code == 0 else [np.nan]
    ratio = trace[-1] / trace[0]
    ok = code == 0 and len(trace) == 201 and ratio <= 0.5 and elapsed < 120
    assert report(10, "train-toy 200 steps, seed 0", ok,
                  f"loss {trace[0]:.4f} -> {trace[-1]:.4f} (ratio {ratio:.3f}), {elapsed:.1f} s")


def test_criterion_11_format_robustness(report):
    rng = make_rng(11)
    trips = []
    for _ in range(50):
        n = int(rng.integers(1, 40))
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        cloud = PointCloud(rng.normal(size=(n, 3)) * 10 ** rng.uniform(-3, 3), rng.uniform(size=(n, 3)), nrm)
        back = io.read_ply(io.write_ply(cloud))
        trips.append(np.all(np.abs(back.points - cloud.points) <= 1e-7 * np.abs(cloud.points)))
        img = rng.integers(0, 256, (int(rng.integers(1, 9)), int(rng.integers(1, 9)), 3), dtype=np.uint8)
        trips.append(io.write_ppm(io.read_ppm(io.write_ppm(img))) == io.write_ppm(img))
        lab = rng.integers(0, 65536, (3, 4))
        trips.append(io.write_pgm(io.read_pgm(io.write_pgm(lab))) == io.write_pgm(lab))
    depth = rng.uniform(0, 4, (64, 64)).astype(np.float32)
    trips.append(io.write_depth(io.read_depth(io.write_depth(depth))) == io.write_depth(depth))
    for _, data, reader in valid_corpus(0):
        reader(data)
    pose = random_pose(rng)
    back = io.read_pose_json(io.write_pose_json(pose))
    trips.append(np.array_equal(back.r, pose.r) and np.array_equal(back.t, pose.t))

    rejected = parsed = crashed = 0
    corpora = [valid_corpus(s) for s in range(3)]
    crashes = []
    for i in range(10 ** 4):
        name, data, reader = corpora[i % 3][i % len(corpora[0])]
        bad = corrupt(data, rng)
        try:
            reader(bad)
            parsed += 1
        except FormatError:
            rejected += 1
        except Exception as exc:  # noqa: BLE001 - any other exception is a crash
            crashed += 1
            crashes.append(f"{name}: {type(exc).__name__}")
    ok = all(trips) and crashed == 0
    assert report(11, "format round trips + 10^4 fuzzed corruptions", ok,
                  f"{sum(map(bool, trips))}/{len(trips)} round trips, {rejected} rejected, "
                  f"{parsed} still well-formed, {crashed} crashes {crashes[:3]}")
