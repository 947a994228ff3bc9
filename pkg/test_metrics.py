import json
import math
import random

import numpy as np
import pytest
from scipy.linalg import sqrtm
from scipy.spatial.transform import Rotation

from hoiforge.exceptions import (
    DegenerateError,
    EmptySetError,
    InsufficientSamplesError,
    LengthMismatchError,
    NotPSDError,
    ShapeError,
    ValidationError,
)
from hoiforge.metrics import (
    FeatureStats,
    JointSet,
    MetricsReport,
    feature_stats,
    frechet_distance,
    fscore,
    fscores,
    load_features,
    load_joints,
    motion_fidelity,
    mpjpe_root_aligned,
    pa_mpjpe,
    pa_mpvpe,
    procrustes_align,
    psnr,
    rank_and_filter,
    save_features,
    save_joints,
    ssim,
    track_correlation,
    video_psnr,
    video_ssim,
)
from hoiforge.raster import Tracklet


def random_tracks(rng, count, frames=49):
    return [Tracklet(np.cumsum(rng.normal(0, 3, (frames, 2)), axis=0) + 100) for _ in range(count)]


def random_rotation(rng):
    return Rotation.from_rotvec(rng.uniform(-np.pi, np.pi, 3)).as_matrix()


def brute_force_mf(gt_set, gen_set):
    def corr(a, b):
        va, vb = np.diff(a.points, axis=0), np.diff(b.points, axis=0)
        return sum(float(x @ y) / (math.hypot(*x) * math.hypot(*y)) for x, y in zip(va, vb)) / len(va)

    forward = sum(max(corr(g, t) for t in gt_set) for g in gen_set) / len(gen_set)
    backward = sum(max(corr(g, t) for g in gen_set) for t in gt_set) / len(gt_set)
    return forward + backward


def test_track_correlation_cases():
    track = Tracklet([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    other = Tracklet([[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]])
    assert track_correlation(track, other) == pytest.approx((1 + math.cos(math.pi / 4)) / 2, abs=1e-12)
    assert track_correlation(track, track) == pytest.approx(1.0, abs=1e-12)
    reversed_track = Tracklet(2 * track.points[0] - track.points)
    assert track_correlation(track, reversed_track) == pytest.approx(-1.0, abs=1e-12)


def test_static_displacements():
    still = np.zeros((3, 2))
    moving = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    assert track_correlation(still, still) == 1.0
    assert track_correlation(still, moving) == 0.0
    half = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert track_correlation(half, moving) == pytest.approx(0.5)


def test_track_correlation_errors():
    with pytest.raises(LengthMismatchError):
        track_correlation(np.zeros((4, 2)), np.zeros((5, 2)))
    with pytest.raises(ShapeError):
        track_correlation(np.zeros((1, 2)), np.zeros((1, 2)))


def test_motion_fidelity_of_a_set_with_itself():
    rng = np.random.default_rng(0)
    for _ in range(50):
        tracks = random_tracks(rng, int(rng.integers(5, 101)))
        assert motion_fidelity(tracks, tracks) == pytest.approx(2.0, abs=1e-9)


def test_motion_fidelity_of_reversed_motion():
    track = random_tracks(np.random.default_rng(1), 1)[0]
    reversed_track = Tracklet(2 * track.points[0] - track.points)
    assert motion_fidelity([track], [reversed_track]) == pytest.approx(-2.0, abs=1e-9)


def test_motion_fidelity_matches_pairwise_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n, m = rng.integers(1, 11, size=2)
        frames = int(rng.integers(2, 12))
        gt, gen = random_tracks(rng, n, frames), random_tracks(rng, m, frames)
        assert motion_fidelity(gt, gen) == pytest.approx(brute_force_mf(gt, gen), abs=1e-12)


def test_motion_fidelity_errors():
    tracks = random_tracks(np.random.default_rng(3), 2)
    with pytest.raises(EmptySetError):
        motion_fidelity([], tracks)
    with pytest.raises(LengthMismatchError):
        motion_fidelity(tracks, random_tracks(np.random.default_rng(4), 2, frames=10))


def test_mpjpe_root_aligned():
    rng = np.random.default_rng(5)
    gt = rng.normal(0, 40, (21, 3))
    assert mpjpe_root_aligned(gt, gt) == 0.0
    assert mpjpe_root_aligned(gt + [7.0, -3.0, 2.0], gt) == pytest.approx(0.0, abs=1e-12)
    pred = gt.copy()
    pred[6] += [3.0, 4.0, 0.0]
    assert mpjpe_root_aligned(JointSet(pred, "predicted"), JointSet(gt)) == pytest.approx(5 / 21, abs=1e-12)


def test_mpjpe_accepts_frame_stacks():
    rng = np.random.default_rng(6)
    gt = rng.normal(0, 40, (4, 21, 3))
    pred = gt.copy()
    pred[:, 10] += [0.0, 0.0, 21.0]
    assert mpjpe_root_aligned(pred, gt) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        mpjpe_root_aligned(pred[:, :20], gt[:, :20])


def test_joint_set_validation():
    with pytest.raises(ShapeError):
        JointSet(np.zeros((20, 3)))
    with pytest.raises(ValidationError):
        JointSet(np.zeros((21, 3)), role="guess")


def test_procrustes_identity():
    x = np.random.default_rng(7).normal(size=(10, 3))
    transform = procrustes_align(x, x)
    assert transform.scale == pytest.approx(1.0)
    np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(transform.translation, 0.0, atol=1e-12)


def test_procrustes_recovers_similarity():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.normal(size=(21, 3))
        r0 = random_rotation(rng)
        t0 = rng.normal(size=3)
        transform = procrustes_align(x, 2.0 * x @ r0.T + t0)
        assert transform.scale == pytest.approx(2.0, abs=1e-9)
        np.testing.assert_allclose(transform.rotation, r0, atol=1e-9)
        np.testing.assert_allclose(transform.translation, t0, atol=1e-9)

        rigid = procrustes_align(x, x @ r0.T + t0, with_scale=False)
        assert rigid.scale == 1.0
        np.testing.assert_allclose(rigid.rotation, r0, atol=1e-9)
        np.testing.assert_allclose(rigid.translation, t0, atol=1e-9)


def test_procrustes_never_reflects():
    x = np.random.default_rng(9).normal(size=(12, 3))
    mirrored = x * [1.0, 1.0, -1.0]
    rotation = procrustes_align(x, mirrored).rotation
    assert np.linalg.det(rotation) == pytest.approx(1.0)


def test_procrustes_result_is_a_least_squares_minimum():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(21, 3))
    y = 1.3 * x @ random_rotation(rng).T + 0.5 + rng.normal(0, 0.05, (21, 3))
    best = procrustes_align(x, y)

    def objective(scale, rotation, translation):
        return float(((scale * x @ rotation.T + translation - y) ** 2).sum())

    found = objective(best.scale, best.rotation, best.translation)
    for _ in range(1000):
        wiggle = Rotation.from_rotvec(rng.normal(0, 1e-3, 3)).as_matrix()
        other = objective(
            best.scale * (1 + rng.normal(0, 1e-3)), wiggle @ best.rotation, best.translation + rng.normal(0, 1e-3, 3)
        )
        assert found <= other + 1e-12


def test_procrustes_errors():
    with pytest.raises(DegenerateError):
        procrustes_align(np.ones((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))
    with pytest.raises(ShapeError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))


def test_pa_errors_ignore_similarity_transforms():
    rng = np.random.default_rng(11)
    for _ in range(100):
        gt = rng.normal(0, 50, (21, 3))
        scale = rng.uniform(0.5, 2.0)
        pred = scale * gt @ random_rotation(rng).T + rng.normal(0, 100, 3)
        assert pa_mpjpe(pred, gt) <= 1e-6
    vertices = rng.normal(0, 50, (200, 3))
    assert pa_mpvpe(vertices, vertices) == pytest.approx(0.0, abs=1e-9)


def test_pa_error_equals_aligned_distance():
    rng = np.random.default_rng(12)
    gt = rng.normal(0, 50, (21, 3))
    pred = gt + rng.normal(0, 5, (21, 3))
    aligned = procrustes_align(pred, gt).apply(pred)
    assert pa_mpjpe(pred, gt) == pytest.approx(np.linalg.norm(aligned - gt, axis=1).mean(), abs=1e-12)
    stacked = pa_mpjpe(np.stack([pred, gt]), np.stack([gt, gt]))
    assert stacked == pytest.approx(pa_mpjpe(pred, gt) / 2, abs=1e-9)


def test_fscore_cases():
    points = np.random.default_rng(13).normal(0, 10, (30, 3))
    assert fscore(points, points, 0.1) == 1.0
    assert fscore(points, points + 1000.0, 15.0) == 0.0

    pred = [[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]
    gt = [[3.0, 0.0, 0.0], [100.0, 20.0, 0.0]]
    assert fscore(pred, gt, 5.0) == pytest.approx(0.5)
    assert fscores(pred, gt) == {5.0: pytest.approx(0.5), 15.0: pytest.approx(0.5)}
    assert fscore(pred, gt, 25.0) == 1.0


def test_fscore_is_symmetric():
    rng = np.random.default_rng(14)
    a, b = rng.normal(0, 10, (40, 3)), rng.normal(0, 10, (25, 3))
    for threshold in (1.0, 5.0, 15.0):
        assert fscore(a, b, threshold) == pytest.approx(fscore(b, a, threshold), abs=1e-15)


def test_fscore_errors():
    with pytest.raises(EmptySetError):
        fscore(np.zeros((0, 3)), np.zeros((3, 3)), 5.0)
    with pytest.raises(ValidationError):
        fscore(np.zeros((3, 3)), np.zeros((3, 3)), 0.0)


def test_psnr():
    image = np.random.default_rng(15).integers(0, 256, (16, 16)).astype(np.uint8)
    assert psnr(image, image) == 100.0
    changed = image.astype(np.float64)
    changed[4, 4] += 255.0
    assert psnr(image, changed) == pytest.approx(10 * math.log10(256), abs=1e-9)
    assert psnr(np.zeros((16, 16)), np.full((16, 16), 255.0)) == pytest.approx(0.0)
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_of_an_image_with_itself_is_one():
    rng = np.random.default_rng(16)
    gray = rng.integers(0, 256, (24, 32)).astype(np.uint8)
    color = rng.integers(0, 256, (24, 32, 3)).astype(np.uint8)
    assert ssim(gray, gray) == 1.0
    assert ssim(color, color) == 1.0


def test_ssim_of_opposite_constant_images():
    dark, bright = np.zeros((32, 32)), np.full((32, 32), 255.0)
    c1 = (0.01 * 255) ** 2
    assert ssim(dark, bright) == pytest.approx(c1 / (255.0 ** 2 + c1), rel=1e-6)


def test_ssim_drops_with_noise_and_rejects_tiny_images():
    rng = np.random.default_rng(17)
    image = rng.integers(0, 256, (32, 32)).astype(np.float64)
    noisy = np.clip(image + rng.normal(0, 80, image.shape), 0, 255)
    assert -1.0 <= ssim(image, noisy) < 0.8
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))


def test_video_metrics_average_frames():
    rng = np.random.default_rng(18)
    frames = [rng.integers(0, 256, (16, 16, 3)).astype(np.uint8) for _ in range(3)]
    assert video_psnr(frames, frames) == 100.0
    assert video_ssim(frames, frames) == 1.0
    with pytest.raises(ShapeError):
        video_psnr(frames, frames[:2])


def test_feature_stats():
    stats = feature_stats([[0.0], [2.0]])
    assert stats.mean.tolist() == [1.0]
    assert stats.cov.tolist() == [[2.0]]
    assert not feature_stats([[1.0, 2.0], [1.0, 2.0]]).cov.any()
    with pytest.raises(InsufficientSamplesError):
        feature_stats([[1.0, 2.0]])


def test_feature_stats_match_two_pass_oracle():
    features = np.random.default_rng(19).normal(size=(100, 4))
    stats = feature_stats(features)
    n, d = features.shape
    mean = [sum(features[i, j] for i in range(n)) / n for j in range(d)]
    cov = np.empty((d, d))
    for j in range(d):
        for k in range(d):
            cov[j, k] = sum((features[i, j] - mean[j]) * (features[i, k] - mean[k]) for i in range(n)) / (n - 1)
    np.testing.assert_allclose(stats.mean, mean, atol=1e-9)
    np.testing.assert_allclose(stats.cov, cov, atol=1e-9)


def test_frechet_distance_scalar_case():
    assert frechet_distance(FeatureStats([0.0], [[1.0]]), FeatureStats([1.0], [[1.0]])) == pytest.approx(1.0, abs=1e-12)
    same = FeatureStats([0.5, 1.0], [[2.0, 0.3], [0.3, 1.0]])
    assert frechet_distance(same, same) == 0.0


def random_stats(rng, dim):
    m = rng.normal(size=(dim, dim + 2))
    return FeatureStats(rng.normal(size=dim), m @ m.T / dim)


def test_frechet_distance_symmetry_and_sign():
    rng = np.random.default_rng(20)
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        a, b = random_stats(rng, dim), random_stats(rng, dim)
        forward, backward = frechet_distance(a, b), frechet_distance(b, a)
        assert forward >= 0.0
        assert forward == pytest.approx(backward, abs=1e-9)


def test_frechet_distance_matches_matrix_square_root():
    rng = np.random.default_rng(21)
    for _ in range(10):
        a, b = random_stats(rng, 3), random_stats(rng, 3)
        diff = a.mean - b.mean
        trace_root = np.trace(sqrtm(a.cov @ b.cov)).real
        expected = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * trace_root
        assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-7, abs=1e-9)


def test_frechet_distance_errors():
    with pytest.raises(NotPSDError):
        frechet_distance(FeatureStats([0.0, 0.0], np.diag([1.0, -1.0])), FeatureStats([0.0, 0.0], np.eye(2)))
    with pytest.raises(ShapeError):
        frechet_distance(FeatureStats([0.0], [[1.0]]), FeatureStats([0.0, 0.0], np.eye(2)))
    with pytest.raises(ValidationError):
        FeatureStats([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_filter_keeps_best_candidates():
    candidates = [(f"clip-{i:02d}", float(e)) for i, e in enumerate(np.random.default_rng(22).permutation(30))]
    kept = rank_and_filter(candidates, 0.25)
    assert len(kept) == 23
    worst = {cid for cid, error in candidates if error >= 23}
    assert not worst & set(kept)

    assert rank_and_filter([("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)], 0.25) == ["a", "b", "c"]
    assert rank_and_filter([("only", 9.0)], 0.25) == ["only"]
    assert sorted(rank_and_filter(candidates, 0.0)) == sorted(cid for cid, _ in candidates)


def test_filter_ignores_input_order():
    candidates = [(i, float(i % 5)) for i in range(20)]
    shuffled = candidates[:]
    random.Random(0).shuffle(shuffled)
    assert rank_and_filter(candidates, 0.3) == rank_and_filter(shuffled, 0.3)
    # equal errors fall back to id order
    assert rank_and_filter([(3, 1.0), (1, 1.0), (2, 1.0)], 0.34) == [1, 2]


def test_filter_validation():
    with pytest.raises(ValidationError):
        rank_and_filter([("a", 1.0)], 1.0)
    with pytest.raises(ValidationError):
        rank_and_filter([("a", 1.0), ("a", 2.0)], 0.0)
    with pytest.raises(ValidationError):
        rank_and_filter([("a", float("nan"))], 0.0)


def test_metrics_report_layout(tmp_path):
    report = MetricsReport(
        metrics={"mf": 2.0, "psnr": 100.0, "mpjpe_mm": 0.0},
        fscore_at={5.0: 1.0, 15.0: 1.0},
        counts={"clips": 2, "frames": 18, "tracks": 40},
        skipped=["fvd_core", "pa_mpvpe_mm"],
    )
    path = tmp_path / "report.json"
    report.save(path)
    data = json.loads(path.read_text())
    assert data["schema"] == 1
    assert data["mf"] == 2.0 and "ssim" not in data
    assert data["fscore_at"] == {"5": 1.0, "15": 1.0}
    assert data["counts"]["clips"] == 2
    assert data["skipped"] == ["fvd_core", "pa_mpvpe_mm"]
    assert "created_at" in data["metadata"]


def test_metrics_report_ranges():
    with pytest.raises(ValidationError):
        MetricsReport(metrics={"mf": 2.5})
    with pytest.raises(ValidationError):
        MetricsReport(metrics={"psnr": -1.0})
    with pytest.raises(ValidationError):
        MetricsReport(metrics={"lpips": 0.1})
    with pytest.raises(ValidationError):
        MetricsReport(fscore_at={5.0: 1.2})


def test_joint_and_feature_files(tmp_path):
    joints = np.random.default_rng(23).normal(0, 40, (3, 21, 3))
    save_joints(joints, tmp_path / "joints.json", role="predicted")
    assert json.loads((tmp_path / "joints.json").read_text())["units"] == "mm"
    np.testing.assert_allclose(load_joints(tmp_path / "joints.json"), joints)

    (tmp_path / "metres.json").write_text(json.dumps({"units": "m", "frames": joints.tolist()}))
    with pytest.raises(ValidationError):
        load_joints(tmp_path / "metres.json")

    features = np.random.default_rng(24).normal(size=(6, 5))
    save_features(features, tmp_path / "features.f32")
    assert json.loads((tmp_path / "features.json").read_text()) == {"n": 6, "d": 5}
    np.testing.assert_allclose(load_features(tmp_path / "features.f32"), features, rtol=1e-6)
