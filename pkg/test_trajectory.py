import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hoiforge.config import ASSETS_DIR
from hoiforge.exceptions import ValidationError
from hoiforge.geometry import HandPose, ObjectPose, build_template_hand, load_obj
from hoiforge.trajectory import (
    Endpoints,
    PoseSequence,
    TrajectoryConfig,
    ease,
    interpolate_sequence,
    load_endpoints,
    load_pose_sequence,
    save_endpoints,
    save_pose_sequence,
    validate_sequence,
)


@pytest.fixture(scope="module")
def hand():
    return build_template_hand()


@pytest.fixture(scope="module")
def cube():
    return load_obj(ASSETS_DIR / "cube.obj")


@pytest.fixture(scope="module")
def toy():
    return load_endpoints(ASSETS_DIR / "endpoints.json")


def random_hand(seed):
    rng = np.random.default_rng(seed)
    return HandPose(rng.normal(0, 0.05, 3), rng.normal(0, 0.5, (16, 3)))


def test_easing_curves():
    s = np.linspace(0, 1, 11)
    np.testing.assert_allclose(ease(s, "linear"), s)
    smooth = ease(s, "smoothstep")
    assert smooth[0] == 0.0 and smooth[-1] == 1.0
    np.testing.assert_allclose(smooth + smooth[::-1], 1.0, atol=1e-12)
    with pytest.raises(ValidationError):
        ease(s, "cubic")


def test_config_validation():
    assert TrajectoryConfig().frame_count == 49
    with pytest.raises(ValidationError):
        TrajectoryConfig(contact_fraction=1.5)
    with pytest.raises(ValidationError):
        TrajectoryConfig(frame_count=1)
    with pytest.raises(ValidationError):
        TrajectoryConfig(easing="cubic")


def test_endpoints_are_exact(toy):
    seq = interpolate_sequence(toy.h0, toy.hT, toy.o0, toy.oT, TrajectoryConfig())
    assert len(seq) == 49
    first_hand, first_object = seq.frames[0]
    last_hand, _ = seq.frames[-1]
    assert np.array_equal(first_hand.as_vector(), toy.h0.as_vector())
    assert np.array_equal(last_hand.as_vector(), toy.hT.as_vector())
    assert np.array_equal(first_object.translation, toy.o0.translation)


def test_constant_endpoints_give_constant_sequence():
    pose = random_hand(1)
    obj = ObjectPose([0.1, 0.2, 0.3], [0.2, 0.0, 0.5])
    seq = interpolate_sequence(pose, pose, obj, None, TrajectoryConfig(frame_count=13))
    for hand_pose, object_pose in seq.frames:
        np.testing.assert_allclose(hand_pose.as_vector(), pose.as_vector(), atol=1e-12)
        np.testing.assert_allclose(object_pose.translation, obj.translation, atol=1e-12)
        np.testing.assert_allclose(object_pose.rotation, obj.rotation, atol=1e-12)


def test_time_reversal_symmetry():
    h0, hT = random_hand(2), random_hand(3)
    obj = ObjectPose.identity()
    cfg = TrajectoryConfig(frame_count=21)
    forward = interpolate_sequence(h0, hT, obj, obj, cfg)
    backward = interpolate_sequence(hT, h0, obj, obj, cfg).reversed()
    for a, b in zip(forward.hand_poses, backward.hand_poses):
        np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)
        np.testing.assert_allclose(a.rotations, b.rotations, atol=1e-9)


def test_smoothstep_starts_and_ends_at_rest():
    h0 = HandPose([0.0, 0.0, 0.5], np.zeros((16, 3)))
    hT = HandPose([0.1, 0.0, 0.5], np.zeros((16, 3)))
    seq = interpolate_sequence(h0, hT, ObjectPose.identity(), None, TrajectoryConfig())
    xs = np.array([p.translation[0] for p in seq.hand_poses])
    steps = np.diff(xs)
    assert steps[0] < 0.1 * steps.max()
    assert steps[-1] < 0.1 * steps.max()
    assert np.all(steps >= 0)


def test_object_screw_motion_after_contact():
    hand_pose = HandPose.identity()
    o0 = ObjectPose([0.0, 0.0, 0.0], [0.2, 0.0, 0.5])
    oT = ObjectPose([0.0, 0.0, 1.0], [0.3, 0.1, 0.5])
    cfg = TrajectoryConfig(frame_count=21, contact_fraction=0.5)
    seq = interpolate_sequence(hand_pose, hand_pose, o0, oT, cfg)
    objects = seq.object_poses
    for obj in objects[:11]:
        assert np.array_equal(obj.translation, o0.translation)
    assert np.array_equal(objects[-1].translation, oT.translation)
    assert np.array_equal(objects[-1].rotation, oT.rotation)
    assert 0.2 < objects[15].translation[0] < 0.3


def test_object_follows_wrist_after_contact():
    h0 = HandPose([0.0, 0.0, 0.5], np.zeros((16, 3)))
    hT = HandPose([0.1, 0.0, 0.5], np.zeros((16, 3)))
    o0 = ObjectPose([0.0, 0.0, 0.0], [0.2, 0.0, 0.5])
    seq = interpolate_sequence(h0, hT, o0, None, TrajectoryConfig(frame_count=21, contact_fraction=0.5))
    objects = seq.object_poses
    for obj in objects[:11]:
        np.testing.assert_allclose(obj.translation, o0.translation)
    # the object keeps its offset to the wrist from the contact frame on
    np.testing.assert_allclose(objects[-1].translation, [0.25, 0.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(objects[-1].rotation, 0.0, atol=1e-12)


def test_toy_sequence_passes_validation(hand, cube, toy):
    cfg = TrajectoryConfig()
    seq = interpolate_sequence(toy.h0, toy.hT, toy.o0, toy.oT, cfg, wrist_origin=hand.wrist)
    report = validate_sequence(seq, hand, cube, cfg, endpoints=toy)
    assert report.passed
    assert report.start_matches and report.end_matches
    assert report.max_penetration_mm == 0.0
    assert len(report.penetration_m) == 49
    assert report.max_joint_speed > 0
    assert report.to_dict()["pass"] is True


def test_penetrating_sequence_fails_validation(hand, cube):
    pose = HandPose.identity()
    inside = ObjectPose([0.0, 0.0, 0.0], [0.0, 0.09, 0.0])
    cfg = TrajectoryConfig(frame_count=5)
    seq = interpolate_sequence(pose, pose, inside, inside, cfg)
    report = validate_sequence(seq, hand, cube, cfg)
    assert not report.passed
    assert report.max_penetration_mm > 5.0


def test_endpoint_mismatch_is_flagged(hand, cube, toy):
    cfg = TrajectoryConfig(frame_count=5)
    seq = interpolate_sequence(toy.h0, toy.hT, toy.o0, toy.oT, cfg)
    other = Endpoints(toy.h0, random_hand(9), toy.o0)
    report = validate_sequence(seq, hand, cube, cfg, endpoints=other)
    assert report.start_matches
    assert not report.end_matches
    assert not report.passed


def test_pose_sequence_file(tmp_path, toy):
    seq = interpolate_sequence(toy.h0, toy.hT, toy.o0, None, TrajectoryConfig(frame_count=5))
    path = tmp_path / "sequence.json"
    save_pose_sequence(seq, path)
    data = json.loads(path.read_text())
    assert data["schema"] == 1 and data["fps"] == 30.0
    assert set(data["frames"][0]) == {"hand", "object"}
    loaded = load_pose_sequence(path)
    for (a, _), (b, _) in zip(seq.frames, loaded.frames):
        assert np.array_equal(a.as_vector(), b.as_vector())


def test_malformed_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError):
        load_endpoints(path)
    path.write_text(json.dumps({"schema": 1, "h0": {"trans": [0, 0, 0], "rots": []}}))
    with pytest.raises(ValidationError):
        load_endpoints(path)
    path.write_text(json.dumps({"schema": 2, "fps": 30, "frames": []}))
    with pytest.raises(ValidationError):
        load_pose_sequence(path)
    with pytest.raises(ValidationError):
        PoseSequence(((HandPose.identity(), ObjectPose.identity()),))


def test_linear_slerp_midpoint_is_half_the_angle():
    rotations = np.zeros((16, 3))
    rotations[6] = [0.0, 0.0, np.pi / 2]
    hT = HandPose(np.zeros(3), rotations)
    cfg = TrajectoryConfig(frame_count=5, easing="linear")
    seq = interpolate_sequence(HandPose.identity(), hT, ObjectPose.identity(), None, cfg)
    middle = seq.hand_poses[2].rotations
    np.testing.assert_allclose(middle[6], [0.0, 0.0, np.pi / 4], atol=1e-12)
    assert Rotation.from_rotvec(middle[6]).magnitude() == pytest.approx(np.pi / 4, abs=1e-12)
    np.testing.assert_allclose(np.delete(middle, 6, axis=0), 0.0, atol=1e-15)


def test_smoothstep_translation_follows_the_hermite_basis():
    h0 = HandPose(np.zeros(3), np.zeros((16, 3)))
    hT = HandPose([0.2, 0.0, 0.0], np.zeros((16, 3)))
    seq = interpolate_sequence(h0, hT, ObjectPose.identity(), None, TrajectoryConfig(frame_count=5))
    assert seq.hand_poses[2].translation[0] == pytest.approx(0.1, abs=1e-12)
    assert seq.hand_poses[1].translation[0] == pytest.approx(0.2 * (3 * 0.25**2 - 2 * 0.25**3), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_linear_translation_is_monotone(seed):
    h0, hT = random_hand(seed), random_hand(seed + 100)
    cfg = TrajectoryConfig(frame_count=17, easing="linear")
    seq = interpolate_sequence(h0, hT, ObjectPose.identity(), None, cfg)
    xyz = np.stack([pose.translation for pose in seq.hand_poses])
    steps = np.diff(xyz, axis=0) * np.sign(hT.translation - h0.translation)
    assert np.all(steps >= -1e-15)
    assert np.array_equal(xyz[0], h0.translation)
    assert np.array_equal(xyz[-1], hT.translation)


def test_endpoint_flags_are_unset_without_endpoints(hand, cube, toy):
    cfg = TrajectoryConfig(frame_count=5)
    seq = interpolate_sequence(toy.h0, toy.hT, toy.o0, toy.oT, cfg)
    report = validate_sequence(seq, hand, cube, cfg)
    assert report.start_matches is None and report.end_matches is None
    assert report.passed
    data = report.to_dict()
    assert data["start_matches"] is None and data["end_matches"] is None
    assert json.loads(json.dumps(data))["pass"] is True


def test_endpoints_file(tmp_path, toy):
    path = tmp_path / "endpoints.json"
    save_endpoints(toy, path)
    loaded = load_endpoints(path)
    assert np.array_equal(loaded.h0.as_vector(), toy.h0.as_vector())
    assert np.array_equal(loaded.hT.as_vector(), toy.hT.as_vector())
    assert np.array_equal(loaded.o0.translation, toy.o0.translation)
    assert (loaded.oT is None) == (toy.oT is None)
