import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from poseforge import skeleton as sk


# --- independent quaternion oracle -----------------------------------------


def quat_from_axis_angle(v):
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = v / angle
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_rotate(q, p):
    w, x, y, z = q
    qv = np.array([x, y, z])
    return p + 2.0 * np.cross(qv, np.cross(qv, p) + w * p)


# --- rodrigues --------------------------------------------------------------


def test_rodrigues_zero_is_identity():
    r = sk.rodrigues(torch.zeros(3, dtype=torch.float64))
    assert torch.equal(r, torch.eye(3, dtype=torch.float64))


def test_rodrigues_half_turn_about_z():
    r = sk.rodrigues(torch.tensor([0.0, 0.0, np.pi], dtype=torch.float64)).numpy()
    assert r[0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert r[1, 1] == pytest.approx(-1.0, abs=1e-12)
    assert r[2, 2] == pytest.approx(1.0, abs=1e-12)


def test_rodrigues_matches_quaternion_oracle(rng):
    vs = rng.normal(size=(1000, 3)) * rng.uniform(0, np.pi, size=(1000, 1))
    rots = sk.rodrigues(torch.from_numpy(vs)).numpy()
    basis = np.eye(3)
    for v, r in zip(vs, rots):
        q = quat_from_axis_angle(v)
        for e in basis:
            assert np.allclose(r @ e, quat_rotate(q, e), atol=1e-9)


def test_rodrigues_orthonormal_and_proper(rng):
    vs = rng.normal(size=(1000, 3)) * 2.0
    rots = sk.rodrigues(torch.from_numpy(vs)).numpy()
    eye = np.eye(3)
    for r in rots:
        assert np.allclose(r.T @ r, eye, atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_rodrigues_inverse_is_negation(rng):
    vs = rng.normal(size=(200, 3))
    r_pos = sk.rodrigues(torch.from_numpy(vs)).numpy()
    r_neg = sk.rodrigues(torch.from_numpy(-vs)).numpy()
    for a, b in zip(r_pos, r_neg):
        assert np.allclose(a @ b, np.eye(3), atol=1e-9)


def test_rodrigues_smooth_near_zero():
    v = torch.full((3,), 1e-9, dtype=torch.float64, requires_grad=True)
    r = sk.rodrigues(v)
    r.sum().backward()
    assert torch.isfinite(v.grad).all()


def test_axis_angle_matrix_round_trip(rng):
    vs = rng.normal(size=(200, 3))
    vs = vs / np.linalg.norm(vs, axis=1, keepdims=True) * rng.uniform(0.01, 3.1, size=(200, 1))
    rots = sk.rodrigues(torch.from_numpy(vs)).numpy()
    back = sk.axis_angle_from_matrix(rots)
    assert np.allclose(back, vs, atol=1e-8)


# --- wrapping and value types ----------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_wrap_axis_angle_preserves_rotation(comps):
    v = np.array(comps)
    w = sk.wrap_axis_angle(v)
    assert np.linalg.norm(w) <= np.pi + 1e-12
    r_orig = sk.rodrigues(torch.from_numpy(v)).numpy()
    r_wrap = sk.rodrigues(torch.from_numpy(w)).numpy()
    assert np.allclose(r_orig, r_wrap, atol=1e-9)


def test_pose_vector_canonicalizes(rng):
    raw = rng.normal(size=69) * 4.0
    pose = sk.PoseVector(raw)
    norms = np.linalg.norm(pose.theta.reshape(23, 3), axis=1)
    assert np.all(norms <= np.pi + 1e-12)
    assert np.allclose(
        sk.forward_kinematics_np(sk.load_skeleton(), pose.theta),
        sk.forward_kinematics_np(sk.load_skeleton(), raw),
        atol=1e-9,
    )


def test_pose_vector_rejects_bad_input():
    with pytest.raises(ValueError):
        sk.PoseVector(np.zeros(68))
    with pytest.raises(ValueError):
        sk.PoseVector(np.full(69, np.nan))


# --- skeleton definition ----------------------------------------------------


def test_parts_partition_non_root_joints(skel):
    seen = np.concatenate([skel.part_joints(p) for p in sk.PART_NAMES])
    assert sorted(seen.tolist()) == list(range(1, skel.joint_count))


def test_rest_offsets_mirror_symmetric(skel):
    for left, right in (("left_arm", "right_arm"), ("left_leg", "right_leg")):
        lo = skel.rest_offsets[skel.part_joints(left)]
        ro = skel.rest_offsets[skel.part_joints(right)]
        assert np.allclose(lo * [-1, 1, 1], ro)


def test_malformed_skeleton_rejected(tmp_path):
    bad = tmp_path / "skel.txt"
    bad.write_text("0 -1 0 0 0 -\n1 0 0.1 0 0 nosuchpart\n")
    with pytest.raises(ValueError):
        sk.load_skeleton(bad)


# --- forward kinematics -----------------------------------------------------


def test_fk_identity_pose_is_cumulative_offsets(skel):
    joints = sk.forward_kinematics_np(skel, np.zeros(69))
    expected = np.zeros((skel.joint_count, 3))
    for j in range(1, skel.joint_count):
        expected[j] = expected[skel.parent[j]] + skel.rest_offsets[j]
    assert np.allclose(joints, expected, atol=1e-12)


def test_fk_two_bone_chain_hand_oracle():
    # Chain 0 -> 1 -> 2 with unit +y offsets; rotating the middle joint by
    # pi/2 about x sends the end effector to (0, 1, 1).
    chain = sk.SkeletonDef(
        parent=np.array([-1, 0, 1] + [1] * 21),
        rest_offsets=np.vstack([[0, 0, 0], [0, 1, 0], [0, 1, 0], np.tile([0.0, 0.1, 0.0], (21, 1))]),
        part_of=np.array([-1] + [0] * 23),
    )
    theta = np.zeros(69)
    theta[0:3] = [np.pi / 2, 0.0, 0.0]  # joint 1 local rotation
    joints = sk.forward_kinematics_np(chain, theta)
    assert np.allclose(joints[1], [0, 1, 0], atol=1e-9)
    assert np.allclose(joints[2], [0, 1, 1], atol=1e-9)


def test_fk_preserves_bone_lengths(skel, rng):
    thetas = rng.uniform(-np.pi, np.pi, size=(1000, 69))
    joints = sk.forward_kinematics(skel, torch.from_numpy(thetas)).numpy()
    lengths = np.linalg.norm(joints[:, 1:] - joints[:, skel.parent[1:]], axis=-1)
    assert np.allclose(lengths, skel.bone_lengths, atol=1e-9)


# --- camera ----------------------------------------------------------------


def test_camera_identity_view(skel):
    e = sk.camera_extrinsics(torch.zeros(3, dtype=torch.float64), 2.5)
    assert np.allclose(sk.camera_center(e).numpy(), [0, 0, 2.5], atol=1e-12)
    origin_cam = (e @ torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64))[:3]
    assert np.allclose(origin_cam.numpy(), [0, 0, 2.5], atol=1e-12)


def test_camera_half_turn_about_vertical():
    # Hand evaluation: rodrigues((0, pi, 0)) maps (0, 0, r) to (0, 0, -r).
    e = sk.camera_extrinsics(torch.tensor([0.0, np.pi, 0.0], dtype=torch.float64), 2.5)
    assert np.allclose(sk.camera_center(e).numpy(), [0, 0, -2.5], atol=1e-9)


def test_camera_orbit_radius_constant(rng):
    ks = torch.from_numpy(rng.normal(size=(100, 3)))
    centers = sk.camera_center(sk.camera_extrinsics(ks, 2.5)).numpy()
    assert np.allclose(np.linalg.norm(centers, axis=1), 2.5, atol=1e-9)


def test_camera_rejects_bad_radius():
    with pytest.raises(ValueError):
        sk.camera_extrinsics(torch.zeros(3), 0.0)


def test_camera_looks_at_root(rng):
    ks = torch.from_numpy(rng.normal(size=(50, 3)))
    extr = sk.camera_extrinsics(ks, 2.5)
    origin = torch.zeros(50, 1, 3, dtype=torch.float64)
    cam = origin @ extr[:, :3, :3].transpose(-1, -2) + extr[:, :3, 3].unsqueeze(1)
    cam = cam[:, 0].numpy()
    # The world origin must project onto the optical axis, at depth radius.
    assert np.allclose(cam[:, :2], 0.0, atol=1e-9)
    assert np.allclose(cam[:, 2], 2.5, atol=1e-9)


def test_view_angles_round_trip(rng):
    for _ in range(50):
        elev = rng.uniform(-1.4, 1.4)
        az = rng.uniform(-np.pi, np.pi)
        k = sk.view_from_angles(elev, az, roll=rng.uniform(-3, 3))
        e2, a2 = sk.view_angles(k)
        assert e2 == pytest.approx(elev, abs=1e-9)
        assert a2 == pytest.approx(az, abs=1e-9)


# --- part split --------------------------------------------------------------


def test_split_parts_sizes_and_zeros(skel):
    parts = sk.split_parts(np.zeros(69), skel)
    assert sum(p.size for p in parts) == 69
    assert all(np.all(p == 0) for p in parts)


def test_split_parts_bookkeeping_identity(skel):
    # Encode each joint index into its own components; every sub-vector
    # must contain exactly its part's joint indices.
    theta = np.repeat(np.arange(1, 24), 3).astype(np.float64)
    for name, sub in zip(sk.PART_NAMES, sk.split_parts(theta, skel)):
        assert sorted(set(sub.tolist())) == sorted(skel.part_joints(name).tolist())


def test_split_merge_round_trip(skel, rng):
    theta = rng.normal(size=(5, 69))
    parts = sk.split_parts(theta, skel)
    assert np.array_equal(sk.merge_parts(parts, skel), theta)
    theta_t = torch.from_numpy(theta)
    parts_t = sk.split_parts(theta_t, skel)
    assert torch.equal(sk.merge_parts(parts_t, skel), theta_t)
