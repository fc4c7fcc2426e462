import json
import math

import numpy as np
import pytest

from duet.errors import DegenerateRotation, ShapeMismatch, TooShort
from duet.motion import (
    FeatureLayout,
    MotionSequence,
    derive_velocities_and_contacts,
    export_csv,
    from_tensor,
    load_motion_json,
    relative_to_world,
    root_trajectory,
    rot6d_to_matrix,
    save_motion_json,
    to_tensor,
    validate_motion,
    world_to_relative,
)


def static_pose(skeleton, frames=4):
    # template pose lifted so the lowest joint touches the ground
    pos = np.zeros((skeleton.joint_count, 3))
    for j in range(1, skeleton.joint_count):
        pos[j] = pos[skeleton.parents[j]] + skeleton.offsets[j]
    pos[:, 1] -= pos[:, 1].min()
    return np.repeat(pos[None], frames, axis=0)


class TestRotations:
    def test_identity(self):
        assert np.allclose(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3), atol=0)

    def test_quarter_turn_about_z(self):
        expected = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        assert np.allclose(rot6d_to_matrix([0, 1, 0, -1, 0, 0]), expected, atol=1e-15)

    def test_scale_invariant(self):
        assert np.allclose(rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3), atol=1e-15)

    def test_first_column_is_normalized_first_vector(self, rng):
        r = rng.standard_normal(6)
        m = rot6d_to_matrix(r)
        assert np.allclose(m[:, 0], r[:3] / np.linalg.norm(r[:3]), atol=1e-12)

    @pytest.mark.parametrize("bad", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1, 0, 0, -1, 0, 0], [1, 0, 0, 1, 1e-8, 0]])
    def test_degenerate(self, bad):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix(bad)


class TestDerive:
    def test_static_pose_all_contacts(self, skeleton):
        pos = static_pose(skeleton)
        for f in skeleton.foot_joint_ids:
            pos[:, f, 1] = 0.0
        m = derive_velocities_and_contacts(pos, skeleton, 0.01, 0.05)
        assert np.all(m.velocities == 0)
        assert np.all(m.contacts == 1)

    def test_translating_root_breaks_contact(self, skeleton):
        pos = static_pose(skeleton, 6)
        pos[:, :, 0] += 0.1 * np.arange(6)[:, None]
        m = derive_velocities_and_contacts(pos, skeleton, 0.01, 0.05)
        assert np.all(m.contacts == 0)

    def test_alternating_foot(self, skeleton):
        # left foot joints hold still for 8 frames, then slide for 8 frames
        frames = 32
        pos = static_pose(skeleton, frames)
        left = [skeleton.foot_joint_ids[0], skeleton.foot_joint_ids[2]]
        x = 0.0
        for i in range(1, frames):
            if (i // 8) % 2 == 1:
                x += 0.05
            pos[i, left, 0] += x
        m = derive_velocities_and_contacts(pos, skeleton)
        flag = m.contacts[:, 0]
        expected = np.array([0.0 if (i // 8) % 2 == 1 else 1.0 for i in range(frames)])
        assert np.array_equal(flag[1:], expected[1:])

    def test_too_short(self, skeleton):
        with pytest.raises(TooShort):
            derive_velocities_and_contacts(static_pose(skeleton, 1), skeleton)

    def test_output_validates(self, skeleton, rng):
        pos = static_pose(skeleton, 5) + rng.normal(0, 0.0, (5, 1, 3))
        m = derive_velocities_and_contacts(pos, skeleton)
        assert validate_motion(m, skeleton, 1e-6).ok


class TestRelativeToWorld:
    def test_zero_velocity_identity(self, rng):
        local = rng.standard_normal((4, 3, 3))
        out = relative_to_world(local, np.zeros((4, 2)), np.zeros(4))
        assert np.array_equal(out, local)

    def test_linear_accumulation(self):
        local = np.zeros((3, 1, 3))
        out = relative_to_world(local, np.tile([1.0, 0.0], (3, 1)), np.zeros(3))
        assert np.allclose(out[2, 0], [2, 0, 0], atol=1e-15)

    def test_two_quarter_turns(self):
        local = np.tile([[1.0, 0.0, 0.0]], (3, 1, 1))
        out = relative_to_world(local, np.zeros((3, 2)), np.full(3, math.pi / 2))
        assert np.allclose(out[2, 0], [-1, 0, 0], atol=1e-12)

    def test_frame_zero_is_local(self, rng):
        local = rng.standard_normal((5, 4, 3))
        out = relative_to_world(local, rng.standard_normal((5, 2)), rng.standard_normal(5))
        assert np.array_equal(out[0], local[0])

    def test_inverse(self, rng):
        local = rng.standard_normal((6, 4, 3))
        lin = rng.standard_normal((6, 2))
        yv = rng.uniform(-0.5, 0.5, 6)
        world = relative_to_world(local, lin, yv)
        yaw, trans = root_trajectory(lin, yv)
        back, lin2, yv2 = world_to_relative(world, yaw, trans)
        assert np.allclose(back, local, atol=1e-9)
        assert np.allclose(lin2[:-1], lin[:-1], atol=1e-9)
        assert np.allclose(yv2[:-1], yv[:-1], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            relative_to_world(np.zeros((3, 2, 3)), np.zeros((4, 2)), np.zeros(3))


class TestValidation:
    def test_corpus_sample_clean(self, small_corpus, skeleton):
        for s in small_corpus:
            assert validate_motion(s.person_a, skeleton).ok
            assert validate_motion(s.person_b, skeleton).ok

    def test_zeroed_velocities_flagged(self, small_corpus, skeleton):
        m = small_corpus[0].person_a
        bad = MotionSequence(m.positions, np.zeros_like(m.velocities), m.rotations_6d, m.contacts, m.frame_rate)
        assert "velocity" in validate_motion(bad, skeleton).kinds()

    def test_half_contact_flagged(self, small_corpus, skeleton):
        m = small_corpus[0].person_a
        c = np.array(m.contacts)
        c[2, 1] = 0.5
        bad = MotionSequence(m.positions, m.velocities, m.rotations_6d, c, m.frame_rate)
        report = validate_motion(bad, skeleton)
        assert report.kinds() == {"contact_binarity"}
        assert report.violations[0].frame == 2

    def test_does_not_mutate(self, small_corpus, skeleton):
        m = small_corpus[1].person_b
        before = to_tensor(m).copy()
        validate_motion(m, skeleton)
        assert np.array_equal(to_tensor(m), before)


class TestSerialization:
    def test_width(self):
        assert FeatureLayout(22).width == 268

    def test_tensor_roundtrip_bit_exact(self, small_corpus):
        m = small_corpus[0].person_a
        back = from_tensor(to_tensor(m), m.joint_count, m.frame_rate)
        for name in ("positions", "velocities", "rotations_6d", "contacts"):
            assert np.array_equal(getattr(back, name), getattr(m, name))

    def test_json_roundtrip(self, small_corpus, skeleton, tmp_path):
        m = small_corpus[2].person_b
        save_motion_json(tmp_path / "m.json", m, skeleton)
        back, skel = load_motion_json(tmp_path / "m.json")
        assert np.array_equal(to_tensor(back), to_tensor(m))
        assert skel == skeleton
        d = json.loads((tmp_path / "m.json").read_text())
        assert set(d) == {"frame_rate", "skeleton", "frames"}
        assert set(d["frames"][0]) == {"pos", "vel", "rot6d", "contacts"}

    def test_csv(self, small_corpus, tmp_path):
        m = small_corpus[0].person_a
        export_csv(m, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert len(lines) == m.frame_count + 1
        header = lines[0].split(",")
        assert len(header) == 268
        assert np.array_equal(np.array(lines[1].split(","), dtype=float), to_tensor(m)[0])
