"""Motion representation: skeleton, 6D rotations, feature tensors, file formats.

Coordinates are y-up with the ground on the x/z plane. A person in the template
pose faces +z with their left side toward +x.

Per-frame feature layout (the "motion tensor"), for ``J`` joints::

    [ world positions (3J) | world velocities (3J) | local 6D rotations (6J) | foot contacts (4) ]

which is 268 wide for the default 22-joint skeleton.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateRotation, ShapeMismatch, TooShort

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)

_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# parent-relative joint offsets of the rest pose, meters
_OFFSETS = (
    (0.0, 0.92, 0.0),
    (0.09, -0.08, 0.0), (-0.09, -0.08, 0.0), (0.0, 0.11, 0.0),
    (0.0, -0.40, 0.0), (0.0, -0.40, 0.0), (0.0, 0.13, 0.0),
    (0.0, -0.40, 0.0), (0.0, -0.40, 0.0), (0.0, 0.06, 0.0),
    (0.0, -0.03, 0.12), (0.0, -0.03, 0.12), (0.0, 0.21, 0.0),
    (0.07, 0.12, 0.0), (-0.07, 0.12, 0.0), (0.0, 0.12, 0.03),
    (0.12, 0.03, 0.0), (-0.12, 0.03, 0.0),
    (0.02, -0.27, 0.0), (-0.02, -0.27, 0.0),
    (0.0, -0.25, 0.0), (0.0, -0.25, 0.0),
)


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree with a rest pose.

    ``offsets[0]`` is the rest-pose root position; every other row is the
    joint's offset from its parent, so ``template_bone_lengths`` are the norms
    of ``offsets[1:]``.
    """

    parents: tuple[int, ...]
    offsets: np.ndarray
    foot_joint_ids: tuple[int, int, int, int]
    joint_names: tuple[str, ...] = ()

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        n = len(self.parents)
        if offsets.shape != (n, 3):
            raise ShapeMismatch(f"offsets must be ({n}, 3), got {offsets.shape}")
        if self.parents[0] != -1 or any(p < 0 or p >= i for i, p in enumerate(self.parents) if i):
            raise ValueError("parents must describe a tree rooted at joint 0 in topological order")
        if len(self.foot_joint_ids) != 4:
            raise ValueError("exactly 4 foot joints are required")
        if np.any(self.template_bone_lengths <= 0):
            raise ValueError("template bone lengths must be positive")

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (
            self.parents == other.parents
            and self.foot_joint_ids == other.foot_joint_ids
            and self.joint_names == other.joint_names
            and np.array_equal(self.offsets, other.offsets)
        )

    def __hash__(self):
        return hash((self.parents, self.foot_joint_ids, self.joint_names, self.offsets.tobytes()))

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def bone_children(self) -> np.ndarray:
        return np.arange(1, self.joint_count)

    @property
    def bone_parents(self) -> np.ndarray:
        return np.asarray(self.parents[1:])

    @property
    def template_bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets[1:], axis=-1)

    @property
    def layout(self) -> "FeatureLayout":
        return FeatureLayout(self.joint_count)

    def to_dict(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "foot_joint_ids": list(self.foot_joint_ids),
            "joint_names": list(self.joint_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(
            parents=tuple(int(p) for p in d["parents"]),
            offsets=np.asarray(d["offsets"], dtype=np.float64),
            foot_joint_ids=tuple(int(i) for i in d["foot_joint_ids"]),
            joint_names=tuple(d.get("joint_names", ())),
        )


def default_skeleton() -> Skeleton:
    """22-joint body; feet are (left heel, left toe, right heel, right toe)."""
    return Skeleton(_PARENTS, np.array(_OFFSETS), (7, 10, 8, 11), JOINT_NAMES)


@dataclass(frozen=True)
class FeatureLayout:
    joint_count: int

    @property
    def pos(self) -> slice:
        return slice(0, 3 * self.joint_count)

    @property
    def vel(self) -> slice:
        return slice(3 * self.joint_count, 6 * self.joint_count)

    @property
    def rot(self) -> slice:
        return slice(6 * self.joint_count, 12 * self.joint_count)

    @property
    def contacts(self) -> slice:
        return slice(12 * self.joint_count, 12 * self.joint_count + 4)

    @property
    def width(self) -> int:
        return 12 * self.joint_count + 4

    def column_names(self) -> list[str]:
        j = range(self.joint_count)
        names = [f"pos_{i}_{c}" for i in j for c in "xyz"]
        names += [f"vel_{i}_{c}" for i in j for c in "xyz"]
        names += [f"rot6d_{i}_{k}" for i in j for k in range(6)]
        names += [f"contact_{k}" for k in range(4)]
        return names


def feature_width(joint_count: int = 22) -> int:
    return FeatureLayout(joint_count).width


@dataclass(frozen=True)
class MotionFrame:
    positions_world: np.ndarray
    velocities_world: np.ndarray
    rotations_6d: np.ndarray
    foot_contacts: np.ndarray


@dataclass(frozen=True)
class MotionSequence:
    """One person's motion, stored as per-frame arrays.

    Arrays are ``(F, J, 3)`` positions and velocities, ``(F, J, 6)`` rotations
    and ``(F, 4)`` contacts.
    """

    positions: np.ndarray
    velocities: np.ndarray
    rotations_6d: np.ndarray
    contacts: np.ndarray
    frame_rate: float = 10.0

    def __post_init__(self):
        for name in ("positions", "velocities", "rotations_6d", "contacts"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        f, j = self.positions.shape[:2]
        if (
            self.positions.shape != (f, j, 3)
            or self.velocities.shape != (f, j, 3)
            or self.rotations_6d.shape != (f, j, 6)
            or self.contacts.shape != (f, 4)
        ):
            raise ShapeMismatch("inconsistent per-frame array shapes")

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def joint_count(self) -> int:
        return self.positions.shape[1]

    @property
    def frames(self) -> list[MotionFrame]:
        return list(iter(self))

    def __iter__(self) -> Iterator[MotionFrame]:
        for i in range(self.frame_count):
            yield MotionFrame(self.positions[i], self.velocities[i], self.rotations_6d[i], self.contacts[i])

    def __len__(self) -> int:
        return self.frame_count


# --------------------------------------------------------------------------
# rotations
# --------------------------------------------------------------------------

def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt a 6D rotation (two stacked 3-vectors) into a rotation matrix.

    Works on ``(..., 6)`` input. The first column of the result is the
    normalized first 3-vector.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ShapeMismatch(f"expected trailing dimension 6, got {r.shape}")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(a2, axis=-1, keepdims=True)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise DegenerateRotation("6D rotation has a zero vector")
    cross = np.linalg.norm(np.cross(a1, a2), axis=-1, keepdims=True)
    angle = np.arctan2(cross, np.sum(a1 * a2, axis=-1, keepdims=True))
    if np.any(angle <= 1e-6) or np.any(np.pi - angle <= 1e-6):
        raise DegenerateRotation("6D rotation vectors are parallel")
    b1 = a1 / n1
    b2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = b2 / np.linalg.norm(b2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def yaw_matrix(theta) -> np.ndarray:
    """Rotation about +y, ``(...,)`` angles to ``(..., 3, 3)``."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(theta), np.ones_like(theta)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2
    )


def axis_angle_to_matrix(aa) -> np.ndarray:
    """Rodrigues formula on ``(..., 3)`` axis-angle vectors."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    safe = np.where(theta > 1e-12, theta, 1.0)
    k = aa / safe[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    kmat = np.stack(
        [np.stack([zero, -kz, ky], -1), np.stack([kz, zero, -kx], -1), np.stack([-ky, kx, zero], -1)], -2
    )
    s = np.sin(theta)[..., None, None]
    c = (1 - np.cos(theta))[..., None, None]
    eye = np.broadcast_to(np.eye(3), kmat.shape)
    out = eye + s * kmat + c * (kmat @ kmat)
    return np.where((theta > 1e-12)[..., None, None], out, eye)


def forward_kinematics(local_rot: np.ndarray, root_pos: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """World joint positions from parent-frame rotations ``(F, J, 3, 3)`` and root positions ``(F, 3)``."""
    f, j = local_rot.shape[:2]
    glob = np.empty_like(local_rot)
    pos = np.empty((f, j, 3))
    glob[:, 0] = local_rot[:, 0]
    pos[:, 0] = root_pos
    for i in range(1, j):
        p = skeleton.parents[i]
        glob[:, i] = glob[:, p] @ local_rot[:, i]
        pos[:, i] = pos[:, p] + glob[:, p] @ skeleton.offsets[i]
    return pos


# --------------------------------------------------------------------------
# derived features
# --------------------------------------------------------------------------

def first_differences(positions: np.ndarray) -> np.ndarray:
    """Per-frame velocities; frame 0 copies frame 1."""
    vel = np.empty_like(positions)
    vel[1:] = positions[1:] - positions[:-1]
    vel[0] = vel[1]
    return vel


def derive_velocities_and_contacts(
    positions,
    skeleton: Skeleton,
    contact_vel_threshold: float = 0.01,
    contact_height_threshold: float = 0.05,
    rotations_6d=None,
    frame_rate: float = 10.0,
) -> MotionSequence:
    """Build a full sequence from world positions.

    A foot joint is in contact when its speed is below
    ``contact_vel_threshold`` (m/frame) and its height below
    ``contact_height_threshold`` (m). Rotations default to identity.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[2] != 3 or positions.shape[1] != skeleton.joint_count:
        raise ShapeMismatch(f"positions must be (F, {skeleton.joint_count}, 3), got {positions.shape}")
    if positions.shape[0] < 2:
        raise TooShort("at least 2 frames are required")
    vel = first_differences(positions)
    feet = list(skeleton.foot_joint_ids)
    speed = np.linalg.norm(vel[:, feet], axis=-1)
    height = positions[:, feet, 1]
    contacts = ((speed < contact_vel_threshold) & (height < contact_height_threshold)).astype(np.float64)
    if rotations_6d is None:
        rotations_6d = np.tile(np.array([1.0, 0, 0, 0, 1, 0]), positions.shape[:2] + (1,))
    return MotionSequence(positions, vel, rotations_6d, contacts, frame_rate)


def root_trajectory(root_linear_vel, root_yaw_vel):
    """Heading angle ``(F,)`` and ground offset ``(F, 2)`` integrated from frame 0."""
    lin = np.asarray(root_linear_vel, dtype=np.float64)
    yv = np.asarray(root_yaw_vel, dtype=np.float64).reshape(-1)
    if lin.ndim != 2 or lin.shape[1] != 2 or yv.shape[0] != lin.shape[0]:
        raise ShapeMismatch("root velocities must be (F, 2) and (F,) / (F, 1)")
    return kernels.integrate_root(lin, yv)


def relative_to_world(local_positions, root_linear_vel, root_yaw_vel) -> np.ndarray:
    """Place root-relative poses in the world by integrating root velocities.

    The linear velocity of frame ``i`` is expressed in the heading frame of
    frame ``i`` and moves the root between frames ``i`` and ``i + 1``.
    """
    local = np.asarray(local_positions, dtype=np.float64)
    lin = np.asarray(root_linear_vel, dtype=np.float64)
    yv = np.asarray(root_yaw_vel, dtype=np.float64).reshape(-1)
    if local.ndim != 3 or local.shape[-1] != 3 or lin.shape[0] != local.shape[0] or yv.shape[0] != local.shape[0]:
        raise ShapeMismatch("frame counts or trailing dimensions disagree")
    if not (np.all(np.isfinite(local)) and np.all(np.isfinite(lin)) and np.all(np.isfinite(yv))):
        raise ValueError("inputs must be finite")
    yaw, trans = root_trajectory(lin, yv)
    world = np.einsum("fij,fkj->fki", yaw_matrix(yaw), local)
    world[..., 0] += trans[:, None, 0]
    world[..., 2] += trans[:, None, 1]
    return world


def world_to_relative(world_positions, yaw, trans):
    """Inverse of :func:`relative_to_world` given the integrated root trajectory.

    Returns ``(local_positions, root_linear_vel, root_yaw_vel)``; the last
    frame's velocities are not observable and are copied from the previous frame.
    """
    world = np.array(world_positions, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    world[..., 0] -= trans[:, None, 0]
    world[..., 2] -= trans[:, None, 1]
    local = np.einsum("fji,fkj->fki", yaw_matrix(yaw), world)
    f = world.shape[0]
    yaw_vel = np.zeros(f)
    lin = np.zeros((f, 2))
    if f > 1:
        yaw_vel[:-1] = np.diff(yaw)
        step = np.diff(trans, axis=0)
        c, s = np.cos(yaw[:-1]), np.sin(yaw[:-1])
        lin[:-1, 0] = c * step[:, 0] - s * step[:, 1]
        lin[:-1, 1] = s * step[:, 0] + c * step[:, 1]
        yaw_vel[-1] = yaw_vel[-2]
        lin[-1] = lin[-2]
    return local, lin, yaw_vel


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    frame: int
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __bool__(self) -> bool:
        return self.ok


def validate_motion(m: MotionSequence, skeleton: Skeleton, tol: float = 1e-6) -> ValidationReport:
    """Report every invariant a sequence breaks. Never raises, never mutates."""
    report = ValidationReport()
    add = report.violations.append
    if m.joint_count != skeleton.joint_count:
        add(Violation("shape", -1, f"{m.joint_count} joints, skeleton has {skeleton.joint_count}"))
        return report
    if m.frame_count < 2:
        add(Violation("too_short", -1, f"{m.frame_count} frames"))
    for name in ("positions", "velocities", "rotations_6d", "contacts"):
        bad = ~np.all(np.isfinite(getattr(m, name)).reshape(m.frame_count, -1), axis=1)
        for i in np.nonzero(bad)[0]:
            add(Violation("non_finite", int(i), name))
    if m.frame_count >= 2:
        expected = first_differences(m.positions)
        err = np.abs(m.velocities - expected).reshape(m.frame_count, -1).max(axis=1)
        for i in np.nonzero(err > tol)[0]:
            add(Violation("velocity", int(i), f"max deviation {err[i]:.3g}"))
    a1, a2 = m.rotations_6d[..., :3], m.rotations_6d[..., 3:]
    ortho = np.maximum.reduce([
        np.abs(np.linalg.norm(a1, axis=-1) - 1),
        np.abs(np.linalg.norm(a2, axis=-1) - 1),
        np.abs(np.sum(a1 * a2, axis=-1)),
    ])
    ortho = np.where(np.isfinite(ortho), ortho, np.inf).max(axis=1)
    for i in np.nonzero(ortho > max(tol, 1e-9))[0]:
        add(Violation("rotation", int(i), f"orthonormality error {ortho[i]:.3g}"))
    nonbinary = ~np.all((m.contacts == 0) | (m.contacts == 1), axis=1)
    for i in np.nonzero(nonbinary)[0]:
        add(Violation("contact_binarity", int(i), str(m.contacts[i].tolist())))
    bones = np.linalg.norm(m.positions[:, skeleton.bone_children] - m.positions[:, skeleton.bone_parents], axis=-1)
    drift = np.abs(bones - skeleton.template_bone_lengths).max(axis=1)
    for i in np.nonzero(drift > tol)[0]:
        add(Violation("bone_length", int(i), f"max drift {drift[i]:.3g} m"))
    return report


# --------------------------------------------------------------------------
# tensor conversion and file formats
# --------------------------------------------------------------------------

def to_tensor(m: MotionSequence) -> np.ndarray:
    f = m.frame_count
    return np.concatenate(
        [m.positions.reshape(f, -1), m.velocities.reshape(f, -1), m.rotations_6d.reshape(f, -1), m.contacts],
        axis=1,
    )


def from_tensor(values, joint_count: int = 22, frame_rate: float = 10.0) -> MotionSequence:
    values = np.asarray(values, dtype=np.float64)
    lay = FeatureLayout(joint_count)
    if values.ndim != 2 or values.shape[1] != lay.width:
        raise ShapeMismatch(f"expected (F, {lay.width}) tensor, got {values.shape}")
    f = values.shape[0]
    return MotionSequence(
        values[:, lay.pos].reshape(f, joint_count, 3),
        values[:, lay.vel].reshape(f, joint_count, 3),
        values[:, lay.rot].reshape(f, joint_count, 6),
        values[:, lay.contacts],
        frame_rate,
    )


def motion_to_dict(m: MotionSequence, skeleton: Skeleton) -> dict:
    binary = bool(np.all((m.contacts == 0) | (m.contacts == 1)))
    frames = []
    for fr in m:
        contacts = [int(c) for c in fr.foot_contacts] if binary else fr.foot_contacts.tolist()
        frames.append({
            "pos": fr.positions_world.tolist(),
            "vel": fr.velocities_world.tolist(),
            "rot6d": fr.rotations_6d.tolist(),
            "contacts": contacts,
        })
    return {"frame_rate": m.frame_rate, "skeleton": skeleton.to_dict(), "frames": frames}


def motion_from_dict(d: dict) -> tuple[MotionSequence, Skeleton]:
    skeleton = Skeleton.from_dict(d["skeleton"])
    frames = d["frames"]
    m = MotionSequence(
        np.array([fr["pos"] for fr in frames], dtype=np.float64),
        np.array([fr["vel"] for fr in frames], dtype=np.float64),
        np.array([fr["rot6d"] for fr in frames], dtype=np.float64),
        np.array([fr["contacts"] for fr in frames], dtype=np.float64),
        float(d["frame_rate"]),
    )
    return m, skeleton


def save_motion_json(path, m: MotionSequence, skeleton: Skeleton) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(m, skeleton)))


def load_motion_json(path) -> tuple[MotionSequence, Skeleton]:
    return motion_from_dict(json.loads(Path(path).read_text()))


def export_csv(m: MotionSequence, path) -> None:
    """One row per frame in tensor column order, with a header row."""
    values = to_tensor(m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FeatureLayout(m.joint_count).column_names())
        for row in values:
            writer.writerow([repr(float(x)) for x in row])


def stack_tensors(seqs: Sequence[MotionSequence]) -> np.ndarray:
    return np.stack([to_tensor(s) for s in seqs])
