"""Procedural two-person interaction corpus with separable labels.

Each sample pairs an interaction label, which drives both roots (relative
trajectory and headings), with one individual label per person, which drives
that person's limb pattern. Limb patterns are sinusoidal joint rotations on
the rest skeleton, so bone lengths are preserved exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidFraction, InvalidSpec
from .motion import (
    MotionSequence,
    Skeleton,
    axis_angle_to_matrix,
    default_skeleton,
    derive_velocities_and_contacts,
    forward_kinematics,
    load_motion_json,
    matrix_to_rot6d,
    save_motion_json,
    yaw_matrix,
)

NULL_ID = 0
INTERACTION, INDIVIDUAL, NULL = "interaction", "individual", "null"


@dataclass(frozen=True)
class ConditionLabel:
    id: int
    kind: str
    name: str


NULL_LABEL = ConditionLabel(NULL_ID, NULL, "∅")


@dataclass(frozen=True)
class LabelParams:
    name: str
    frequency: float = 1.0  # Hz
    amplitude: float = 0.5  # rad (limbs) or m (trajectories)
    approach_speed: float = 0.0  # m/s


DEFAULT_INTERACTIONS = (
    LabelParams("approach", frequency=0.0, amplitude=0.0, approach_speed=0.3),
    LabelParams("circle", frequency=0.0, amplitude=0.0, approach_speed=0.5),
    LabelParams("mirror", frequency=0.0, amplitude=0.0, approach_speed=0.0),
    LabelParams("push-retreat", frequency=0.6, amplitude=0.4, approach_speed=0.0),
)

DEFAULT_INDIVIDUALS = (
    LabelParams("wave-right", frequency=1.2, amplitude=0.5),
    LabelParams("wave-left", frequency=1.2, amplitude=0.5),
    LabelParams("bow", frequency=0.6, amplitude=0.8),
    LabelParams("kick-right", frequency=0.8, amplitude=1.0),
    LabelParams("step-in-place", frequency=1.0, amplitude=0.6),
)


@dataclass(frozen=True)
class CorpusSpec:
    sample_count: int = 200
    frames_per_sample: int = 16
    seed: int = 0
    frame_rate: float = 10.0
    interaction_vocab: tuple[LabelParams, ...] = DEFAULT_INTERACTIONS
    individual_vocab: tuple[LabelParams, ...] = DEFAULT_INDIVIDUALS

    def validate(self) -> None:
        if self.sample_count <= 0:
            raise InvalidSpec("sample_count must be positive")
        if self.frames_per_sample < 2:
            raise InvalidSpec("frames_per_sample must be at least 2")
        if self.frame_rate <= 0:
            raise InvalidSpec("frame_rate must be positive")
        if not self.interaction_vocab or not self.individual_vocab:
            raise InvalidSpec("vocabularies must be non-empty")
        for vocab, known in ((self.interaction_vocab, _TRAJECTORIES), (self.individual_vocab, _LIMBS)):
            names = [p.name for p in vocab]
            if len(set(names)) != len(names):
                raise InvalidSpec(f"duplicate label names in {names}")
            unknown = set(names) - set(known)
            if unknown:
                raise InvalidSpec(f"no generator for labels {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interaction_vocab"] = [asdict(p) for p in self.interaction_vocab]
        d["individual_vocab"] = [asdict(p) for p in self.individual_vocab]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        allowed = {"sample_count", "frames_per_sample", "seed", "frame_rate", "interaction_vocab", "individual_vocab"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidSpec(f"unknown corpus spec keys: {sorted(unknown)}")
        for key in ("interaction_vocab", "individual_vocab"):
            if key in d:
                d[key] = tuple(LabelParams(**p) for p in d[key])
        spec = cls(**d)
        spec.validate()
        return spec


@dataclass(frozen=True)
class LabelSet:
    """Global label table: id 0 is ∅, then interactions, then individuals."""

    interactions: tuple[str, ...]
    individuals: tuple[str, ...]

    @classmethod
    def from_spec(cls, spec: CorpusSpec) -> "LabelSet":
        return cls(tuple(p.name for p in spec.interaction_vocab), tuple(p.name for p in spec.individual_vocab))

    @property
    def size(self) -> int:
        return 1 + len(self.interactions) + len(self.individuals)

    def interaction(self, name: str) -> ConditionLabel:
        return ConditionLabel(1 + self.interactions.index(name), INTERACTION, name)

    def individual(self, name: str) -> ConditionLabel:
        return ConditionLabel(1 + len(self.interactions) + self.individuals.index(name), INDIVIDUAL, name)

    def by_id(self, i: int) -> ConditionLabel:
        if i == NULL_ID:
            return NULL_LABEL
        if i <= len(self.interactions):
            return ConditionLabel(i, INTERACTION, self.interactions[i - 1])
        return ConditionLabel(i, INDIVIDUAL, self.individuals[i - 1 - len(self.interactions)])

    def lookup(self, name: str, kind: str) -> ConditionLabel:
        try:
            return self.interaction(name) if kind == INTERACTION else self.individual(name)
        except ValueError:
            raise KeyError(f"unknown {kind} label {name!r}") from None

    @property
    def individual_ids(self) -> np.ndarray:
        return np.arange(1 + len(self.interactions), self.size)

    @property
    def interaction_ids(self) -> np.ndarray:
        return np.arange(1, 1 + len(self.interactions))

    def to_dict(self) -> dict:
        return {"interactions": list(self.interactions), "individuals": list(self.individuals)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        return cls(tuple(d["interactions"]), tuple(d["individuals"]))


@dataclass(frozen=True)
class InteractionSample:
    id: int
    person_a: MotionSequence
    person_b: MotionSequence
    interaction_label: ConditionLabel
    individual_label_a: ConditionLabel
    individual_label_b: ConditionLabel

    def __post_init__(self):
        if self.person_a.frame_count != self.person_b.frame_count or self.person_a.frame_rate != self.person_b.frame_rate:
            raise InvalidSpec("both persons must share frame count and rate")
        kinds = (self.interaction_label.kind, self.individual_label_a.kind, self.individual_label_b.kind)
        if kinds != (INTERACTION, INDIVIDUAL, INDIVIDUAL):
            raise InvalidSpec(f"label kinds {kinds} do not match their slots")

    @property
    def condition_ids(self) -> tuple[int, int, int]:
        return (self.interaction_label.id, self.individual_label_a.id, self.individual_label_b.id)


# --------------------------------------------------------------------------
# root trajectories: ground position (F, 2) as (x, z) and heading (F,) per person
# --------------------------------------------------------------------------

def _canonical_frame(a_xz, b_xz):
    """Move person a's first-frame root to the origin with b straight ahead (+z)."""
    d = b_xz[0] - a_xz[0]
    c, s = d[1] / np.hypot(*d), -d[0] / np.hypot(*d)
    rmat = np.array([[c, s], [-s, c]])
    return (a_xz - a_xz[0]) @ rmat.T, (b_xz - a_xz[0]) @ rmat.T


def _facing(src, dst):
    d = dst - src
    return np.arctan2(d[:, 0], d[:, 1])


def _traj_approach(p: LabelParams, t, sep, rng):
    d = sep - 2 * p.approach_speed * t
    a = np.stack([-d / 2, np.zeros_like(t)], -1)
    return a, -a


def _traj_circle(p: LabelParams, t, sep, rng):
    r = 0.4 * sep
    ang = (p.approach_speed / r) * t * rng.uniform(0.9, 1.1)
    a = np.stack([-r * np.cos(ang), -r * np.sin(ang)], -1)
    return a, -a


def _traj_mirror(p: LabelParams, t, sep, rng):
    a = np.tile([-0.4 * sep, 0.0], (t.size, 1))
    return a, -a


def _traj_push_retreat(p: LabelParams, t, sep, rng):
    dur = t[-1] if t[-1] > 0 else 1.0
    shift = p.amplitude * rng.uniform(0.85, 1.15) * np.sin(np.pi * t / dur)
    a = np.stack([-0.45 * sep + shift, np.zeros_like(t)], -1)
    b = np.stack([0.45 * sep + shift, np.zeros_like(t)], -1)
    return a, b


_TRAJECTORIES = {
    "approach": _traj_approach,
    "circle": _traj_circle,
    "mirror": _traj_mirror,
    "push-retreat": _traj_push_retreat,
}


# --------------------------------------------------------------------------
# limb patterns: parent-frame axis-angle per joint, (F, J, 3)
# --------------------------------------------------------------------------

def _bump(phase):
    return 0.5 - 0.5 * np.cos(phase)


def _limb_wave(side):
    shoulder, elbow, sign = (17, 19, -1.0) if side == "right" else (16, 18, 1.0)

    def pattern(p: LabelParams, phase, aa):
        aa[:, shoulder, 2] = sign * (2.5 + 0.15 * np.sin(phase))
        aa[:, elbow, 2] = sign * p.amplitude * (1.0 + np.sin(phase))

    return pattern


def _limb_bow(p: LabelParams, phase, aa):
    aa[:, 3, 0] = p.amplitude * _bump(phase)
    aa[:, 6, 0] = 0.5 * p.amplitude * _bump(phase)


def _limb_kick_right(p: LabelParams, phase, aa):
    aa[:, 2, 0] = -p.amplitude * _bump(phase)
    aa[:, 5, 0] = 0.8 * p.amplitude * _bump(phase + 0.6)


def _limb_step(p: LabelParams, phase, aa):
    left = np.maximum(0.0, np.sin(phase))
    right = np.maximum(0.0, -np.sin(phase))
    aa[:, 1, 0] = -p.amplitude * left
    aa[:, 4, 0] = 2 * p.amplitude * left
    aa[:, 2, 0] = -p.amplitude * right
    aa[:, 5, 0] = 2 * p.amplitude * right


_LIMBS = {
    "wave-right": _limb_wave("right"),
    "wave-left": _limb_wave("left"),
    "bow": _limb_bow,
    "kick-right": _limb_kick_right,
    "step-in-place": _limb_step,
}


def _person_motion(
    skeleton: Skeleton, limb: LabelParams, ground, heading, t, rng, frame_rate
) -> MotionSequence:
    f, j = t.size, skeleton.joint_count
    params = LabelParams(limb.name, limb.frequency * rng.uniform(0.9, 1.1), limb.amplitude * rng.uniform(0.85, 1.15))
    phase = 2 * np.pi * params.frequency * t + rng.uniform(0, 2 * np.pi)
    aa = np.zeros((f, j, 3))
    _LIMBS[limb.name](params, phase, aa)
    sway = 2 * np.pi * 0.5 * t + rng.uniform(0, 2 * np.pi)
    aa[:, 12, 2] += 0.05 * np.sin(sway)
    local = axis_angle_to_matrix(aa)
    local[:, 0] = yaw_matrix(heading)
    root = np.column_stack([ground[:, 0], np.full(f, skeleton.offsets[0, 1]), ground[:, 1]])
    pos = forward_kinematics(local, root, skeleton)
    return derive_velocities_and_contacts(pos, skeleton, rotations_6d=matrix_to_rot6d(local), frame_rate=frame_rate)


def _substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys]))


def generate_sample(
    spec: CorpusSpec,
    index: int,
    labels: tuple[str, str, str] | None = None,
    skeleton: Skeleton | None = None,
    jitter: bool = True,
) -> InteractionSample:
    """Generate sample ``index`` of the corpus.

    ``labels`` (interaction, individual a, individual b) overrides the drawn
    labels without changing any other random draw. ``jitter=False`` gives the
    canonical motion of a label triple (fixed separation, phase and amplitude).
    """
    skeleton = skeleton or default_skeleton()
    labelset = LabelSet.from_spec(spec)
    lrng = _substream(spec.seed, index, 0)
    n_int = len(spec.interaction_vocab)
    ind_draw = lrng.integers(len(spec.individual_vocab), size=2)
    if labels is None:
        labels = (
            spec.interaction_vocab[index % n_int].name,
            spec.individual_vocab[ind_draw[0]].name,
            spec.individual_vocab[ind_draw[1]].name,
        )
    inter = {p.name: p for p in spec.interaction_vocab}[labels[0]]
    indiv = {p.name: p for p in spec.individual_vocab}

    t = np.arange(spec.frames_per_sample) / spec.frame_rate
    prng = _substream(spec.seed, index, 1) if jitter else _CanonicalRng()
    sep = prng.uniform(1.7, 2.0)
    a_xz, b_xz = _TRAJECTORIES[inter.name](inter, t, sep, prng)
    a_xz, b_xz = _canonical_frame(a_xz, b_xz)
    head_a = _facing(a_xz, b_xz)
    head_b = _facing(b_xz, a_xz)

    rng_a = _substream(spec.seed, index, 2) if jitter else _CanonicalRng()
    rng_b = _substream(spec.seed, index, 3) if jitter else _CanonicalRng()
    person_a = _person_motion(skeleton, indiv[labels[1]], a_xz, head_a, t, rng_a, spec.frame_rate)
    person_b = _person_motion(skeleton, indiv[labels[2]], b_xz, head_b, t, rng_b, spec.frame_rate)
    return InteractionSample(
        index,
        person_a,
        person_b,
        labelset.interaction(labels[0]),
        labelset.individual(labels[1]),
        labelset.individual(labels[2]),
    )


class _CanonicalRng:
    """Stands in for a Generator: every uniform draw returns its interval midpoint."""

    def uniform(self, low=0.0, high=1.0, size=None):
        mid = 0.5 * (low + high)
        return mid if size is None else np.full(size, mid)


def generate_corpus(spec: CorpusSpec, skeleton: Skeleton | None = None) -> list[InteractionSample]:
    """Deterministic given ``spec.seed``; interaction labels cycle so every label is equally frequent."""
    spec.validate()
    skeleton = skeleton or default_skeleton()
    return [generate_sample(spec, i, skeleton=skeleton) for i in range(spec.sample_count)]


def canonical_pair(spec: CorpusSpec, labels: tuple[str, str, str], skeleton: Skeleton | None = None):
    """Noise-free reference motion for a label triple."""
    return generate_sample(spec, 0, labels=labels, skeleton=skeleton, jitter=False)


def split_corpus(samples: Sequence[InteractionSample], train_fraction: float, seed: int = 0):
    """Stratified deterministic split by interaction label.

    The total train size is ``round(n * train_fraction)``; per-label quotas use
    largest remainders so each label is within one sample of its exact share.
    """
    if not 0 < train_fraction < 1:
        raise InvalidFraction(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x5EED]))
    groups: dict[int, list[int]] = {}
    for k, s in enumerate(samples):
        groups.setdefault(s.interaction_label.id, []).append(k)
    keys = sorted(groups)
    exact = np.array([len(groups[k]) * train_fraction for k in keys])
    quota = np.floor(exact).astype(int)
    total = int(round(len(samples) * train_fraction))
    remainder = exact - quota
    tiebreak = rng.permutation(len(keys))
    order = sorted(range(len(keys)), key=lambda i: (-remainder[i], tiebreak[i]))
    for i in order[: max(0, total - int(quota.sum()))]:
        quota[i] += 1
    train, held = [], []
    for key, q in zip(keys, quota):
        members = np.array(groups[key])
        perm = members[rng.permutation(len(members))]
        train.extend(perm[:q].tolist())
        held.extend(perm[q:].tolist())
    return [samples[k] for k in sorted(train)], [samples[k] for k in sorted(held)]


def pair_tensors(samples: Sequence[InteractionSample]):
    """Stack a corpus into ``(N, F, D)`` tensors for both persons plus ``(N, 3)`` condition ids."""
    from .motion import to_tensor

    xa = np.stack([to_tensor(s.person_a) for s in samples])
    xb = np.stack([to_tensor(s.person_b) for s in samples])
    cond = np.array([s.condition_ids for s in samples], dtype=np.int64)
    return xa, xb, cond


# --------------------------------------------------------------------------
# corpus directory layout
# --------------------------------------------------------------------------

def write_corpus(samples: Sequence[InteractionSample], out_dir, spec: CorpusSpec, skeleton: Skeleton | None = None) -> Path:
    skeleton = skeleton or default_skeleton()
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        fa = f"samples/{s.id:05d}_a.json"
        fb = f"samples/{s.id:05d}_b.json"
        save_motion_json(out / fa, s.person_a, skeleton)
        save_motion_json(out / fb, s.person_b, skeleton)
        entries.append({
            "id": s.id,
            "interaction": s.interaction_label.name,
            "individual_a": s.individual_label_a.name,
            "individual_b": s.individual_label_b.name,
            "files": [fa, fb],
        })
    index = {"spec": spec.to_dict(), "labels": LabelSet.from_spec(spec).to_dict(), "samples": entries}
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return out


@dataclass
class Corpus:
    spec: CorpusSpec
    labels: LabelSet
    samples: list[InteractionSample] = field(default_factory=list)
    skeleton: Skeleton = field(default_factory=default_skeleton)


def read_corpus(path) -> Corpus:
    root = Path(path)
    index = json.loads((root / "index.json").read_text())
    spec = CorpusSpec.from_dict(index["spec"])
    labels = LabelSet.from_dict(index["labels"])
    samples = []
    skeleton = None
    for e in index["samples"]:
        a, skeleton = load_motion_json(root / e["files"][0])
        b, _ = load_motion_json(root / e["files"][1])
        samples.append(
            InteractionSample(
                int(e["id"]), a, b,
                labels.interaction(e["interaction"]),
                labels.individual(e["individual_a"]),
                labels.individual(e["individual_b"]),
            )
        )
    return Corpus(spec, labels, samples, skeleton or default_skeleton())
