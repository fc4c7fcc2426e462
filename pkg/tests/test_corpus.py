import json
from collections import Counter

import numpy as np
import pytest

from duet.corpus import (
    CorpusSpec,
    LabelSet,
    canonical_pair,
    generate_corpus,
    generate_sample,
    pair_tensors,
    read_corpus,
    split_corpus,
    write_corpus,
)
from duet.errors import InvalidFraction, InvalidSpec
from duet.motion import to_tensor, validate_motion

WRIST = 21  # right wrist in the default skeleton


def wrist_height(m):
    return m.positions[:, WRIST, 1]


def test_labelset_layout():
    labels = LabelSet.from_spec(CorpusSpec())
    assert labels.by_id(0).kind == "null"
    assert list(labels.interaction_ids) == [1, 2, 3, 4]
    assert list(labels.individual_ids) == [5, 6, 7, 8, 9]
    assert labels.individual("bow").id == 7
    assert labels.by_id(7).name == "bow"


def test_deterministic_bytes():
    spec = CorpusSpec(sample_count=6, seed=7)
    a = pair_tensors(generate_corpus(spec))
    b = pair_tensors(generate_corpus(spec))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_every_sample_valid(skeleton):
    for s in generate_corpus(CorpusSpec(sample_count=24, seed=11)):
        assert validate_motion(s.person_a, skeleton, 1e-6).ok
        assert validate_motion(s.person_b, skeleton, 1e-6).ok


def test_step_in_place_mirror_has_no_drift():
    s = generate_sample(CorpusSpec(), 5, labels=("mirror", "step-in-place", "step-in-place"))
    for m in (s.person_a, s.person_b):
        root = m.positions[:, 0, [0, 2]]
        assert np.linalg.norm(root - root[0], axis=1).max() < 0.05


def test_wave_vs_bow_wrist_height():
    spec = CorpusSpec(seed=4)
    wave = generate_sample(spec, 2, labels=("circle", "wave-right", "wave-right"))
    bow = generate_sample(spec, 2, labels=("circle", "bow", "bow"))
    diff = np.abs(wrist_height(wave.person_a) - wrist_height(bow.person_a)).mean()
    assert diff > 0.1


def test_swapping_individual_labels_swaps_limb_patterns():
    spec = CorpusSpec(seed=9)
    ab = generate_sample(spec, 3, labels=("approach", "wave-right", "bow"))
    ba = generate_sample(spec, 3, labels=("approach", "bow", "wave-right"))
    # the waving person raises the right wrist above the bowing person
    assert wrist_height(ab.person_a).mean() > wrist_height(ab.person_b).mean() + 0.1
    assert wrist_height(ba.person_b).mean() > wrist_height(ba.person_a).mean() + 0.1


def test_canonical_pair_is_fixed():
    spec = CorpusSpec()
    a = canonical_pair(spec, ("circle", "bow", "kick-right"))
    b = canonical_pair(spec, ("circle", "bow", "kick-right"))
    assert np.array_equal(to_tensor(a.person_a), to_tensor(b.person_a))
    assert a.condition_ids == (2, 7, 8)


@pytest.mark.parametrize("kw", [{"sample_count": 0}, {"frames_per_sample": 1}, {"frame_rate": 0.0}])
def test_invalid_spec(kw):
    with pytest.raises(InvalidSpec):
        CorpusSpec(**kw).validate()


def test_spec_rejects_unknown_keys():
    with pytest.raises(InvalidSpec):
        CorpusSpec.from_dict({"sample_count": 3, "colour": "red"})


class TestSplit:
    def test_counts(self):
        samples = generate_corpus(CorpusSpec(sample_count=10))
        train, ev = split_corpus(samples, 0.8, seed=1)
        assert len(train) == 8 and len(ev) == 2
        assert not {s.id for s in train} & {s.id for s in ev}
        assert {s.id for s in train} | {s.id for s in ev} == {s.id for s in samples}

    def test_stratified(self):
        samples = generate_corpus(CorpusSpec(sample_count=40))
        train, ev = split_corpus(samples, 0.5, seed=2)
        for part in (train, ev):
            counts = Counter(s.interaction_label.name for s in part)
            assert all(4 <= c <= 6 for c in counts.values())
            assert len(counts) == 4

    def test_deterministic(self):
        samples = generate_corpus(CorpusSpec(sample_count=12))
        a = split_corpus(samples, 0.75, seed=5)
        b = split_corpus(samples, 0.75, seed=5)
        assert [s.id for s in a[0]] == [s.id for s in b[0]]

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_invalid_fraction(self, frac):
        with pytest.raises(InvalidFraction):
            split_corpus(generate_corpus(CorpusSpec(sample_count=4)), frac)


def test_directory_roundtrip(tmp_path):
    spec = CorpusSpec(sample_count=5, seed=2)
    samples = generate_corpus(spec)
    write_corpus(samples, tmp_path, spec)
    index = json.loads((tmp_path / "index.json").read_text())
    assert len(index["samples"]) == 5
    assert set(index["samples"][0]) == {"id", "interaction", "individual_a", "individual_b", "files"}
    back = read_corpus(tmp_path)
    assert back.spec == spec
    for x, y in zip(pair_tensors(back.samples), pair_tensors(samples)):
        assert np.array_equal(x, y)
