import numpy as np
import pytest

from choirgen.codec import beat_sequence, chord_sequence, chord_to_chroma
from choirgen.labeler import (
    ChordifiedSegment,
    chord_symbol,
    chordify,
    label_chords,
    label_score,
)
from choirgen.score import NoteEvent, Score, ScoreError, TimeSignatureEvent, Voice

from conftest import random_score

THRESHOLD = {"beat": 1, "half": 2, "measure": 3}


def oracle_frame_sets(score):
    sets = []
    for f in range(score.total_frames):
        pcs = set()
        for v in score.voices:
            for e in v.events:
                if e.pitch is not None and e.onset <= f < e.end:
                    pcs.add(e.pitch % 12)
        sets.append(frozenset(pcs))
    return sets


def oracle_chordify(score):
    """Per-frame sounding sets, run-length encoded, silence dropped."""
    out = []
    for f, pcs in enumerate(oracle_frame_sets(score)):
        if not pcs:
            continue
        if out and out[-1][0] + out[-1][1] == f and out[-1][2] == pcs:
            out[-1][1] += 1
        else:
            out.append([f, 1, pcs])
    return [ChordifiedSegment(o, d, p) for o, d, p in out]


def oracle_labels(score, rhythm="beat"):
    """Per span: a segment onset is any nonempty frame whose set differs from
    the previous frame's (or the span start, for a segment carried in). Keep
    the onset with the highest beat class, earliest on ties, at the span
    start."""
    beats = beat_sequence(score.time_signatures, score.total_frames, score.pickup_frames)
    sets = oracle_frame_sets(score)
    starts = [f for f in range(score.total_frames) if f == 0 or beats[f] >= THRESHOLD[rhythm]]
    bounds = starts + [score.total_frames]
    labels = []
    for lo, hi in zip(bounds, bounds[1:]):
        onsets = [f for f in range(lo, hi) if sets[f] and (f == lo or sets[f] != sets[f - 1])]
        if not onsets:
            continue
        best = max(onsets, key=lambda f: (beats[f], -f))
        if labels and labels[-1][1] == sets[best]:
            continue
        labels.append((0 if not labels else lo, sets[best]))
    return labels


def two_voice(sop, bass, total=16):
    return Score(
        voices=(Voice("soprano", tuple(sop)), Voice("bass", tuple(bass))),
        time_signatures=(TimeSignatureEvent(0, 4, 4),),
        total_frames=total,
    )


def test_chordify_single_segment():
    s = two_voice([NoteEvent(0, 16, 60)], [NoteEvent(0, 16, 52)])
    assert chordify(s) == [ChordifiedSegment(0, 16, frozenset({0, 4}))]


def test_chordify_cuts_at_soprano_change():
    s = two_voice([NoteEvent(0, 8, 60), NoteEvent(8, 8, 62)], [NoteEvent(0, 16, 43)])
    assert chordify(s) == [
        ChordifiedSegment(0, 8, frozenset({0, 7})),
        ChordifiedSegment(8, 8, frozenset({2, 7})),
    ]


def test_chordify_needs_two_voices():
    s = Score((Voice("soprano", (NoteEvent(0, 4, 60),)),), (TimeSignatureEvent(0, 4, 4),), 4)
    with pytest.raises(ScoreError, match=">= 2 voices"):
        chordify(s)


def test_label_one_segment_per_beat_is_identity():
    s = two_voice(
        [NoteEvent(i * 4, 4, p) for i, p in enumerate([60, 62, 64, 65])],
        [NoteEvent(0, 16, 48)],
    )
    labels = label_chords(s, chordify(s))
    assert [(c.onset, set(c.pitch_classes)) for c in labels] == [
        (0, {0}),
        (4, {2, 0}),
        (8, {4, 0}),
        (12, {5, 0}),
    ]


def test_label_prefers_stronger_onset():
    segments = [ChordifiedSegment(0, 2, frozenset({0, 4, 7})), ChordifiedSegment(2, 2, frozenset({2, 5}))]
    s = two_voice([NoteEvent(0, 2, 60), NoteEvent(2, 2, 62)], [NoteEvent(0, 4, 48)], total=4)
    labels = label_chords(s, segments)
    assert [set(c.pitch_classes) for c in labels] == [{0, 4, 7}]


def test_fixture_labels_match_oracle(corpus):
    for _, score in corpus:
        bare = score.with_chords(())
        assert chordify(bare) == oracle_chordify(bare)
        for rhythm in ("beat", "half", "measure"):
            got = [(c.onset, c.pitch_classes) for c in label_chords(bare, chordify(bare), rhythm)]
            assert got == oracle_labels(bare, rhythm)


def test_random_scores_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        s = random_score(rng, n_voices=int(rng.integers(2, 5)), with_chords=False)
        segments = chordify(s) if any(e.pitch is not None for v in s.voices for e in v.events) else []
        assert segments == oracle_chordify(s)
        if segments:
            for rhythm in ("beat", "half", "measure"):
                got = [(c.onset, c.pitch_classes) for c in label_chords(s, segments, rhythm)]
                assert got == oracle_labels(s, rhythm), rhythm


def test_label_properties(corpus):
    for _, score in corpus:
        labels = label_score(score.with_chords(())).chords
        assert labels[0].onset == 0
        assert all(a.onset < b.onset for a, b in zip(labels, labels[1:]))
        assert all(a.pitch_classes != b.pitch_classes for a, b in zip(labels, labels[1:]))
        # every frame is covered by exactly one annotation
        assert 0 not in chord_sequence(labels, score.total_frames)
        assert label_score(score.with_chords(())).chords == labels


@pytest.mark.parametrize(
    "pcs, name",
    [
        ({0, 4, 7}, "C"),
        ({9, 0, 4}, "Am"),
        ({7, 11, 2, 5}, "G7"),
        ({11, 2, 5}, "Bdim"),
        ({0, 4}, "C"),
        ({0, 1, 2}, "[C C# D]"),
    ],
)
def test_chord_symbol(pcs, name):
    assert chord_symbol(pcs) == name


def test_chromagram_of_labels_is_nonempty(corpus):
    for _, score in corpus:
        assert all(chord_to_chroma(c) > 0 for c in score.chords)
