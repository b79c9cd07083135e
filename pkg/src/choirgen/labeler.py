"""Automatic chord labelling for multi-voice scores.

Two passes: ``chordify`` collapses all voices into a succession of sounding
pitch-class sets, then ``label_chords`` keeps one set per harmonic-rhythm
span, preferring the metrically strongest onset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from choirgen.codec import beat_sequence
from choirgen.score import ChordAnnotation, Score, ScoreError

NOTE_NAMES = ("C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B")

# Minimum beat class that opens a new span for each harmonic rhythm.
HARMONIC_RHYTHMS = {"beat": 1, "half": 2, "measure": 3}

# Interval templates relative to the root, richest first so that seventh
# chords win over their triad subsets.
_TEMPLATES = (
    ("7", frozenset({0, 4, 7, 10})),
    ("maj7", frozenset({0, 4, 7, 11})),
    ("m7", frozenset({0, 3, 7, 10})),
    ("m7b5", frozenset({0, 3, 6, 10})),
    ("dim7", frozenset({0, 3, 6, 9})),
    ("", frozenset({0, 4, 7})),
    ("m", frozenset({0, 3, 7})),
    ("dim", frozenset({0, 3, 6})),
    ("aug", frozenset({0, 4, 8})),
)


@dataclass(frozen=True)
class ChordifiedSegment:
    onset: int
    duration: int
    sounding: frozenset[int]

    @property
    def end(self) -> int:
        return self.onset + self.duration


def chordify(score: Score) -> list[ChordifiedSegment]:
    """Cut the timeline at every onset/offset of every voice and collect the
    pitch classes sounding in each slice. Silent slices are dropped and
    contiguous slices with equal sets are merged."""
    sounding_voices = [v for v in score.voices if v.events]
    if len(sounding_voices) < 2:
        raise ScoreError("chordify requires >= 2 voices")
    cuts = {0, score.total_frames}
    for v in score.voices:
        for e in v.events:
            cuts.add(e.onset)
            cuts.add(e.end)
    bounds = sorted(c for c in cuts if 0 <= c <= score.total_frames)

    notes = [e for v in score.voices for e in v.notes()]
    segments: list[ChordifiedSegment] = []
    for lo, hi in zip(bounds, bounds[1:]):
        pcs = frozenset(e.pitch % 12 for e in notes if e.onset < hi and e.end > lo)
        if not pcs:
            continue
        last = segments[-1] if segments else None
        if last is not None and last.end == lo and last.sounding == pcs:
            segments[-1] = ChordifiedSegment(last.onset, last.duration + hi - lo, pcs)
        else:
            segments.append(ChordifiedSegment(lo, hi - lo, pcs))
    return segments


def beat_spans(beats: Sequence[int], threshold: int = 1) -> list[tuple[int, int]]:
    """Half-open ``(start, end)`` spans opened at frame 0 and at every frame
    whose beat class reaches ``threshold``."""
    starts = [f for f, b in enumerate(beats) if f == 0 or b >= threshold]
    ends = starts[1:] + [len(beats)]
    return list(zip(starts, ends))


def label_chords(
    score: Score,
    segments: Sequence[ChordifiedSegment],
    harmonic_rhythm: str = "beat",
) -> list[ChordAnnotation]:
    """Keep, per span, the segment whose (span-clipped) onset carries the
    highest beat class, earliest first on ties. Annotations snap to span
    starts; repeats of the previous chord are dropped."""
    if not segments:
        raise ScoreError("no chordified segments to label")
    if harmonic_rhythm not in HARMONIC_RHYTHMS:
        raise ValueError(f"harmonic rhythm must be one of {sorted(HARMONIC_RHYTHMS)}")
    beats = beat_sequence(score.time_signatures, score.total_frames, score.pickup_frames)
    spans = beat_spans(beats, HARMONIC_RHYTHMS[harmonic_rhythm])

    ordered = sorted(segments, key=lambda s: s.onset)
    labels: list[ChordAnnotation] = []
    k = 0
    for start, end in spans:
        while k < len(ordered) and ordered[k].end <= start:
            k += 1
        best = None
        best_key = None
        j = k
        while j < len(ordered) and ordered[j].onset < end:
            seg = ordered[j]
            onset = max(seg.onset, start)
            key = (-beats[onset], onset)
            if best_key is None or key < best_key:
                best, best_key = seg, key
            j += 1
        if best is None:
            continue
        if labels and labels[-1].pitch_classes == best.sounding:
            continue
        onset = 0 if not labels else start
        labels.append(ChordAnnotation(onset, best.sounding, chord_symbol(best.sounding)))
    return labels


def label_score(score: Score, harmonic_rhythm: str = "beat") -> Score:
    return score.with_chords(label_chords(score, chordify(score), harmonic_rhythm))


def chord_symbol(pcs: frozenset[int] | set[int]) -> str:
    """Display name from a template match, e.g. ``{7, 11, 2, 5} -> 'G7'``.
    Unmatched sets fall back to their sorted note names."""
    pcs = frozenset(pcs)
    if not pcs:
        return ""
    for suffix, template in _TEMPLATES:
        for root in range(12):
            if frozenset((root + i) % 12 for i in template) == pcs:
                return NOTE_NAMES[root] + suffix
    # incomplete chords: accept a triad template covering the set
    for suffix, template in _TEMPLATES[5:]:
        for root in sorted(pcs):
            full = frozenset((root + i) % 12 for i in template)
            if len(pcs) >= 2 and pcs <= full and root in pcs:
                return NOTE_NAMES[root] + suffix
    return "[" + " ".join(NOTE_NAMES[pc] for pc in sorted(pcs)) + "]"
