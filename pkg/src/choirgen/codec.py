"""Frame representation: seven aligned per-frame sequences.

Soprano/alto/tenor/bass are token ids over a 130-symbol vocabulary (MIDI
pitches 0..127, REST, HOLD), followed by a fermata flag, a beat class in
0..3 and a 12-bit chromagram. Everything is stored compactly as ints; the
model decides how to one-hot them.
"""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from choirgen.score import (
    PARTS,
    ChordAnnotation,
    NoteEvent,
    Score,
    ScoreError,
    TimeSignatureEvent,
    Voice,
    measure_grid,
    signature_at,
    validate,
)

VOCAB_SIZE = 130
REST = 128
HOLD = 129
START = 130  # decoder-only "previous token" at t=0; never emitted


def is_pitch(token: int) -> bool:
    return 0 <= token < 128


@dataclass(frozen=True)
class FrameSet:
    """Seven aligned sequences of length ``length``, plus meter metadata
    needed to rebuild a score. Voices that are absent are ``None``."""

    soprano: tuple[int, ...]
    alto: tuple[int, ...] | None
    tenor: tuple[int, ...] | None
    bass: tuple[int, ...] | None
    fermata: tuple[bool, ...]
    beat: tuple[int, ...]
    chord: tuple[int, ...]
    time_signatures: tuple[TimeSignatureEvent, ...]
    pickup_frames: int = 0

    @property
    def length(self) -> int:
        return len(self.soprano)

    def voice(self, part: str) -> tuple[int, ...] | None:
        return getattr(self, part)

    def has_parts(self, parts: Iterable[str]) -> bool:
        return all(self.voice(p) is not None for p in parts)

    def check(self) -> None:
        n = self.length
        for name in ("fermata", "beat", "chord"):
            if len(getattr(self, name)) != n:
                raise ScoreError(f"{name} length {len(getattr(self, name))} != {n}")
        for part in PARTS:
            seq = self.voice(part)
            if seq is None:
                continue
            if len(seq) != n:
                raise ScoreError(f"{part} length {len(seq)} != {n}")
            if any(not 0 <= tok < VOCAB_SIZE for tok in seq):
                raise ScoreError(f"{part} has token ids outside the vocabulary")
        if any(b not in (0, 1, 2, 3) for b in self.beat):
            raise ScoreError("beat classes must lie in 0..3")
        if any(not 0 <= c < 4096 for c in self.chord):
            raise ScoreError("chromagrams must lie in 0..4095")


# -- chromagrams -------------------------------------------------------------


def chord_to_chroma(chord: ChordAnnotation | Iterable[int]) -> int:
    """Pitch-class set -> 12-bit integer, bit i set iff class i is present.

    >>> bin(chord_to_chroma([0, 4, 7]))
    '0b10010001'
    """
    pcs = chord.pitch_classes if isinstance(chord, ChordAnnotation) else frozenset(chord)
    if not pcs:
        raise ScoreError("empty chord has no chromagram")
    bits = 0
    for pc in pcs:
        if not 0 <= pc <= 11:
            raise ScoreError(f"pitch class out of range: {pc}")
        bits |= 1 << pc
    return bits


def chroma_to_pcs(chroma: int) -> frozenset[int]:
    return frozenset(i for i in range(12) if chroma >> i & 1)


# -- beat strength -----------------------------------------------------------

# Successive division factors of a measure, coarse to fine, in sixteenths.
_DIVISIONS = {
    (2, 4): (2, 2, 2),
    (3, 4): (3, 2, 2),
    (4, 4): (2, 2, 2, 2),
    (6, 8): (2, 3, 2),
    (12, 8): (2, 2, 3, 2),
}


def _divisions(numerator: int, denominator: int) -> tuple[int, ...]:
    if (numerator, denominator) in _DIVISIONS:
        return _DIVISIONS[(numerator, denominator)]
    factors: list[int] = []
    n = numerator
    while n % 2 == 0:
        factors.append(2)
        n //= 2
    if n > 1:
        factors.append(n)
    unit = 16 // denominator
    while unit > 1:
        factors.append(2)
        unit //= 2
    return tuple(factors)


def beat_strength(position: int, ts: TimeSignatureEvent) -> float:
    """Metrical weight of a frame ``position`` inside a full measure of
    ``ts``: 1.0 on the downbeat, halved at each finer division level."""
    size = ts.frames_per_measure
    strength = 1.0
    if position % size == 0:
        return strength
    for factor in _divisions(ts.numerator, ts.denominator):
        size //= factor
        strength /= 2
        if size and position % size == 0:
            return strength
    return strength / 2


def beat_class(frame: int, grid: Sequence[tuple[int, int]], ts: TimeSignatureEvent | Sequence[TimeSignatureEvent]) -> int:
    """4-class metrical strength: 3 strong, 2 medium, 1 weak, 0 non-beat.

    ``ts`` is the active signature, or the full signature list (the active
    one is looked up from the measure index). Pickup measures are
    right-aligned against a full measure.
    """
    index = bisect.bisect_right([start for start, _ in grid], frame) - 1
    if index < 0 or frame >= grid[index][0] + grid[index][1]:
        raise ScoreError(f"frame {frame} outside the measure grid")
    start, length = grid[index]
    sig = ts if isinstance(ts, TimeSignatureEvent) else signature_at(ts, index)
    full = sig.frames_per_measure
    position = frame - start
    if index == 0 and length < full and len(grid) > 1:
        position += full - length
    s = beat_strength(position, sig)
    if s >= 1.0:
        return 3
    if s >= 0.5:
        return 2
    if s >= 0.25:
        return 1
    return 0


def beat_sequence(time_signatures: Sequence[TimeSignatureEvent], total_frames: int, pickup_frames: int = 0) -> tuple[int, ...]:
    grid = measure_grid(time_signatures, total_frames, pickup_frames)
    return tuple(beat_class(f, grid, time_signatures) for f in range(total_frames))


# -- encode / decode -----------------------------------------------------------


def _encode_voice(events: Iterable[NoteEvent], total: int) -> tuple[int, ...]:
    tokens = [REST] + [HOLD] * (total - 1)
    cursor = 0
    for e in sorted(events, key=lambda e: e.onset):
        if e.end > total:
            raise ScoreError(f"event at frame {e.onset} runs beyond total_frames")
        if e.onset > cursor:
            # gap before this event is an implicit rest
            tokens[cursor] = REST
        tokens[e.onset] = REST if e.pitch is None else e.pitch
        for f in range(e.onset + 1, e.end):
            tokens[f] = HOLD
        cursor = e.end
    if cursor < total:
        tokens[cursor] = REST
    return tuple(tokens)


def chord_sequence(chords: Sequence[ChordAnnotation], total_frames: int) -> tuple[int, ...]:
    out = [0] * total_frames
    ordered = sorted(chords, key=lambda c: c.onset)
    for i, c in enumerate(ordered):
        end = ordered[i + 1].onset if i + 1 < len(ordered) else total_frames
        chroma = chord_to_chroma(c)
        for f in range(max(c.onset, 0), min(end, total_frames)):
            out[f] = chroma
    return tuple(out)


def encode_score(score: Score) -> FrameSet:
    if score.voice("soprano") is None:
        raise ScoreError("score has no soprano voice")
    problems = validate(score)
    if problems:
        raise ScoreError("cannot encode invalid score: " + "; ".join(map(str, problems)))
    total = score.total_frames
    seqs = {}
    for part in PARTS:
        v = score.voice(part)
        seqs[part] = None if v is None else _encode_voice(v.events, total)
    fermata = tuple(f in score.fermata_frames for f in range(total))
    return FrameSet(
        soprano=seqs["soprano"],
        alto=seqs["alto"],
        tenor=seqs["tenor"],
        bass=seqs["bass"],
        fermata=fermata,
        beat=beat_sequence(score.time_signatures, total, score.pickup_frames),
        chord=chord_sequence(score.chords, total),
        time_signatures=score.time_signatures,
        pickup_frames=score.pickup_frames,
    )


def decode_voice(tokens: Sequence[int]) -> tuple[tuple[NoteEvent, ...], int]:
    """Tokens -> note events. Returns the events and the number of HOLD
    tokens that had no preceding onset and were coerced to rests."""
    events: list[list] = []
    coerced = 0
    for f, tok in enumerate(tokens):
        if tok == HOLD:
            if events:
                events[-1][1] += 1
                continue
            coerced += 1
            tok = REST
        events.append([f, 1, None if tok == REST else int(tok)])
    return tuple(NoteEvent(o, d, p) for o, d, p in events), coerced


def decode_frames(frames: FrameSet) -> Score:
    voices = []
    coerced = 0
    for part in PARTS:
        seq = frames.voice(part)
        if seq is None:
            continue
        events, n = decode_voice(seq)
        coerced += n
        voices.append(Voice(part, events))
    if coerced:
        warnings.warn(f"coerced {coerced} leading HOLD token(s) to REST", stacklevel=2)
    chords: list[ChordAnnotation] = []
    prev = 0
    for f, chroma in enumerate(frames.chord):
        if chroma != prev and chroma:
            chords.append(ChordAnnotation(f, chroma_to_pcs(chroma)))
        prev = chroma
    return Score(
        voices=tuple(voices),
        time_signatures=frames.time_signatures,
        total_frames=frames.length,
        fermata_frames=frozenset(f for f, on in enumerate(frames.fermata) if on),
        chords=tuple(chords),
        pickup_frames=frames.pickup_frames,
    )


def ablate(frames: FrameSet, drop: Iterable[str] = ()) -> FrameSet:
    drop = set(drop)
    unknown = drop - {"chord", "beat"}
    if unknown:
        raise ValueError(f"can only ablate chord/beat, got {sorted(unknown)}")
    out = frames
    if "chord" in drop:
        out = replace(out, chord=(0,) * frames.length)
    if "beat" in drop:
        out = replace(out, beat=(0,) * frames.length)
    return out
