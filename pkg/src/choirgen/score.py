"""Score domain model: pitches, voices, meter and chord annotations.

Everything lives on a fixed sixteenth-note grid. A *frame* is one sixteenth,
so a quarter note spans 4 frames and a 4/4 measure spans 16.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

FRAMES_PER_QUARTER = 4
FRAMES_PER_WHOLE = 16

PARTS = ("soprano", "alto", "tenor", "bass")
GENERATED_PARTS = ("alto", "tenor", "bass")


class ScoreError(ValueError):
    """Raised when a score cannot be built or interpreted."""


@dataclass(frozen=True)
class Pitch:
    """A MIDI pitch (middle C = 60)."""

    midi: int

    def __post_init__(self) -> None:
        if not 0 <= self.midi <= 127:
            raise ScoreError(f"MIDI pitch out of range: {self.midi}")

    @property
    def pitch_class(self) -> int:
        return self.midi % 12


def pitch_class(p: Pitch | int) -> int:
    midi = p.midi if isinstance(p, Pitch) else int(p)
    return midi % 12


@dataclass(frozen=True)
class NoteEvent:
    """A note or rest on the frame grid. ``pitch=None`` is a rest."""

    onset: int
    duration: int
    pitch: int | None = None

    @property
    def end(self) -> int:
        return self.onset + self.duration

    @property
    def is_rest(self) -> bool:
        return self.pitch is None


@dataclass(frozen=True)
class Voice:
    part: str
    events: tuple[NoteEvent, ...] = ()

    def notes(self) -> Iterator[NoteEvent]:
        return (e for e in self.events if not e.is_rest)


@dataclass(frozen=True)
class TimeSignatureEvent:
    at_measure: int
    numerator: int
    denominator: int

    @property
    def frames_per_measure(self) -> int:
        return self.numerator * FRAMES_PER_WHOLE // self.denominator


@dataclass(frozen=True)
class ChordAnnotation:
    onset: int
    pitch_classes: frozenset[int]
    symbol: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pitch_classes", frozenset(self.pitch_classes))


@dataclass(frozen=True)
class Score:
    """A up-to-four-voice piece with meter, fermatas and chord labels.

    ``pickup_frames`` > 0 declares an initial short measure (anacrusis) of
    that many frames; measure 0 is then the pickup.
    """

    voices: tuple[Voice, ...]
    time_signatures: tuple[TimeSignatureEvent, ...]
    total_frames: int
    fermata_frames: frozenset[int] = frozenset()
    chords: tuple[ChordAnnotation, ...] = ()
    pickup_frames: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "voices", tuple(self.voices))
        object.__setattr__(self, "time_signatures", tuple(self.time_signatures))
        object.__setattr__(self, "chords", tuple(self.chords))
        object.__setattr__(self, "fermata_frames", frozenset(self.fermata_frames))

    def voice(self, part: str) -> Voice | None:
        for v in self.voices:
            if v.part == part:
                return v
        return None

    @property
    def parts(self) -> tuple[str, ...]:
        return tuple(v.part for v in self.voices)

    def with_voices(self, voices: Iterable[Voice]) -> Score:
        return replace(self, voices=tuple(voices))

    def with_chords(self, chords: Iterable[ChordAnnotation]) -> Score:
        return replace(self, chords=tuple(chords))

    def canonical(self) -> Score:
        """Voices in SATB order with gaps filled by explicit rests, and
        consecutive chords with identical pitch classes merged."""
        voices = []
        for part in PARTS:
            v = self.voice(part)
            if v is not None:
                voices.append(Voice(part, _fill_rests(v.events, self.total_frames)))
        chords: list[ChordAnnotation] = []
        for c in self.chords:
            if chords and chords[-1].pitch_classes == c.pitch_classes:
                continue
            chords.append(c)
        return replace(self, voices=tuple(voices), chords=tuple(chords))


def _fill_rests(events: Iterable[NoteEvent], total: int) -> tuple[NoteEvent, ...]:
    out: list[NoteEvent] = []
    cursor = 0
    for e in sorted(events, key=lambda e: e.onset):
        if e.onset > cursor:
            out.append(NoteEvent(cursor, e.onset - cursor, None))
        out.append(e)
        cursor = max(cursor, e.end)
    if cursor < total:
        out.append(NoteEvent(cursor, total - cursor, None))
    return tuple(out)


def measure_grid(
    time_signatures: Iterable[TimeSignatureEvent],
    total_frames: int,
    pickup_frames: int = 0,
) -> list[tuple[int, int]]:
    """Partition ``[0, total_frames)`` into ``(start, length)`` measures.

    The last measure may be truncated. A pickup becomes a short measure 0.

    >>> measure_grid([TimeSignatureEvent(0, 4, 4)], 32)
    [(0, 16), (16, 16)]
    """
    ts = sorted(time_signatures, key=lambda t: t.at_measure)
    if not ts:
        raise ScoreError("empty time-signature list")
    if total_frames < 1:
        raise ScoreError("total_frames must be >= 1")
    grid: list[tuple[int, int]] = []
    start, index, k = 0, 0, 0
    while start < total_frames:
        while k + 1 < len(ts) and ts[k + 1].at_measure <= index:
            k += 1
        length = ts[k].frames_per_measure
        if index == 0 and pickup_frames:
            length = pickup_frames
        length = min(length, total_frames - start)
        grid.append((start, length))
        start += length
        index += 1
    return grid


def signature_at(
    time_signatures: Iterable[TimeSignatureEvent], measure_index: int
) -> TimeSignatureEvent:
    active = None
    for t in sorted(time_signatures, key=lambda t: t.at_measure):
        if t.at_measure <= measure_index:
            active = t
    if active is None:
        raise ScoreError(f"no time signature active at measure {measure_index}")
    return active


@dataclass(frozen=True)
class Violation:
    field: str
    frame: int | None
    message: str

    def __str__(self) -> str:
        where = "" if self.frame is None else f" @frame {self.frame}"
        return f"{self.field}{where}: {self.message}"


def validate(score: Score) -> list[Violation]:
    """Check every score invariant. Never raises; returns the violations."""
    out: list[Violation] = []
    total = score.total_frames
    if not isinstance(total, int) or total < 1:
        out.append(Violation("total_frames", None, "must be a positive integer"))
        total = 0

    seen: set[str] = set()
    for v in score.voices:
        if v.part not in PARTS:
            out.append(Violation(f"voices.{v.part}", None, "unknown part"))
        elif v.part in seen:
            out.append(Violation(f"voices.{v.part}", None, "duplicate voice"))
        seen.add(v.part)
        prev_end = 0
        prev_onset = -1
        for e in v.events:
            if e.duration < 1:
                out.append(Violation(f"voices.{v.part}", e.onset, "duration must be >= 1"))
            if e.onset < 0:
                out.append(Violation(f"voices.{v.part}", e.onset, "negative onset"))
            if e.pitch is not None and not 0 <= e.pitch <= 127:
                out.append(Violation(f"voices.{v.part}", e.onset, f"pitch out of range: {e.pitch}"))
            if e.onset < prev_onset:
                out.append(Violation(f"voices.{v.part}", e.onset, "events not sorted by onset"))
            elif e.onset < prev_end:
                out.append(Violation(f"voices.{v.part}", e.onset, "voice overlap"))
            if total and e.end > total:
                out.append(Violation(f"voices.{v.part}", e.end - 1, "event beyond total_frames"))
            prev_onset = e.onset
            prev_end = max(prev_end, e.end)
    if "soprano" not in seen:
        out.append(Violation("voices.soprano", None, "soprano voice is mandatory"))

    if not score.time_signatures:
        out.append(Violation("time_signatures", None, "at least one time signature required"))
    else:
        if min(t.at_measure for t in score.time_signatures) != 0:
            out.append(Violation("time_signatures", None, "first signature must be at measure 0"))
        for t in score.time_signatures:
            if t.numerator < 1:
                out.append(Violation("time_signatures", None, f"bad numerator {t.numerator}"))
            if t.denominator not in (1, 2, 4, 8, 16):
                out.append(Violation("time_signatures", None, f"bad denominator {t.denominator}"))
    if score.pickup_frames < 0:
        out.append(Violation("pickup_frames", None, "must be >= 0"))

    for f in sorted(score.fermata_frames):
        if f < 0 or (total and f >= total):
            out.append(Violation("fermata_frames", f, "frame outside the piece"))

    prev = -1
    for c in score.chords:
        if not c.pitch_classes:
            out.append(Violation("chords", c.onset, "empty chord"))
        elif not all(isinstance(pc, int) and 0 <= pc <= 11 for pc in c.pitch_classes):
            out.append(Violation("chords", c.onset, "pitch class outside 0..11"))
        if c.onset <= prev:
            out.append(Violation("chords", c.onset, "chord onsets must be strictly increasing"))
        if c.onset < 0 or (total and c.onset >= total):
            out.append(Violation("chords", c.onset, "chord onset outside the piece"))
        prev = c.onset
    return out


def require_valid(score: Score) -> None:
    problems = validate(score)
    if problems:
        raise ScoreError("invalid score: " + "; ".join(map(str, problems)))
