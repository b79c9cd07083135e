"""Chord/melody harmonicity metrics: CTnCTR, PCS and MCTD.

All three are computed per voice against the active chord and then
macro-averaged over the evaluated voices (alto, tenor, bass by default, in
that order). Only frames with a nonempty active chord are considered.
CTnCTR counts note onsets; PCS and MCTD weight every sounding frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from choirgen.codec import HOLD, REST, FrameSet, chroma_to_pcs, encode_score
from choirgen.score import GENERATED_PARTS, Score


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class NoteFrame:
    part: str
    frame: int
    pitch: int
    chroma: int
    is_onset: bool


def note_frames(tokens: Sequence[int], chords: Sequence[int], part: str = "") -> list[NoteFrame]:
    """Sounding frames of one voice; HOLD frames inherit the held pitch and
    frames under an empty chromagram are skipped."""
    out: list[NoteFrame] = []
    current: int | None = None
    for f, tok in enumerate(tokens):
        onset = tok != HOLD
        if onset:
            current = None if tok == REST else int(tok)
        if current is None or not chords[f]:
            continue
        out.append(NoteFrame(part, f, current, chords[f], onset))
    return out


# -- CTnCTR ----------------------------------------------------------------------


def ctnctr_counts(notes: Sequence[NoteFrame]) -> tuple[int, int, int]:
    """``(n_chord, n_nonchord, n_proper)`` over the note onsets of one voice.

    A non-chord onset is *proper* when the voice's next onset exists and lies
    within two semitones of it.
    """
    onsets = [n for n in notes if n.is_onset]
    n_c = n_n = n_p = 0
    for i, n in enumerate(onsets):
        if n.chroma >> (n.pitch % 12) & 1:
            n_c += 1
            continue
        n_n += 1
        if i + 1 < len(onsets) and abs(onsets[i + 1].pitch - n.pitch) <= 2:
            n_p += 1
    return n_c, n_n, n_p


def ctnctr(notes: Sequence[NoteFrame], literal: bool = False) -> float:
    """``(n_c + n_p) / (n_c + n_n)``; with ``literal=True`` the bare ratio
    ``n_c / n_n`` instead."""
    n_c, n_n, n_p = ctnctr_counts(notes)
    if n_c + n_n == 0:
        raise MetricError("CTnCTR needs at least one sounding onset")
    if literal:
        if n_n == 0:
            raise MetricError("literal CTnCTR is undefined without non-chord tones")
        return n_c / n_n
    return (n_c + n_p) / (n_c + n_n)


# -- PCS -------------------------------------------------------------------------

_CONSONANCE = {0: 1.0, 3: 1.0, 4: 1.0, 7: 1.0, 8: 1.0, 9: 1.0, 5: 0.0}


def interval_score(note_pc: int, chord_pc: int) -> float:
    return _CONSONANCE.get((note_pc - chord_pc) % 12, -1.0)


def pcs(notes: Sequence[NoteFrame]) -> float:
    total = 0.0
    count = 0
    for n in notes:
        for pc in chroma_to_pcs(n.chroma):
            total += interval_score(n.pitch % 12, pc)
            count += 1
    if count == 0:
        raise MetricError("PCS needs at least one sounding frame under a chord")
    return total / count


# -- MCTD ------------------------------------------------------------------------

_RADII = (1.0, 1.0, 0.5)
_ANGLES = (7.0 * math.pi / 6.0, 3.0 * math.pi / 2.0, 2.0 * math.pi / 3.0)


def _phi() -> np.ndarray:
    phi = np.zeros((6, 12))
    for l in range(12):
        for k, (r, a) in enumerate(zip(_RADII, _ANGLES)):
            phi[2 * k, l] = r * math.sin(l * a)
            phi[2 * k + 1, l] = r * math.cos(l * a)
    return phi


PHI = _phi()


def tonal_centroid(chroma: int | Iterable[int]) -> np.ndarray:
    """6-D tonal centroid (fifths, minor thirds, major thirds circles).

    ``chroma`` is a 12-bit chromagram or an iterable of pitch classes.
    """
    pcs_ = chroma_to_pcs(chroma) if isinstance(chroma, int) else frozenset(p % 12 for p in chroma)
    if not pcs_:
        raise MetricError("tonal centroid of an empty chroma is undefined")
    c = np.zeros(12)
    c[list(pcs_)] = 1.0
    return PHI @ c / c.sum()


def mctd(notes: Sequence[NoteFrame]) -> float:
    if not notes:
        raise MetricError("MCTD needs at least one sounding frame under a chord")
    cache: dict[tuple[int, int], float] = {}
    total = 0.0
    for n in notes:
        key = (n.pitch % 12, n.chroma)
        if key not in cache:
            diff = tonal_centroid([key[0]]) - tonal_centroid(key[1])
            cache[key] = float(np.sqrt(diff @ diff))
        total += cache[key]
    return total / len(notes)


# -- aggregation -------------------------------------------------------------------


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise MetricError("pearson needs equally long sequences")
    if len(xs) < 2:
        raise MetricError("pearson needs at least two points")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise MetricError("pearson is undefined for zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


METRICS = ("ctnctr", "pcs", "mctd")


@dataclass(frozen=True)
class VoiceMetrics:
    part: str
    ctnctr: float
    pcs: float
    mctd: float


@dataclass(frozen=True)
class PieceMetrics:
    voices: tuple[VoiceMetrics, ...]

    @property
    def ctnctr(self) -> float:
        return sum(v.ctnctr for v in self.voices) / len(self.voices)

    @property
    def pcs(self) -> float:
        return sum(v.pcs for v in self.voices) / len(self.voices)

    @property
    def mctd(self) -> float:
        return sum(v.mctd for v in self.voices) / len(self.voices)

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def evaluate_frames(frames: FrameSet, parts: Sequence[str] = GENERATED_PARTS) -> PieceMetrics:
    """Per-voice metrics for every listed part with at least one sounding
    note under a chord; raises if no part qualifies."""
    out = []
    for part in parts:
        tokens = frames.voice(part)
        if tokens is None:
            continue
        notes = note_frames(tokens, frames.chord, part)
        if not notes:
            continue
        out.append(VoiceMetrics(part, ctnctr(notes), pcs(notes), mctd(notes)))
    if not out:
        raise MetricError("no sounding notes under a chord in the evaluated voices")
    return PieceMetrics(tuple(out))


def evaluate_score(score: Score, parts: Sequence[str] = GENERATED_PARTS) -> PieceMetrics:
    return evaluate_frames(encode_score(score), parts)
