from __future__ import annotations

import numpy as np
import pytest

from choirgen.codec import encode_score
from choirgen.io import load_corpus
from choirgen.score import ChordAnnotation, NoteEvent, Score, TimeSignatureEvent, Voice

METERS = [(4, 4), (3, 4), (2, 4), (6, 8), (12, 8)]


def random_voice(rng: np.random.Generator, part: str, total: int, rest_prob: float = 0.15) -> Voice:
    events = []
    t = 0
    centre = {"soprano": 67, "alto": 62, "tenor": 55, "bass": 48}[part]
    while t < total:
        dur = int(min(rng.choice([1, 2, 2, 4, 4, 4, 6, 8]), total - t))
        pitch = None if rng.random() < rest_prob else int(centre + rng.integers(-7, 8))
        events.append(NoteEvent(t, dur, pitch))
        t += dur
    return Voice(part, tuple(events))


def random_score(
    rng: np.random.Generator,
    n_voices: int = 4,
    max_measures: int = 8,
    with_chords: bool = True,
) -> Score:
    """A grid-quantized score with explicit rests (canonical form)."""
    num, den = METERS[rng.integers(len(METERS))]
    measure = num * 16 // den
    measures = int(rng.integers(1, max_measures + 1))
    pickup = int(rng.integers(1, measure)) if rng.random() < 0.3 and measures > 1 else 0
    total = measures * measure - (measure - pickup if pickup else 0)
    total = max(total, 1)
    parts = ["soprano", "alto", "tenor", "bass"][:n_voices]
    voices = [random_voice(rng, p, total) for p in parts]
    chords = []
    if with_chords:
        t = 0
        prev = None
        while t < total:
            pcs = frozenset(int(x) for x in rng.choice(12, size=int(rng.integers(1, 5)), replace=False))
            if pcs != prev:
                chords.append(ChordAnnotation(t, pcs))
                prev = pcs
            t += int(rng.choice([2, 4, 8]))
    fermatas = set()
    for _ in range(int(rng.integers(0, 3))):
        start = int(rng.integers(0, total))
        fermatas.update(range(start, min(total, start + int(rng.integers(1, 5)))))
    return Score(
        voices=tuple(voices),
        time_signatures=(TimeSignatureEvent(0, num, den),),
        total_frames=total,
        fermata_frames=frozenset(fermatas),
        chords=tuple(chords),
        pickup_frames=pickup,
    )


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def corpus_frames(corpus):
    return [encode_score(s) for _, s in corpus]


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if passed else 'FAIL'}  {detail}")
