"""Build the fixture corpus from the public-domain Bach chorales shipped
with music21 (``pip install music21``; not a runtime dependency).

Keeps four-part chorales in a single supported meter whose notes all sit on
the sixteenth grid, labels their chords, and writes canonical JSON.

    python scripts/extract_fixtures.py --count 24 --max-frames 256 \
        --out src/choirgen/data/fixtures
"""

from __future__ import annotations

import argparse
from fractions import Fraction
from pathlib import Path

from music21 import corpus, expressions, note

from choirgen.io import write_score
from choirgen.labeler import label_score
from choirgen.score import NoteEvent, Score, ScoreError, TimeSignatureEvent, Voice, validate

PART_NAMES = {"soprano": "soprano", "alto": "alto", "tenor": "tenor", "bass": "bass"}
METERS = {(4, 4), (3, 4)}


def frames(q) -> int:
    f = Fraction(q).limit_denominator(64) * 4
    if f.denominator != 1:
        raise ScoreError(f"off-grid value {q}")
    return int(f)


def convert(m21) -> Score:
    parts = {}
    for p in m21.parts:
        name = (p.partName or p.id or "").strip().lower()
        if name in PART_NAMES:
            parts[PART_NAMES[name]] = p
    if set(parts) != set(PART_NAMES.values()):
        raise ScoreError("not an SATB chorale")

    sigs = m21.parts[0].recurse().getElementsByClass("TimeSignature")
    meters = {(ts.numerator, ts.denominator) for ts in sigs}
    if len(meters) != 1 or not meters <= METERS:
        raise ScoreError(f"unsupported meter {meters}")
    num, den = meters.pop()
    full = num * 16 // den

    measures = list(parts["soprano"].getElementsByClass("Measure"))
    first = measures[0]
    pickup = frames(first.duration.quarterLength)
    pickup = pickup if pickup < full else 0

    voices = []
    fermatas: set[int] = set()
    total = 0
    for part_name in ("soprano", "alto", "tenor", "bass"):
        flat = parts[part_name].stripTies().flatten().notesAndRests
        events = []
        for n in flat:
            if isinstance(n, note.Note):
                pitch = n.pitch.midi
            elif isinstance(n, note.Rest):
                pitch = None
            else:
                raise ScoreError("chord inside a voice")
            onset, dur = frames(n.offset), frames(n.quarterLength)
            if dur == 0:
                continue
            events.append(NoteEvent(onset, dur, pitch))
            if any(isinstance(x, expressions.Fermata) for x in n.expressions):
                fermatas.update(range(onset, onset + dur))
            total = max(total, onset + dur)
        voices.append(Voice(part_name, tuple(events)))
    score = Score(
        voices=tuple(voices),
        time_signatures=(TimeSignatureEvent(0, num, den),),
        total_frames=total,
        fermata_frames=frozenset(fermatas),
        pickup_frames=pickup,
    ).canonical()
    problems = validate(score)
    if problems:
        raise ScoreError("; ".join(map(str, problems)))
    return score


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=24)
    ap.add_argument("--max-frames", type=int, default=256)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    kept = 0
    for path in sorted(corpus.getComposer("bach"), key=str):
        if kept >= args.count:
            break
        name = Path(str(path)).stem
        if "-" in name:
            continue  # alternate versions of a chorale kept elsewhere in the corpus
        try:
            score = convert(corpus.parse(path))
        except Exception as exc:  # noqa: BLE001 - skip anything unusable
            print(f"skip {name}: {exc}")
            continue
        if score.total_frames > args.max_frames:
            print(f"skip {name}: {score.total_frames} frames")
            continue
        score = label_score(score)
        write_score(score, args.out / f"{name}.json", meta={"piece_id": name, "source": "music21 corpus"})
        kept += 1
        print(f"kept {name}: {score.total_frames} frames, {len(score.chords)} chords")


if __name__ == "__main__":
    main()
