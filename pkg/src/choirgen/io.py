"""Canonical JSON score files and Standard MIDI File export."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import jsonschema

from choirgen.score import (
    PARTS,
    ChordAnnotation,
    NoteEvent,
    Score,
    TimeSignatureEvent,
    Voice,
    measure_grid,
    signature_at,
    validate,
)

FORMAT_VERSION = 1
DIVISIONS = 4  # frames per quarter note

TICKS_PER_QUARTER = 480
TICKS_PER_FRAME = TICKS_PER_QUARTER // DIVISIONS
DEFAULT_TEMPO_BPM = 72
CHOIR_PROGRAM = 52  # GM "Choir Aahs", zero-based


class ScoreFormatError(ValueError):
    """Unreadable or schema-violating score file."""


_EVENT = {
    "type": "object",
    "required": ["onset", "duration", "pitch"],
    "properties": {
        "onset": {"type": "integer", "minimum": 0},
        "duration": {"type": "integer", "minimum": 1},
        "pitch": {"type": ["integer", "null"], "minimum": 0, "maximum": 127},
    },
    "additionalProperties": False,
}

SCORE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["format_version", "divisions", "time_signatures", "voices"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "divisions": {"const": DIVISIONS},
        "total_frames": {"type": "integer", "minimum": 1},
        "pickup_frames": {"type": "integer", "minimum": 0},
        "time_signatures": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["measure", "num", "den"],
                "properties": {
                    "measure": {"type": "integer", "minimum": 0},
                    "num": {"type": "integer", "minimum": 1},
                    "den": {"enum": [1, 2, 4, 8, 16]},
                },
                "additionalProperties": False,
            },
        },
        "voices": {
            "type": "object",
            "required": ["soprano"],
            "propertyNames": {"enum": list(PARTS)},
            "additionalProperties": {"type": "array", "items": _EVENT},
        },
        "fermata_frames": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "chords": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["onset", "pitch_classes"],
                "properties": {
                    "onset": {"type": "integer", "minimum": 0},
                    "pitch_classes": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0, "maximum": 11},
                        "uniqueItems": True,
                    },
                    "symbol": {"type": ["string", "null"]},
                },
                "additionalProperties": False,
            },
        },
        "meta": {"type": "object"},
    },
    "additionalProperties": False,
}


def score_from_dict(doc: dict[str, Any]) -> Score:
    try:
        jsonschema.validate(doc, SCORE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScoreFormatError(f"schema error at {where}: {exc.message}") from None
    voices = []
    for part in PARTS:
        if part in doc["voices"]:
            events = tuple(NoteEvent(e["onset"], e["duration"], e["pitch"]) for e in doc["voices"][part])
            voices.append(Voice(part, events))
    ends = [e.end for v in voices for e in v.events]
    total = doc.get("total_frames", max(ends, default=0))
    return Score(
        voices=tuple(voices),
        time_signatures=tuple(TimeSignatureEvent(t["measure"], t["num"], t["den"]) for t in doc["time_signatures"]),
        total_frames=total,
        fermata_frames=frozenset(doc.get("fermata_frames", ())),
        chords=tuple(ChordAnnotation(c["onset"], frozenset(c["pitch_classes"]), c.get("symbol")) for c in doc.get("chords", ())),
        pickup_frames=doc.get("pickup_frames", 0),
    )


def score_to_dict(score: Score, meta: dict[str, Any] | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "divisions": DIVISIONS,
        "total_frames": score.total_frames,
        "pickup_frames": score.pickup_frames,
        "time_signatures": [
            {"measure": t.at_measure, "num": t.numerator, "den": t.denominator} for t in score.time_signatures
        ],
        "voices": {
            v.part: [{"onset": e.onset, "duration": e.duration, "pitch": e.pitch} for e in v.events]
            for v in sorted(score.voices, key=lambda v: PARTS.index(v.part))
        },
        "fermata_frames": sorted(score.fermata_frames),
        "chords": [
            {"onset": c.onset, "pitch_classes": sorted(c.pitch_classes), **({"symbol": c.symbol} if c.symbol else {})}
            for c in score.chords
        ],
    }
    if meta:
        doc["meta"] = meta
    return doc


def loads_score(text: str, source: str = "<string>") -> tuple[Score, dict[str, Any]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScoreFormatError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScoreFormatError(f"{source}: top level must be a JSON object")
    try:
        score = score_from_dict(doc)
    except ScoreFormatError as exc:
        raise ScoreFormatError(f"{source}: {exc}") from None
    return score, doc.get("meta", {})


def read_score(path: str | Path, check: bool = True) -> tuple[Score, dict[str, Any]]:
    """Parse a score file. With ``check`` the score invariants must hold."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScoreFormatError(f"{path}: {exc.strerror}") from None
    score, meta = loads_score(text, str(path))
    if check:
        problems = validate(score)
        if problems:
            raise ScoreFormatError(f"{path}: " + "; ".join(map(str, problems)))
    return score, meta


def dumps_score(score: Score, meta: dict[str, Any] | None = None) -> str:
    return json.dumps(score_to_dict(score, meta), indent=1, sort_keys=False) + "\n"


def write_score(score: Score, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    Path(path).write_text(dumps_score(score, meta), encoding="utf-8")


# -- Standard MIDI File ---------------------------------------------------------------


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _meta(kind: int, payload: bytes) -> bytes:
    return bytes([0xFF, kind]) + _vlq(len(payload)) + payload


def _track(events: list[tuple[int, int, bytes]], end_tick: int) -> bytes:
    """``events`` are ``(tick, order, message)``; ``order`` breaks ties so
    note-offs precede note-ons at the same tick."""
    data = bytearray()
    now = 0
    for tick, _, msg in sorted(events, key=lambda e: (e[0], e[1])):
        data += _vlq(tick - now) + msg
        now = tick
    data += _vlq(max(end_tick - now, 0)) + _meta(0x2F, b"")
    return b"MTrk" + struct.pack(">I", len(data)) + bytes(data)


def midi_bytes(score: Score, tempo_bpm: float = DEFAULT_TEMPO_BPM) -> bytes:
    """SMF type 1, 480 ticks per quarter, one track per voice (SATB order).

    Tempo, time signatures and fermata text markers go on the first track.
    Fermatas do not stretch durations.
    """
    end_tick = score.total_frames * TICKS_PER_FRAME
    voices = sorted(score.voices, key=lambda v: PARTS.index(v.part))
    tracks = []
    for channel, voice in enumerate(voices):
        events: list[tuple[int, int, bytes]] = []
        if channel == 0:
            events.append((0, 0, _meta(0x51, int(round(60_000_000 / tempo_bpm)).to_bytes(3, "big"))))
            grid = measure_grid(score.time_signatures, score.total_frames, score.pickup_frames)
            current = None
            for index, (start, _) in enumerate(grid):
                ts = signature_at(score.time_signatures, index)
                if ts != current:
                    dd = ts.denominator.bit_length() - 1
                    events.append((start * TICKS_PER_FRAME, 0, _meta(0x58, bytes([ts.numerator, dd, 24, 8]))))
                    current = ts
            prev = -2
            for f in sorted(score.fermata_frames):
                if f != prev + 1:
                    events.append((f * TICKS_PER_FRAME, 1, _meta(0x01, b"fermata")))
                prev = f
        events.append((0, 0, _meta(0x03, voice.part.encode())))
        events.append((0, 0, bytes([0xC0 | channel, CHOIR_PROGRAM])))
        for e in voice.notes():
            events.append((e.onset * TICKS_PER_FRAME, 3, bytes([0x90 | channel, e.pitch, 80])))
            events.append((e.end * TICKS_PER_FRAME, 2, bytes([0x80 | channel, e.pitch, 0])))
        tracks.append(_track(events, end_tick))
    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(tracks), TICKS_PER_QUARTER)
    return header + b"".join(tracks)


def write_midi(score: Score, path: str | Path, tempo_bpm: float = DEFAULT_TEMPO_BPM) -> None:
    Path(path).write_bytes(midi_bytes(score, tempo_bpm))


def fixture_paths() -> list[Path]:
    """The bundled public-domain chorale corpus (canonical JSON)."""
    root = Path(__file__).parent / "data" / "fixtures"
    return sorted(root.glob("*.json"))


def load_corpus(directory: str | Path | None = None) -> list[tuple[str, Score]]:
    """``(piece_id, score)`` pairs for every ``*.json`` in ``directory``
    (the bundled fixtures by default), sorted by file name."""
    paths = fixture_paths() if directory is None else sorted(Path(directory).glob("*.json"))
    out = []
    for p in paths:
        score, meta = read_score(p)
        out.append((meta.get("piece_id", p.stem), score))
    return out
