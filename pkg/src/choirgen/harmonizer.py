"""Generate alto, tenor and bass for a soprano + chord progression."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from choirgen import metrics
from choirgen.codec import HOLD, REST, START, FrameSet, decode_voice, encode_score
from choirgen.model import SequenceModel
from choirgen.sampler import (
    AttributePolicy,
    DrawPolicy,
    attribute_tokens,
    gamma_transform,
    mask_tokens,
    sample_token,
)
from choirgen.score import GENERATED_PARTS, Score, ScoreError, Voice

log = logging.getLogger(__name__)

# Conventional SATB ranges (MIDI), used only when range masking is requested.
VOICE_RANGES = {"alto": (53, 77), "tenor": (48, 69), "bass": (36, 64)}


def _range_banned(part: str) -> np.ndarray:
    lo, hi = VOICE_RANGES[part]
    return np.array([p for p in range(128) if not lo <= p <= hi])


def generate_tokens(
    model: SequenceModel,
    frames: FrameSet,
    h: float = 0.5,
    policy: AttributePolicy = "literal",
    seed: int = 0,
    draw: DrawPolicy = "multinomial",
    voice_ranges: bool = False,
) -> list[list[int]]:
    """Frame-by-frame sampling loop; returns three token lists (A, T, B)."""
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"h must lie in [0, 1], got {h}")
    rng = np.random.default_rng(seed)
    context = model.context(frames)
    out: list[list[int]] = [[], [], []]
    last_sounding: list[int | None] = [None, None, None]
    banned_range = {p: _range_banned(p) for p in GENERATED_PARTS} if voice_ranges else None
    previous = [START] * 3
    for t in range(frames.length):
        dists = model.step(context, t, previous)
        chroma = frames.chord[t]
        for v, part in enumerate(GENERATED_PARTS):
            d = dists[v]
            if t == 0:
                d = mask_tokens(d, [HOLD])
            if banned_range is not None:
                d = mask_tokens(d, banned_range[part])
            attrs = attribute_tokens(chroma, policy, last_sounding[v])
            d = gamma_transform(d, attrs, h)
            tok = sample_token(d, rng, draw)
            out[v].append(tok)
            if tok != HOLD:
                last_sounding[v] = tok if tok != REST else None
        previous = [out[0][-1], out[1][-1], out[2][-1]]
    return out


def harmonize(
    score: Score,
    model: SequenceModel,
    h: float = 0.5,
    policy: AttributePolicy = "literal",
    seed: int = 0,
    draw: DrawPolicy = "multinomial",
    voice_ranges: bool = False,
) -> Score:
    """Return ``score`` with freshly generated alto, tenor and bass.

    Soprano, chords, fermatas and meter are passed through untouched; any
    existing lower voices are replaced.
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"h must lie in [0, 1], got {h}")
    frames = encode_score(score)
    config = getattr(model, "config", None)
    if config is not None:
        if not config.use_chord and score.chords:
            warnings.warn("model was trained without chords; chord input is ignored", stacklevel=2)
        if config.use_chord and not score.chords:
            warnings.warn("model expects chords but the score has none", stacklevel=2)
    if score.chords and score.chords[0].onset != 0:
        warnings.warn("first chord starts after frame 0; earlier frames are unconditioned", stacklevel=2)

    tokens = generate_tokens(model, frames, h, policy, seed, draw, voice_ranges)
    generated = []
    for part, seq in zip(GENERATED_PARTS, tokens):
        if len(seq) != frames.length:
            raise ScoreError(f"generated {part} has {len(seq)} frames, expected {frames.length}")
        events, coerced = decode_voice(seq)
        if coerced:
            log.warning("%s: coerced %d leading HOLD tokens", part, coerced)
        generated.append(Voice(part, events))
    return score.with_voices([score.voice("soprano"), *generated])


@dataclass
class PieceResult:
    index: int
    h: float
    seed: int
    score: Score | None = None
    metrics: metrics.PieceMetrics | None = None
    error: Exception | None = None


@dataclass
class BatchResult:
    results: list[PieceResult] = field(default_factory=list)
    means: dict[float, dict[str, float]] = field(default_factory=dict)
    correlations: dict[str, float] = field(default_factory=dict)

    def outputs(self, h: float | None = None) -> list[Score | None]:
        return [r.score for r in self.results if h is None or r.h == h]

    @property
    def errors(self) -> list[PieceResult]:
        return [r for r in self.results if r.error is not None]


def summarize(results: Sequence[PieceResult]) -> tuple[dict[float, dict[str, float]], dict[str, float]]:
    """Per-h means of each metric, and the Pearson correlation of those
    means against h when at least two h values are present."""
    means: dict[float, dict[str, float]] = {}
    for h in sorted({r.h for r in results}):
        rows = [r.metrics for r in results if r.h == h and r.metrics is not None]
        if rows:
            means[h] = {m: float(np.mean([row.value(m) for row in rows])) for m in metrics.METRICS}
    correlations: dict[str, float] = {}
    if len(means) >= 2:
        hs = list(means)
        for m in metrics.METRICS:
            try:
                correlations[m] = metrics.pearson(hs, [means[h][m] for h in hs])
            except metrics.MetricError:
                correlations[m] = float("nan")
    return means, correlations


def harmonize_batch(
    scores: Sequence[Score],
    model: SequenceModel,
    h: float | Sequence[float] = 0.5,
    seeds: Sequence[int] | None = None,
    policy: AttributePolicy = "literal",
    draw: DrawPolicy = "multinomial",
    voice_ranges: bool = False,
) -> BatchResult:
    """Harmonize every score at every requested h (a sweep when ``h`` is a
    sequence). Per-piece failures are recorded, not raised."""
    if not scores:
        raise ValueError("harmonize_batch needs at least one score")
    hs = [float(h)] if np.isscalar(h) else [float(x) for x in h]
    seeds = list(range(len(scores))) if seeds is None else list(seeds)
    if len(seeds) != len(scores):
        raise ValueError("need one seed per score")
    result = BatchResult()
    for hv in hs:
        for i, (score, seed) in enumerate(zip(scores, seeds)):
            item = PieceResult(i, hv, seed)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    item.score = harmonize(score, model, hv, policy, seed, draw, voice_ranges)
                item.metrics = metrics.evaluate_score(item.score)
            except Exception as exc:  # noqa: BLE001 - reported per piece
                log.warning("piece %d at h=%.2f failed: %s", i, hv, exc)
                item.error = exc
            result.results.append(item)
    result.means, result.correlations = summarize(result.results)
    return result
