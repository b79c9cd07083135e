import warnings
from dataclasses import replace

import numpy as np
import pytest

from choirgen.codec import HOLD, encode_score
from choirgen.harmonizer import VOICE_RANGES, generate_tokens, harmonize, harmonize_batch
from choirgen.metrics import evaluate_score
from choirgen.model import ChoraleModel, ModelConfig

MODEL = ChoraleModel(ModelConfig(seed=0, hidden=16, embed_dim=8, blocks=2))


@pytest.fixture(scope="module")
def pieces(corpus):
    return [s for _, s in corpus[:4]]


def chord_at(score, frame):
    active = None
    for c in score.chords:
        if c.onset <= frame:
            active = c
    return active


def test_h_one_gives_only_chord_tones(pieces):
    for score in pieces:
        out = harmonize(score, MODEL, h=1.0, seed=1)
        for part in ("alto", "tenor", "bass"):
            for e in out.voice(part).events:
                assert e.pitch is not None, "rests carry no chord-tone mass at h=1"
                assert e.pitch % 12 in chord_at(score, e.onset).pitch_classes
        assert evaluate_score(out).ctnctr == 1.0


def test_hold_inherit_at_h_one_traces_to_chord_tones(pieces):
    score = pieces[0]
    frames = encode_score(score)
    tokens = generate_tokens(MODEL, frames, h=1.0, policy="hold-inherit", seed=2)
    for seq in tokens:
        held = None
        for t, tok in enumerate(seq):
            if tok != HOLD:
                held = tok
                assert tok < 128 and frames.chord[t] >> (tok % 12) & 1
            else:
                assert held is not None and frames.chord[t] >> (held % 12) & 1


def test_deterministic_under_seed(pieces):
    a = harmonize(pieces[1], MODEL, h=0.7, seed=5)
    b = harmonize(pieces[1], MODEL, h=0.7, seed=5)
    c = harmonize(pieces[1], MODEL, h=0.7, seed=6)
    assert a == b
    assert a != c


def test_passthrough_and_shape(pieces):
    score = pieces[2]
    out = harmonize(score, MODEL, seed=0)
    assert out.voice("soprano") == score.voice("soprano")
    assert out.chords == score.chords
    assert out.fermata_frames == score.fermata_frames
    assert out.time_signatures == score.time_signatures
    frames = encode_score(out)
    assert frames.length == score.total_frames
    assert all(frames.voice(p)[0] != HOLD for p in ("alto", "tenor", "bass"))


def test_no_leading_hold_across_seeds(pieces):
    frames = encode_score(pieces[0])
    for seed in range(20):
        assert all(seq[0] != HOLD for seq in generate_tokens(MODEL, frames, 0.5, seed=seed))


def test_voice_ranges(pieces):
    out = harmonize(pieces[0], MODEL, seed=3, voice_ranges=True)
    for part, (lo, hi) in VOICE_RANGES.items():
        assert all(lo <= e.pitch <= hi for e in out.voice(part).events if e.pitch is not None)


def test_h_out_of_range(pieces):
    with pytest.raises(ValueError):
        harmonize(pieces[0], MODEL, h=1.5)


def test_config_mismatch_warns(pieces):
    ablated = ChoraleModel(ModelConfig(seed=0, hidden=8, embed_dim=4, blocks=1, use_chord=False))
    with pytest.warns(UserWarning, match="without chords"):
        harmonize(pieces[0], ablated)
    with pytest.warns(UserWarning, match="expects chords"):
        harmonize(pieces[0].with_chords(()), MODEL)


def test_batch_of_one_matches_harmonize(pieces):
    result = harmonize_batch(pieces[:1], MODEL, h=0.8, seeds=[4])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert result.outputs() == [harmonize(pieces[0], MODEL, h=0.8, seed=4)]
    assert not result.errors and result.correlations == {}


def test_batch_errors(pieces):
    with pytest.raises(ValueError):
        harmonize_batch([], MODEL)
    with pytest.raises(ValueError):
        harmonize_batch(pieces, MODEL, seeds=[1])
    bad = replace(pieces[0], total_frames=2)  # events overrun: fails validation
    result = harmonize_batch([pieces[0], bad], MODEL, h=0.5)
    assert [r.index for r in result.errors] == [1]
    assert result.outputs()[0] is not None and result.outputs()[1] is None


def test_sweep_correlations(pieces):
    hs = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    result = harmonize_batch(pieces, MODEL, h=hs)
    assert len(result.results) == len(hs) * len(pieces)
    assert list(result.means) == hs
    assert result.correlations["ctnctr"] > 0
    assert result.correlations["mctd"] < 0
    assert result.means[1.0]["ctnctr"] == 1.0
    per_piece = {(r.index, r.h): r.metrics.ctnctr for r in result.results}
    wins = sum(per_piece[(i, 0.9)] >= per_piece[(i, 0.5)] for i in range(len(pieces)))
    assert wins / len(pieces) >= 0.9
    assert np.all(np.isfinite(list(result.correlations.values())))
