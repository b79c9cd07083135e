"""Acceptance criteria 1-11, one PASS/FAIL line each.

Each test records its outcome in ``conftest.ACCEPTANCE`` (printed as a
terminal summary) and prints it inline when run with ``-s`` or ``-v``.
Criteria 8 and 9 share one trained model per session.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from choirgen.cli import main
from choirgen.codec import decode_frames, encode_score
from choirgen.harmonizer import harmonize_batch
from choirgen.io import fixture_paths
from choirgen.labeler import chordify, label_chords
from choirgen.metrics import evaluate_frames
from choirgen.model import (
    ChoraleModel,
    ModelConfig,
    corpus_loss,
    gradient_check,
    save,
    split_corpus,
    token_error_rate,
    train,
)
from choirgen.sampler import attribute_mass_out, attribute_tokens, gamma_transform

import conftest
from conftest import random_score
from test_labeler import oracle_chordify, oracle_labels
from test_metrics import oracle_metrics, random_pieces, transpose
from test_model import TOY, toy_piece
from test_sampler import oracle_mass_out

FULL_EPOCHS = 50
ABLATION_EPOCHS = 20
ABLATION_SEEDS = range(5)
SWEEP = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


def record(key, passed, detail, capsys=None):
    conftest.ACCEPTANCE[key] = (bool(passed), detail)
    line = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    return passed


def random_case(rng, size=130):
    d = rng.dirichlet(np.full(size, float(rng.choice([0.1, 0.5, 1.0]))))
    d /= d.sum()
    chroma = int(rng.integers(1, 4096))
    return d, attribute_tokens(chroma)


# -- 1-4: gamma sampling ------------------------------------------------------------------


def test_criterion_1_gamma_identity(capsys):
    rng = np.random.default_rng(1)
    cases = [random_case(rng) for _ in range(1000)]
    start = time.perf_counter()
    worst = max(float(np.abs(gamma_transform(d, a, 0.5) - d).max()) for d, a in cases)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    record("1", ok, f"max |out - in| = {worst:.2e} over 1000 cases in {elapsed:.3f} s", capsys)
    assert ok


def test_criterion_2_gamma_blocking(capsys):
    rng = np.random.default_rng(2)
    worst_non, worst_attr, worst_zero = 0.0, 0.0, 0.0
    n = 0
    while n < 1000:
        d, a = random_case(rng)
        p = d[a].sum()
        if not 0 < p < 1:
            continue
        n += 1
        one = gamma_transform(d, a, 1.0)
        zero = gamma_transform(d, a, 0.0)
        worst_non = max(worst_non, float(one[~a].sum()))
        worst_attr = max(worst_attr, abs(float(one[a].sum()) - 1))
        worst_zero = max(worst_zero, float(zero[a].sum()))
    ok = worst_non <= 1e-12 and worst_attr <= 1e-9 and worst_zero <= 1e-12
    record(
        "2",
        ok,
        f"h=1: non-attribute mass <= {worst_non:.1e}, |attribute mass - 1| <= {worst_attr:.1e}; "
        f"h=0: attribute mass <= {worst_zero:.1e}",
        capsys,
    )
    assert ok


def test_criterion_3_conservation_and_monotonicity(capsys):
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, 1.0, 101)
    worst_sum = 0.0
    violations = 0
    strict_pairs = 0
    for _ in range(200):
        d, a = random_case(rng)
        p = d[a].sum()
        masses = []
        for h in grid:
            out = gamma_transform(d, a, h)
            worst_sum = max(worst_sum, abs(float(out.sum()) - 1))
            masses.append(float(out[a].sum()))
        for lo, hi in zip(masses, masses[1:]):
            if 0 < p < 1:
                strict_pairs += 1
                violations += not hi > lo
            else:
                violations += not hi >= lo
    ok = worst_sum <= 1e-9 and violations == 0
    record(
        "3",
        ok,
        f"|sum - 1| <= {worst_sum:.1e}; {violations} monotonicity violations "
        f"({strict_pairs} strict grid steps checked)",
        capsys,
    )
    assert ok


STATED_SPOT = 0.750423


def test_criterion_4_spot_value_oracle(capsys):
    oracle = float(oracle_mass_out("0.5", "0.75", dps=60))
    got = attribute_mass_out(0.5, 0.75)
    d = np.array([0.25, 0.25, 0.5])
    via_transform = float(gamma_transform(d, np.array([True, True, False]), 0.75)[:2].sum())
    ok = abs(got - oracle) <= 1e-6 and abs(via_transform - oracle) <= 1e-6
    record(
        "4a",
        ok,
        f"h=0.75, p=0.5 -> {got:.10f}; high-precision oracle {oracle:.10f} (|diff| {abs(got - oracle):.1e})",
        capsys,
    )
    assert ok


@pytest.mark.xfail(strict=True, reason="0.750423 is not 0.5**tan(pi/8); see the decisions ledger")
def test_criterion_4_stated_constant(capsys):
    got = attribute_mass_out(0.5, 0.75)
    ok = abs(got - STATED_SPOT) <= 1e-6
    record(
        "4b",
        ok,
        f"stated constant {STATED_SPOT} vs computed {got:.7f}: |diff| {abs(got - STATED_SPOT):.2e} > 1e-6 "
        "(the oracle agrees with the implementation, not the constant)",
        capsys,
    )
    assert ok


# -- 5-6: codec and labeler ------------------------------------------------------------------


def test_criterion_5_codec_round_trip(corpus, capsys):
    def strip(score):
        return score.with_chords(replace(c, symbol=None) for c in score.chords)

    failures = 0
    for _, score in corpus:
        frames = encode_score(score)
        failures += strip(decode_frames(frames)) != strip(score.canonical())
        failures += encode_score(decode_frames(frames)) != frames
    rng = np.random.default_rng(5)
    for _ in range(1000):
        s = random_score(rng, n_voices=int(rng.integers(1, 5)))
        frames = encode_score(s)
        failures += decode_frames(frames) != s.canonical()
        failures += encode_score(decode_frames(frames)) != frames
    ok = failures == 0 and len(corpus) >= 10
    record("5", ok, f"{len(corpus)} fixtures + 1000 random scores, {failures} mismatches", capsys)
    assert ok


def test_criterion_6_labeler_oracle(capsys):
    rng = np.random.default_rng(6)
    checked = mismatches = 0
    while checked < 200:
        s = random_score(rng, n_voices=int(rng.integers(2, 5)), max_measures=8, with_chords=False)
        if not any(e.pitch is not None for v in s.voices for e in v.events):
            continue
        checked += 1
        segments = chordify(s)
        mismatches += segments != oracle_chordify(s)
        for rhythm in ("beat", "half", "measure"):
            got = [(c.onset, c.pitch_classes) for c in label_chords(s, segments, rhythm)]
            mismatches += got != oracle_labels(s, rhythm)
    ok = mismatches == 0
    record("6", ok, f"{checked} random 2-4 voice scores x 3 harmonic rhythms, {mismatches} mismatches", capsys)
    assert ok


# -- 7-9: model and generation ---------------------------------------------------------------


def test_criterion_7_gradient_check(capsys):
    start = time.perf_counter()
    errors = gradient_check(ChoraleModel(TOY), [toy_piece(0), toy_piece(2)], samples=200, step=1e-5)
    elapsed = time.perf_counter() - start
    share = float(np.mean(errors <= 1e-4))
    ok = len(errors) == 200 and share >= 0.95 and elapsed < 60
    record(
        "7",
        ok,
        f"{100 * share:.1f}% of 200 parameters within rel. error 1e-4 (median {np.median(errors):.1e}), "
        f"{elapsed:.1f} s",
        capsys,
    )
    assert ok


@pytest.fixture(scope="module")
def split(corpus_frames):
    return split_corpus(corpus_frames, 0.1, seed=0)


@pytest.fixture(scope="module")
def trained(split):
    train_set, _ = split
    model = ChoraleModel(ModelConfig(seed=0))
    report = train(model, train_set, epochs=FULL_EPOCHS)
    return model, report


@pytest.mark.slow
def test_criterion_8_learning_sanity(trained, split, capsys):
    model, report = trained
    train_set, val_set = split
    final = corpus_loss(model, train_set)
    ter = token_error_rate(model, train_set).mean

    wins = []
    for seed in ABLATION_SEEDS:
        pair = []
        for use_chord in (True, False):
            m = ChoraleModel(ModelConfig(seed=seed, use_chord=use_chord))
            train(m, train_set, epochs=ABLATION_EPOCHS)
            pair.append(token_error_rate(m, val_set).mean)
        wins.append(pair[1] >= pair[0])
        pair_text = f"seed {seed}: full {100 * pair[0]:.2f}% vs chord-ablated {100 * pair[1]:.2f}%"
        with capsys.disabled():
            print("\n  " + pair_text)
    reduction = 1 - final / report.initial_loss
    share = sum(wins) / len(wins)
    ok = reduction >= 0.5 and ter < 0.5 and share >= 0.7
    record(
        "8",
        ok,
        f"loss {report.initial_loss:.3f} -> {final:.3f} ({100 * reduction:.1f}% drop), train TER {100 * ter:.2f}% "
        f"(chance 99.2%); ablated TER >= full in {sum(wins)}/{len(wins)} seeds",
        capsys,
    )
    assert ok


@pytest.mark.slow
def test_criterion_9_h_sweep(trained, corpus, capsys):
    model, _ = trained
    scores = [s for _, s in corpus]
    start = time.perf_counter()
    result = harmonize_batch(scores, model, h=SWEEP)
    elapsed = time.perf_counter() - start
    r = result.correlations
    at_one = [x for x in result.results if x.h == 1.0]
    chord_tones_only = not result.errors and all(x.metrics.ctnctr == 1.0 for x in at_one)
    for x in at_one:  # every sounding onset is in the active chord
        frames = encode_score(x.score)
        for part in ("alto", "tenor", "bass"):
            for t, tok in enumerate(frames.voice(part)):
                if tok < 128 and not frames.chord[t] >> (tok % 12) & 1:
                    chord_tones_only = False
    ok = (
        r["ctnctr"] >= 0.6
        and r["pcs"] >= 0.5
        and r["mctd"] <= -0.5
        and chord_tones_only
        and elapsed < 600
    )
    means = ", ".join(f"h={h:g}: {m['ctnctr']:.3f}" for h, m in result.means.items())
    record(
        "9",
        ok,
        f"r(CTnCTR,h)={r['ctnctr']:+.3f}, r(PCS,h)={r['pcs']:+.3f}, r(MCTD,h)={r['mctd']:+.3f}; "
        f"h=1 chord tones only: {chord_tones_only}; {elapsed:.0f} s; CTnCTR means {means}",
        capsys,
    )
    assert ok


# -- 10-11: metrics and determinism -----------------------------------------------------------


def test_criterion_10_metric_oracles(capsys):
    worst = 0.0
    for frames in random_pieces(100, seed=10):
        for v in evaluate_frames(frames).voices:
            want = oracle_metrics(frames.voice(v.part), frames.chord)
            worst = max(worst, abs(v.ctnctr - want[0]), abs(v.pcs - want[1]), abs(v.mctd - want[2]))
    worst_t = 0.0
    for k, frames in enumerate(random_pieces(30, seed=110)):
        a = evaluate_frames(frames)
        b = evaluate_frames(transpose(frames, k % 11 + 1))
        worst_t = max(worst_t, *(abs(a.value(m) - b.value(m)) for m in ("ctnctr", "pcs", "mctd")))
    ok = worst <= 1e-9 and worst_t <= 1e-9
    record("10", ok, f"max oracle deviation {worst:.1e} on 100 pieces; transposition deviation {worst_t:.1e}", capsys)
    assert ok


def test_criterion_11_determinism(tmp_path, capsys):
    model = ChoraleModel(ModelConfig(seed=11))
    train(model, [encode_score(s) for s in [conftest.load_corpus()[0][1]]], epochs=1)
    save(model, tmp_path / "m.bin")
    src = fixture_paths()[3]
    same = []
    for fmt in ("json", "midi"):
        outputs = []
        for run in range(2):
            path = tmp_path / f"out{run}.{fmt}"
            code = main(["harmonize", str(src), "--model", str(tmp_path / "m.bin"), "-o", str(path),
                         "--seed", "42", "--h", "0.8", "--out", fmt])
            assert code == 0
            outputs.append(path.read_bytes())
        same.append(outputs[0] == outputs[1] and len(outputs[0]) > 0)
    capsys.readouterr()
    ok = all(same)
    record("11", ok, f"byte-identical JSON: {same[0]}, MIDI: {same[1]}", capsys)
    assert ok
