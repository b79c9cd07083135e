"""Command-line interface: ``choirgen {label,train,harmonize,evaluate,ter}``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

from choirgen import __version__
from choirgen.codec import encode_score
from choirgen.harmonizer import harmonize
from choirgen.io import ScoreFormatError, load_corpus, read_score, write_midi, write_score
from choirgen.labeler import label_score
from choirgen.metrics import METRICS, MetricError, evaluate_score, pearson
from choirgen.model import (
    DEFAULT_LR,
    ChoraleModel,
    ModelConfig,
    ModelFormatError,
    TrainingError,
    load,
    save,
    split_corpus,
    token_error_rate,
    train,
)
from choirgen.score import GENERATED_PARTS, ScoreError

log = logging.getLogger("choirgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
METRIC_HEADER = ("piece_id", "h", "voice", "ctnctr", "pcs", "mctd")
DATA_ERRORS = (ScoreFormatError, ScoreError, ModelFormatError, MetricError, TrainingError, OSError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"h must lie in [0, 1], got {value}")
    return value


def parse_sweep(text: str) -> list[float]:
    """``"start:stop:step"`` (inclusive) or a single value, each in [0, 1]."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            values = [float(parts[0])]
        elif len(parts) == 3:
            start, stop, step = map(float, parts)
            if step <= 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + i * step, 10) for i in range(n)]
        else:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError(f"sweep values must lie in [0, 1]: {text!r}")
    return values


# -- label -----------------------------------------------------------------------------


def cmd_label(args: argparse.Namespace) -> int:
    score, meta = read_score(args.input)
    labeled = label_score(score.with_chords(()), args.harmonic_rhythm)
    out = args.output or Path(args.input).with_suffix(".labeled.json")
    write_score(labeled, out, meta)
    quarters = labeled.total_frames / 4
    print(f"{len(labeled.chords)} chords, {len(labeled.chords) / quarters:.3f} per quarter note -> {out}")
    return EXIT_OK


# -- train -----------------------------------------------------------------------------


def _read_config(path: str | None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScoreFormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ScoreFormatError(f"{path}: unknown config keys {sorted(unknown)}")
    try:
        return ModelConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ScoreFormatError(f"{path}: {exc}") from None


def _load_corpus(directory: str) -> list:
    if not Path(directory).is_dir():
        raise ScoreFormatError(f"{directory}: not a directory")
    corpus = load_corpus(directory)
    if not corpus:
        raise ScoreFormatError(f"{directory}: no *.json scores found")
    return corpus


def cmd_train(args: argparse.Namespace) -> int:
    config = _read_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for drop in args.ablate or ():
        changes[f"use_{drop}"] = False
    config = replace(config, **changes)

    corpus = _load_corpus(args.corpus)
    if config.use_chord:
        unlabeled = [pid for pid, s in corpus if not s.chords]
        if unlabeled:
            raise ScoreFormatError(f"unlabeled scores (run `choirgen label` or pass --ablate chord): {unlabeled}")
    frames = []
    for pid, score in corpus:
        f = encode_score(score)
        if not f.has_parts(GENERATED_PARTS):
            raise ScoreFormatError(f"{pid}: training needs all four voices")
        frames.append(f)
    if len(frames) == 1:
        warnings.warn("corpus has a single piece; validation = training", stacklevel=1)
    train_set, val_set = split_corpus(frames, 0.1, seed=config.seed)

    model = ChoraleModel(config)
    report = train(model, train_set, epochs=args.epochs, lr=args.lr, batch_size=args.batch, validation=val_set)
    save(model, args.out)
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".csv")
    with open(report_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "loss", "validation_ter"))
        for e in report.epochs:
            w.writerow((e.epoch, f"{e.loss:.6f}", f"{e.validation_ter:.6f}"))
    last = report.epochs[-1] if report.epochs else None
    summary = f"trained {len(train_set)} pieces, validated on {len(val_set)}"
    if last:
        summary += f"; loss {report.initial_loss:.4f} -> {last.loss:.4f}, validation TER {100 * last.validation_ter:.2f}%"
    print(f"{summary} -> {args.out}")
    return EXIT_OK


# -- harmonize -------------------------------------------------------------------------


def cmd_harmonize(args: argparse.Namespace) -> int:
    score, meta = read_score(args.input)
    model = load(args.model)
    out = harmonize(
        score,
        model,
        h=args.h,
        policy=args.policy,
        seed=args.seed,
        draw=args.draw,
        voice_ranges=args.voice_ranges,
    )
    if args.out == "midi":
        write_midi(out, args.output)
    else:
        write_score(out, args.output, {**meta, "h": args.h, "seed": args.seed, "policy": args.policy})
    print(f"harmonized {score.total_frames} frames at h={args.h:g}, seed={args.seed} -> {args.output}")
    return EXIT_OK


# -- evaluate --------------------------------------------------------------------------


def _generate_sweep(args: argparse.Namespace, hs: Sequence[float], directory: Path) -> None:
    model = load(args.model)
    corpus = _load_corpus(args.corpus) if args.corpus else load_corpus()
    directory.mkdir(parents=True, exist_ok=True)
    for h in hs:
        for i, (pid, score) in enumerate(corpus):
            seed = args.seed + i
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out = harmonize(score, model, h=h, policy=args.policy, seed=seed)
            write_score(out, directory / f"{pid}_h{h:.2f}.json", {"piece_id": pid, "h": h, "seed": seed})


def evaluate_directory(directory: Path, hs: Sequence[float] | None = None) -> list[tuple[str, float, str, dict]]:
    """Metric rows ``(piece_id, h, voice, values)`` for every generated file
    with a recorded h (restricted to ``hs`` when given)."""
    rows = []
    for path in sorted(directory.glob("*.json")):
        score, meta = read_score(path)
        if "h" not in meta:
            log.warning("%s: no recorded h, skipped", path)
            continue
        h = float(meta["h"])
        if hs is not None and not any(abs(h - x) < 1e-9 for x in hs):
            continue
        pid = str(meta.get("piece_id", path.stem))
        m = evaluate_score(score)
        for v in m.voices:
            rows.append((pid, h, v.part, {k: getattr(v, k) for k in METRICS}))
        rows.append((pid, h, "mean", {k: m.value(k) for k in METRICS}))
    return rows


def cmd_evaluate(args: argparse.Namespace) -> int:
    directory = Path(args.generated)
    hs = args.sweep
    if args.model:
        _generate_sweep(args, hs or [0.5], directory)
    elif not directory.is_dir():
        raise ScoreFormatError(f"{directory}: not a directory")
    rows = evaluate_directory(directory, hs)
    if not rows:
        raise ScoreFormatError(f"{directory}: no generated scores with a recorded h")

    out = Path(args.csv) if args.csv else directory / "metrics.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        for pid, h, voice, values in rows:
            w.writerow((pid, f"{h:g}", voice, *(f"{values[k]:.6f}" for k in METRICS)))

    means = {}
    for h in sorted({r[1] for r in rows}):
        sel = [r[3] for r in rows if r[1] == h and r[2] == "mean"]
        means[h] = {k: sum(v[k] for v in sel) / len(sel) for k in METRICS}
        print(f"h={h:g}  n={len(sel)}  " + "  ".join(f"{k}={means[h][k]:.4f}" for k in METRICS))
    if len(means) < 2:
        print("only one h value present; correlation with h skipped")
    else:
        hs_present = list(means)
        for k in METRICS:
            try:
                r = pearson(hs_present, [means[h][k] for h in hs_present])
                print(f"pearson r({k}, h) = {r:+.4f}")
            except MetricError as exc:
                print(f"pearson r({k}, h) undefined: {exc}")
    print(f"metrics -> {out}")
    return EXIT_OK


# -- ter -------------------------------------------------------------------------------


def cmd_ter(args: argparse.Namespace) -> int:
    corpus = _load_corpus(args.corpus)
    frames = [encode_score(s) for _, s in corpus]
    print(f"{'model':<32} {'alto':>8} {'tenor':>8} {'bass':>8} {'mean':>8}")
    for path in args.model:
        model = load(path)
        missing = [pid for pid, s in corpus if not s.chords]
        if model.config.use_chord and missing:
            warnings.warn(f"{path}: model expects chords but {len(missing)} piece(s) are unlabeled", stacklevel=1)
        report = token_error_rate(model, frames)
        name = Path(path).name + (f" (-{','.join(model.config.ablated)})" if model.config.ablated else "")
        cells = " ".join(f"{100 * x:7.2f}%" for x in (report.alto, report.tenor, report.bass, report.mean))
        print(f"{name:<32} {cells}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="choirgen", description="Chord-conditioned four-part chorale harmonization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("label", help="annotate a score with chords from its own voices")
    s.add_argument("input")
    s.add_argument("-o", "--output", help="output path (default: INPUT.labeled.json)")
    s.add_argument("--harmonic-rhythm", choices=("beat", "half", "measure"), default="beat")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("train", help="train a model on a directory of labeled scores")
    s.add_argument("corpus")
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--config", help="JSON object of model settings")
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int)
    s.add_argument("--ablate", action="append", choices=("chord", "beat"))
    s.add_argument("--lr", type=float, default=DEFAULT_LR)
    s.add_argument("--batch", type=int, default=4)
    s.add_argument("--report", help="per-epoch CSV (default: OUT with .csv suffix)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("harmonize", help="generate alto, tenor and bass for a soprano + chords")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--h", type=_unit_interval, default=0.5, help="harmonicity in [0, 1] (0.5 = unchanged)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", choices=("literal", "hold-inherit"), default="literal")
    s.add_argument("--draw", choices=("multinomial", "greedy"), default="multinomial")
    s.add_argument("--voice-ranges", action="store_true", help="clamp A/T/B to conventional ranges")
    s.add_argument("--out", choices=("json", "midi"), default="json", help="output format")
    s.set_defaults(func=cmd_harmonize)

    s = sub.add_parser("evaluate", help="harmonicity metrics over generated scores")
    s.add_argument("generated", help="directory of generated scores (meta records h)")
    s.add_argument("--sweep", type=parse_sweep, help='h values, e.g. "0.5:1.0:0.1"')
    s.add_argument("--model", help="generate the sweep first with this model")
    s.add_argument("--corpus", help="inputs for generation (default: bundled fixtures)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", choices=("literal", "hold-inherit"), default="literal")
    s.add_argument("--csv", help="metric rows (default: GENERATED/metrics.csv)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ter", help="teacher-forced token error rate per voice")
    s.add_argument("corpus")
    s.add_argument("--model", action="append", required=True, help="repeat to compare models")
    s.set_defaults(func=cmd_ter)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        return _run(args)


def _run(args: argparse.Namespace) -> int:
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
