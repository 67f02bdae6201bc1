"""Command-line entry point: ``nmtcal <subcommand> ...``.

Exit codes are 0 on success, 1 when a computation fails (for example
training diverges) and 2 for unusable input or arguments. Every file a
subcommand writes is listed, with its hash, in a manifest written next
to it (``<output>.manifest.json``, or ``manifest.json`` inside a bundle
directory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import (
    BUCKET_HEADER,
    BUCKETS,
    annotate,
    bucket_report,
    build_indicators,
    correlation_tables,
    frequency_thresholds,
)
from .calibration import (
    DEFAULT_BINS,
    DIAGRAM_HEADER,
    CalibrationClass,
    Prediction,
    classify_predictions,
    diagram_rows_as_tuples,
    ece_report,
    reliability_diagram,
)
from .corpus import (
    SUBWORD_MARKER,
    ConfidenceSidecar,
    CorpusFormatError,
    ParallelPair,
    Token,
    build_vocab_stats,
    dump_json,
    format_labels_line,
    format_predictions,
    format_tsv,
    parse_alignment_file,
    parse_corpus,
    parse_labels_file,
    parse_pos_file,
    parse_predictions,
    parse_vocab_stats,
)
from .pipeline import BenchmarkConfig, BundleWriter, file_sha256, model_config, prediction_rows, run_benchmark
from .ter import DEFAULT_MAX_SHIFT_DISTANCE, label_sentence
from .toymodel.decoding import decode
from .toymodel.evaluation import confidence_pass, inference_predictions, teacher_forced_predictions
from .toymodel.synthetic import SPECIALS, SyntheticTask, generate_synthetic, source_vocabulary, target_vocabulary
from .toymodel.toy import ToyModel
from .toymodel.training import TrainConfig, TrainingDivergedError, train

log = logging.getLogger("nmtcal")


class UsageError(ValueError):
    pass


# -- config files -------------------------------------------------------------

def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(path: str | Path) -> dict:
    """Read a JSON object, or ``key = value`` lines with dotted keys for nesting."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON ({exc.msg})", str(path), exc.lineno) from None
        return data
    data: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise CorpusFormatError("expected key = value", str(path), lineno)
        *parents, leaf = key.strip().split(".")
        node = data
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CorpusFormatError(f"key {key.strip()!r} conflicts with an earlier value", str(path), lineno)
        node[leaf] = _coerce(value.strip())
    return data


# -- helpers ------------------------------------------------------------------

def _predictions_from_file(path, labels_path=None) -> list[Prediction]:
    sentences = parse_predictions(path)
    labels = parse_labels_file(labels_path) if labels_path else None
    if labels is not None and len(labels) != len(sentences):
        raise UsageError(f"{labels_path}: {len(labels)} label lines for {len(sentences)} prediction sentences")
    preds = []
    for k, rows in enumerate(sentences):
        if labels is not None and len(labels[k]) != len(rows):
            raise UsageError(f"{labels_path}:{k + 1}: {len(labels[k])} labels for {len(rows)} tokens")
        for i, r in enumerate(rows):
            value, flag = labels[k][i] if labels is not None else (r.label, r.under_translation_adjacent)
            preds.append(Prediction(Token.from_surface(r.token), r.confidence, r.correct, i, len(rows),
                                    value, flag))
    if not preds:
        raise UsageError(f"{path}: no predictions")
    return preds


def _threshold(args, report) -> float:
    if args.threshold is None:
        return report.ece
    if args.threshold < 0:
        raise UsageError("--threshold must be >= 0")
    return args.threshold / 100.0


def _writer_for(out: str) -> BundleWriter:
    path = Path(out)
    return BundleWriter(path.parent if str(path.parent) else Path("."))


def _emit(args, out: str | None, content: str, inputs, started, extra_outputs=()) -> None:
    """Write ``content`` to ``out`` (plus its manifest) or to stdout."""
    if out is None:
        sys.stdout.write(content)
        return
    writer = _writer_for(out)
    writer.text(Path(out).name, content)
    for name, text in extra_outputs:
        writer.text(name, text)
    _manifest(args, writer, out, inputs, started)


def _manifest(args, writer, out, inputs, started):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "subcommand": args.command,
        "inputs": {str(p): file_sha256(p) for p in inputs if p and Path(p).is_file()},
        "config_hash": hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest(),
        "seed": args.seed,
        "tool_version": __version__,
        "outputs": {str(writer.root / n): h for n, h in sorted(writer.outputs.items())},
        "timestamps": {"started": started, "finished": time.time()},
    }
    Path(str(out) + ".manifest.json").write_text(dump_json(manifest), encoding="utf-8")


# -- subcommands --------------------------------------------------------------

def cmd_ter(args) -> int:
    started = time.time()
    if args.max_shift < 0:
        raise UsageError("--max-shift must be >= 0")
    hyps = parse_corpus(args.hyp, args.marker)
    refs = parse_corpus(args.ref, args.marker)
    if len(hyps) != len(refs):
        raise UsageError(f"{args.hyp} has {len(hyps)} lines but {args.ref} has {len(refs)}")
    lines = [format_labels_line(label_sentence(h, r, args.max_shift, args.attach)) + "\n" for h, r in zip(hyps, refs)]
    _emit(args, args.out, "".join(lines), [args.hyp, args.ref], started)
    return 0


def cmd_ece(args) -> int:
    started = time.time()
    preds = _predictions_from_file(args.predictions)
    report = ece_report(preds, args.bins)
    payload = dump_json({"mode": args.mode, **report.to_dict()})
    diagram = format_tsv(DIAGRAM_HEADER, diagram_rows_as_tuples(reliability_diagram(report)))
    if args.out is None:
        sys.stdout.write(payload)
        return 0
    _emit(args, args.out, payload, [args.predictions], started,
          extra_outputs=[(Path(args.out).name + ".diagram.tsv", diagram)])
    return 0


def cmd_correlate(args) -> int:
    started = time.time()
    preds = _predictions_from_file(args.predictions, args.labels)
    report = ece_report(preds, args.bins)
    classes = classify_predictions(preds, report.bins, _threshold(args, report))
    error_set = tuple(x for x in args.error_set.split(",") if x)
    if not error_set or set(error_set) - {"S", "I", "D"}:
        raise UsageError("--error-set takes a comma list drawn from S, I, D")
    tables = correlation_tables(build_indicators(preds, classes), error_set)
    rows = [(name, row, col, value) for name, table in tables.items()
            for row, cols in table.items() for col, value in cols.items()]
    _emit(args, args.out, format_tsv(("table", "row", "column", "cosine"), rows),
          [args.predictions, args.labels], started)
    return 0


def cmd_buckets(args) -> int:
    started = time.time()
    preds = _predictions_from_file(args.predictions)
    attributes = [a for a in args.attributes.split(",") if a]
    unknown = set(attributes) - set(BUCKETS)
    if unknown:
        raise UsageError(f"unknown attributes {sorted(unknown)}; choose from {sorted(BUCKETS)}")
    stats = None
    if "frequency" in attributes:
        if args.vocab_stats:
            stats = parse_vocab_stats(args.vocab_stats)
        elif args.train_ref:
            stats = build_vocab_stats(parse_corpus(args.train_ref, args.marker))
        else:
            raise UsageError("frequency buckets need --vocab-stats or --train-ref")
    if "fertility" in attributes and not args.alignment:
        raise UsageError("fertility buckets need --alignment")
    if "pos" in attributes and not args.pos:
        raise UsageError("POS buckets need --pos")
    annotate(preds, stats=stats,
             thresholds=frequency_thresholds(len(stats)) if stats is not None else None,
             alignments=parse_alignment_file(args.alignment) if args.alignment else None,
             pos_tags=parse_pos_file(args.pos) if args.pos else None, marker=args.marker)
    report = ece_report(preds, args.bins)
    classes = classify_predictions(preds, report.bins, _threshold(args, report))
    target = CalibrationClass(args.calibration_class.capitalize())
    rows = [r.as_row() for a in attributes for r in bucket_report(preds, a, classes, target)]
    _emit(args, args.out, format_tsv(BUCKET_HEADER, rows),
          [args.predictions, args.vocab_stats, args.train_ref, args.alignment, args.pos], started)
    return 0


def _training_corpus(args, cfg: dict):
    if args.src or args.ref:
        if not (args.src and args.ref):
            raise UsageError("--src and --ref must be given together")
        src, ref = parse_corpus(args.src, args.marker), parse_corpus(args.ref, args.marker)
        if len(src) != len(ref):
            raise UsageError(f"{args.src} has {len(src)} lines but {args.ref} has {len(ref)}")
        pairs = [ParallelPair(s, r) for s, r in zip(src, ref)]
        sv = list(SPECIALS) + sorted({t for p in pairs for t in p.source.surfaces})
        tv = list(SPECIALS) + sorted({t for p in pairs for t in p.reference.surfaces})
        return pairs, sv, tv
    task = SyntheticTask(**{**cfg.get("task", {}), "seed": args.seed})
    pairs = generate_synthetic(task, int(cfg.get("n_train", 20000)), "train")
    return pairs, source_vocabulary(task), target_vocabulary(task)


def cmd_train(args) -> int:
    started = time.time()
    cfg = load_config(args.config) if args.config else {}
    pairs, sv, tv = _training_corpus(args, cfg)
    tcfg = TrainConfig.from_dict({**cfg.get("train", {}), "seed": args.seed})
    if args.smoothing:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "smoothing": args.smoothing})
    if args.steps is not None:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "max_steps": args.steps})
    confidences = None
    if tcfg.smoothing.needs_confidence:
        if args.confidences:
            confidences = ConfidenceSidecar.parse(args.confidences).values
        elif args.first_pass:
            first = ToyModel.load(args.first_pass)
            first.check_corpus(pairs)
            confidences = confidence_pass(first, pairs)
        else:
            raise UsageError("graduated smoothing needs --first-pass CHECKPOINT or --confidences FILE")
        if len(confidences) != len(pairs):
            raise UsageError(f"{len(confidences)} confidence lines for {len(pairs)} training pairs")
    mcfg = model_config(sv, tv, cfg.get("model", {}), pairs)
    model = train(mcfg, tcfg, pairs, sv, tv, confidences=confidences, log_every=args.log_every, logger=log)
    writer = _writer_for(args.out)
    writer.model(Path(args.out).name, model)
    _manifest(args, writer, args.out, [args.config, args.src, args.ref, args.confidences, args.first_pass], started)
    return 0


def cmd_decode(args) -> int:
    started = time.time()
    model = ToyModel.load(args.model)
    src = parse_corpus(args.src, args.marker)
    ref = parse_corpus(args.ref, args.marker) if args.ref else None
    if ref is not None and len(ref) != len(src):
        raise UsageError(f"{args.src} has {len(src)} lines but {args.ref} has {len(ref)}")
    if args.mode == "training" and ref is None:
        raise UsageError("--mode training needs --ref")
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    pairs = [ParallelPair(s, r) for s, r in zip(src, ref)] if ref is not None else None
    if pairs is not None:
        model.check_corpus(pairs)
    outputs = []
    if args.mode == "training":
        preds = teacher_forced_predictions(model, pairs)
        outputs.append((Path(args.out).name, format_predictions(prediction_rows(preds))))
    else:
        decoded = [decode(model, s, args.beam, args.max_len) for s in src]
        outputs.append((Path(args.out).name, "".join(" ".join(r.tokens.surfaces) + "\n" for r in decoded)))
        if pairs is not None:
            preds, _ = inference_predictions(model, pairs, args.beam, args.max_len, args.max_shift, args.attach,
                                             decoded=decoded)
            outputs.append((Path(args.out).name + ".predictions.tsv", format_predictions(prediction_rows(preds))))
    writer = _writer_for(args.out)
    for name, text in outputs:
        writer.text(name, text)
    _manifest(args, writer, args.out, [args.model, args.src, args.ref], started)
    return 0


def cmd_eval_e2e(args) -> int:
    cfg_dict = load_config(args.config) if args.config else {}
    cfg = BenchmarkConfig.from_dict(cfg_dict)
    if args.seed_given:
        cfg = cfg.with_seed(args.seed)
    results = run_benchmark(cfg, args.out)
    for name, r in results.items():
        print(f"{name}\ttrain_ece={r.train_ece:.4f}\tinference_ece={r.inference_ece:.4f}"
              f"\tover={r.over:.3f}\tunder={r.under:.3f}")
    return 0


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmtcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nmtcal {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="random seed for training and data (default 0)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, bins=False, threshold=False):
        p.add_argument("--marker", default=SUBWORD_MARKER, help="sub-word continuation marker (default %(default)s)")
        if bins:
            p.add_argument("--bins", type=int, default=DEFAULT_BINS, help="number of confidence bins (default %(default)s)")
        if threshold:
            p.add_argument("--threshold", type=float, default=None,
                           help="miscalibration threshold in percent (default: the file's own ECE)")

    p = sub.add_parser("ter", help="label hypothesis tokens C/S/I(+D) against references")
    p.add_argument("hyp", help="hypothesis corpus, one sentence per line")
    p.add_argument("ref", help="reference corpus, line-aligned with hyp")
    p.add_argument("--max-shift", type=int, default=DEFAULT_MAX_SHIFT_DISTANCE,
                   help="maximum shift distance (default %(default)s)")
    p.add_argument("--attach", choices=("following", "preceding"), default="following",
                   help="hypothesis token that carries a reference deletion (default %(default)s)")
    p.add_argument("--out", help="labels file (default stdout)")
    common(p)
    p.set_defaults(func=cmd_ter)

    p = sub.add_parser("ece", help="expected calibration error and reliability diagram")
    p.add_argument("predictions", help="prediction TSV (token, confidence, correct, label)")
    p.add_argument("--mode", choices=("training", "inference"), default="inference",
                   help="protocol that produced the predictions, recorded in the report (default %(default)s)")
    p.add_argument("--out", help="report JSON; the diagram goes to OUT.diagram.tsv (default: JSON to stdout)")
    common(p, bins=True)
    p.set_defaults(func=cmd_ece)

    p = sub.add_parser("correlate", help="cosine similarity between calibration and translation-error indicators")
    p.add_argument("predictions", help="prediction TSV (token, confidence, correct, label)")
    p.add_argument("--labels", help="labels file overriding the prediction file's label column")
    p.add_argument("--error-set", default="S,I,D", help="labels counted as errors (default %(default)s)")
    p.add_argument("--out", help="TSV output (default stdout)")
    common(p, bins=True, threshold=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("buckets", help="relative change of attribute buckets among miscalibrated tokens")
    p.add_argument("predictions", help="prediction TSV (token, confidence, correct, label)")
    p.add_argument("--attributes", default="position,granularity",
                   help=f"comma list from {','.join(BUCKETS)} (default %(default)s)")
    p.add_argument("--class", dest="calibration_class", choices=("over", "under"), default="over",
                   help="miscalibration class to profile (default %(default)s)")
    p.add_argument("--vocab-stats", help="TSV of token counts for frequency buckets")
    p.add_argument("--train-ref", help="training target corpus for frequency buckets")
    p.add_argument("--alignment", help="Pharaoh alignments source-target per sentence, for fertility")
    p.add_argument("--pos", help="POS tags per sentence, for POS buckets")
    p.add_argument("--out", help="TSV output (default stdout)")
    common(p, bins=True, threshold=True)
    p.set_defaults(func=cmd_buckets)

    p = sub.add_parser("train", help="train a toy translation model")
    p.add_argument("--config", help="JSON or key=value file with task/model/train/n_train sections")
    p.add_argument("--src", help="source corpus (default: synthetic task from the config)")
    p.add_argument("--ref", help="target corpus")
    p.add_argument("--smoothing", help="none | uniform:EPS | graduated[:lo,hi,e_low,e_mid,e_high]")
    p.add_argument("--steps", type=int, help="override train.max_steps")
    p.add_argument("--first-pass", help="checkpoint whose confidences drive graduated smoothing")
    p.add_argument("--confidences", help="per-token confidence file for graduated smoothing")
    p.add_argument("--log-every", type=int, default=0, help="log the loss every N steps with -v (default 0: never)")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode with a checkpoint and optionally export predictions")
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--src", required=True, help="source corpus to decode")
    p.add_argument("--ref", help="references; enables the prediction TSV")
    p.add_argument("--mode", choices=("inference", "training"), default="inference",
                   help="inference: beam search; training: teacher-forced predictions (default %(default)s)")
    p.add_argument("--beam", type=int, default=4, help="beam size (default %(default)s)")
    p.add_argument("--max-len", type=int, default=None, help="maximum output tokens (default: the model's max_len)")
    p.add_argument("--max-shift", type=int, default=DEFAULT_MAX_SHIFT_DISTANCE,
                   help="TER maximum shift distance for labels (default 50)")
    p.add_argument("--attach", choices=("following", "preceding"), default="following",
                   help="hypothesis token that carries a reference deletion (default following)")
    p.add_argument("--out", required=True, help="hypotheses (inference) or prediction TSV (training)")
    common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval-e2e", help="train, decode and report every smoothing policy")
    p.add_argument("--config", help="JSON or key=value benchmark config")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_eval_e2e)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusFormatError, UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
