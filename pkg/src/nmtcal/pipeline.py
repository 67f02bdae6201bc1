"""End-to-end calibration runs: train per smoothing policy, evaluate both protocols, write a bundle.

A bundle is a directory holding one sub-directory per policy plus a
``summary.tsv``/``summary.json`` comparison and the resolved
``config.json``. Everything in it is a pure function of the config, so
two runs with the same config are byte-identical. Wall-clock times live
only in ``manifest.json``, which also lists every output with its hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .analysis import annotate, bucket_report, build_indicators, correlation_tables, frequency_thresholds, BUCKET_HEADER
from .calibration import (
    CalibrationClass,
    DIAGRAM_HEADER,
    class_fractions,
    classify_predictions,
    diagram_rows_as_tuples,
    ece_report,
    reliability_diagram,
)
from .corpus import (
    ConfidenceSidecar,
    ParallelPair,
    PredictionRow,
    build_vocab_stats,
    dump_json,
    format_predictions,
    format_tsv,
    parse_corpus,
    write_text,
)
from .smoothing import SmoothingPolicy
from .toymodel.evaluation import confidence_pass, inference_predictions, teacher_forced_predictions
from .toymodel.model import ModelConfig
from .toymodel.synthetic import SPECIALS, SyntheticTask, generate_synthetic, source_vocabulary, target_vocabulary
from .toymodel.toy import ToyModel
from .toymodel.training import TrainConfig, train

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class EvaluationError(RuntimeError):
    """A trained model produced nothing to evaluate (e.g. only empty hypotheses)."""


@dataclass(frozen=True)
class BenchmarkConfig:
    task: SyntheticTask = field(default_factory=SyntheticTask)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_train: int = 20000
    n_dev: int = 300
    n_test: int = 300
    policies: tuple[str, ...] = ("none", "uniform:0.1", "graduated")
    # Model whose confidences drive graduated smoothing.
    first_pass: str = "uniform:0.1"
    beam_size: int = 4
    bins: int = 10
    max_shift: int = 50
    attach: str = "following"
    # One Over/Under threshold for the whole benchmark: the dev inference ECE
    # of the first policy. False gives each model its own dev ECE.
    shared_threshold: bool = True
    # Optional file corpora {"train_src": path, "train_ref": ..., "dev_src": ..., ...}.
    corpus: dict | None = None
    # Optional pre-trained checkpoints per policy, skipping training.
    checkpoints: dict | None = None

    def __post_init__(self):
        for p in self.policies:
            SmoothingPolicy.parse(p)
        if SmoothingPolicy.parse(self.first_pass).needs_confidence:
            raise ValueError("the first pass cannot itself be graduated")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError("n_train, n_dev and n_test must be >= 1")
        if self.beam_size < 1 or self.bins < 1:
            raise ValueError("beam_size and bins must be >= 1")

    def with_seed(self, seed: int) -> "BenchmarkConfig":
        return replace(self, task=replace(self.task, seed=seed), train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["policies"] = list(self.policies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__} - {"seed"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        seed = d.pop("seed", None)
        if "task" in d:
            d["task"] = SyntheticTask(**d["task"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "policies" in d:
            d["policies"] = tuple(d["policies"])
        cfg = cls(**d)
        return cfg.with_seed(seed) if seed is not None else cfg

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class PolicyResult:
    policy: str
    train_ece: float
    inference_ece: float
    threshold: float
    over: float
    under: float
    teacher_forced_accuracy: float
    noiseless_accuracy: float | None
    model: ToyModel | None = None
    # Wall-clock seconds for training (or loading) plus evaluation; not written to the bundle.
    seconds: float = 0.0

    def row(self) -> tuple:
        nl = float("nan") if self.noiseless_accuracy is None else self.noiseless_accuracy
        return (self.policy, self.train_ece, self.inference_ece, self.threshold, self.over, self.under,
                self.teacher_forced_accuracy, nl)


SUMMARY_HEADER = ("policy", "train_ece", "inference_ece", "threshold", "over", "under", "tf_accuracy",
                  "tf_noiseless_accuracy")


@dataclass
class Splits:
    train: list
    dev: list
    test: list
    src_vocab: list[str]
    tgt_vocab: list[str]


def load_splits(cfg: BenchmarkConfig) -> Splits:
    if cfg.corpus is None:
        t = cfg.task
        return Splits(generate_synthetic(t, cfg.n_train, "train"), generate_synthetic(t, cfg.n_dev, "dev"),
                      generate_synthetic(t, cfg.n_test, "test"), source_vocabulary(t), target_vocabulary(t))
    out = {}
    for split in ("train", "dev", "test"):
        try:
            src = parse_corpus(cfg.corpus[f"{split}_src"])
            ref = parse_corpus(cfg.corpus[f"{split}_ref"])
        except KeyError as exc:
            raise ValueError(f"corpus config needs key {exc.args[0]!r}") from None
        if len(src) != len(ref):
            raise ValueError(f"{split}: {len(src)} source lines but {len(ref)} reference lines")
        out[split] = [ParallelPair(s, r) for s, r in zip(src, ref)]
    # Vocabularies come from the training split only; unseen test tokens fail fast.
    src_vocab = list(SPECIALS) + sorted({t for p in out["train"] for t in p.source.surfaces})
    tgt_vocab = list(SPECIALS) + sorted({t for p in out["train"] for t in p.reference.surfaces})
    return Splits(out["train"], out["dev"], out["test"], src_vocab, tgt_vocab)


def model_config(src_vocab, tgt_vocab, model: dict, pairs) -> ModelConfig:
    """ModelConfig for ``pairs``; without an explicit ``max_len`` it grows to fit the longest sentence."""
    kw = dict(model)
    if "max_len" not in kw:
        longest = max((max(len(p.source), len(p.reference)) for p in pairs), default=0)
        kw["max_len"] = max(ModelConfig.max_len, longest)
    return ModelConfig(vocab_size_src=len(src_vocab), vocab_size_tgt=len(tgt_vocab), **kw)


def slug(policy: str) -> str:
    return policy.replace(":", "_").replace(",", "_")


def prediction_rows(preds) -> list[list[PredictionRow]]:
    rows, current = [], []
    for p in preds:
        current.append(PredictionRow(p.token.surface, p.confidence, p.correct, p.label or "C",
                                     p.under_translation_adjacent))
        if p.position_index == p.sentence_length - 1:
            rows.append(current)
            current = []
    return rows


class BundleWriter:
    """Writes files under a root directory and remembers their hashes."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, str] = {}

    def text(self, name: str, content: str) -> None:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        write_text(path, content)
        self.outputs[name] = hashlib.sha256(content.encode("utf-8")).hexdigest()

    def model(self, name: str, model: ToyModel) -> None:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
        self.outputs[name] = hashlib.sha256(path.read_bytes()).hexdigest()


def _train_or_load(cfg, splits, policy, confidences, policy_key):
    if cfg.checkpoints and policy_key in cfg.checkpoints:
        model = ToyModel.load(cfg.checkpoints[policy_key])
        model.check_corpus(splits.train + splits.dev + splits.test)
        return model
    tcfg = replace(cfg.train, smoothing=policy)
    mcfg = model_config(splits.src_vocab, splits.tgt_vocab, cfg.model, splits.train + splits.dev + splits.test)
    return train(mcfg, tcfg, splits.train, splits.src_vocab, splits.tgt_vocab,
                 confidences=confidences, log_every=500, logger=log)


def evaluate_policy(cfg: BenchmarkConfig, splits: Splits, name: str, model: ToyModel,
                    writer: BundleWriter | None, threshold: float | None = None) -> PolicyResult:
    """Score one model on the test split.

    ``threshold`` is the Over/Under threshold; None takes this model's own
    inference ECE on the dev split.
    """
    tf = teacher_forced_predictions(model, splits.test)
    tf_report = ece_report(tf, cfg.bins)
    if threshold is None:
        dev_preds, _ = inference_predictions(model, splits.dev, cfg.beam_size, max_shift_distance=cfg.max_shift,
                                             attach=cfg.attach)
        if not dev_preds:
            raise EvaluationError(f"{name}: every dev hypothesis is empty; train longer")
        threshold = ece_report(dev_preds, cfg.bins).ece
    inf, decoded = inference_predictions(model, splits.test, cfg.beam_size, max_shift_distance=cfg.max_shift,
                                         attach=cfg.attach)
    if not inf:
        raise EvaluationError(f"{name}: every test hypothesis is empty; train longer")
    inf_report = ece_report(inf, cfg.bins)
    classes = classify_predictions(inf, inf_report.bins, threshold)
    frac = class_fractions(classes)
    masks = [getattr(p, "noise_mask", None) for p in splits.test]
    noiseless = None
    if all(m is not None for m in masks):
        flat = [x for m in masks for x in m]
        clean = [p.correct for p, noisy in zip(tf, flat) if not noisy]
        noiseless = float(np.mean(clean)) if clean else None
    result = PolicyResult(name, tf_report.ece, inf_report.ece, threshold, frac["Over"], frac["Under"],
                          float(np.mean([p.correct for p in tf])), noiseless, model)
    if writer is not None:
        d = slug(name)
        writer.text(f"{d}/train_predictions.tsv", format_predictions(prediction_rows(tf)))
        writer.text(f"{d}/inference_predictions.tsv", format_predictions(prediction_rows(inf)))
        writer.text(f"{d}/hypotheses.txt", "".join(" ".join(r.tokens.surfaces) + "\n" for r in decoded))
        for mode, report in (("train", tf_report), ("inference", inf_report)):
            writer.text(f"{d}/{mode}_ece.json", dump_json({"mode": mode, **report.to_dict()}))
            writer.text(f"{d}/{mode}_diagram.tsv",
                        format_tsv(DIAGRAM_HEADER, diagram_rows_as_tuples(reliability_diagram(report))))
        _write_analysis(cfg, splits, d, inf, classes, threshold, writer)
    return result


def _write_analysis(cfg, splits, d, inf, classes, threshold, writer):
    tables = correlation_tables(build_indicators(inf, classes))
    writer.text(f"{d}/correlation.json", dump_json({"threshold": threshold, **_jsonable(tables)}))
    stats = build_vocab_stats(p.reference for p in splits.train)
    annotate(inf, stats=stats, thresholds=frequency_thresholds(len(stats)))
    rows = []
    for target in (CalibrationClass.OVER, CalibrationClass.UNDER):
        if target not in classes:
            continue
        for attribute in ("frequency", "position", "granularity"):
            for r in bucket_report(inf, attribute, classes, target):
                rows.append((target.value,) + r.as_row())
    writer.text(f"{d}/buckets.tsv", format_tsv(("class",) + BUCKET_HEADER, rows))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def run_benchmark(cfg: BenchmarkConfig, out_dir: str | Path | None = None, keep_models: bool = False) -> dict:
    """Train and evaluate every policy in ``cfg``; write a bundle if ``out_dir`` is given.

    Returns ``{policy: PolicyResult}``. Graduated policies first train (or
    reuse) the ``first_pass`` model, take its confidences on the training
    targets, and then train the graduated model from scratch.
    """
    torch.set_num_threads(1)
    started = time.time()
    splits = load_splits(cfg)
    writer = BundleWriter(Path(out_dir)) if out_dir is not None else None
    if writer is not None:
        writer.text("config.json", dump_json(cfg.to_dict()))
    models: dict[str, ToyModel] = {}
    results: dict[str, PolicyResult] = {}
    timings: dict[str, float] = {}

    def get_model(name: str) -> ToyModel:
        if name in models:
            return models[name]
        policy = SmoothingPolicy.parse(name)
        confidences = None
        if policy.needs_confidence:
            first = get_model(cfg.first_pass)
            confidences = confidence_pass(first, splits.train)
            if writer is not None:
                writer.text(f"{slug(name)}/first_pass_confidences.txt",
                            ConfidenceSidecar([list(map(float, c)) for c in confidences]).format())
        t0 = time.time()
        log.info("training %s", name)
        models[name] = _train_or_load(cfg, splits, policy, confidences, name)
        timings[f"train:{name}"] = time.time() - t0
        if writer is not None:
            writer.model(f"{slug(name)}/model.npz", models[name])
        return models[name]

    shared = None
    for name in cfg.policies:
        t0 = time.time()
        results[name] = evaluate_policy(cfg, splits, name, get_model(name), writer, shared)
        if cfg.shared_threshold:
            shared = results[cfg.policies[0]].threshold
        timings[f"policy:{name}"] = time.time() - t0
        results[name].seconds = time.time() - t0
        r = results[name]
        log.info("%s: train ECE %.4f inference ECE %.4f over %.3f under %.3f",
                 name, r.train_ece, r.inference_ece, r.over, r.under)
    if not keep_models:
        for r in results.values():
            r.model = None
    if writer is not None:
        rows = [results[p].row() for p in cfg.policies]
        writer.text("summary.tsv", format_tsv(SUMMARY_HEADER, rows))
        writer.text("summary.json", dump_json({p: _jsonable(dict(zip(SUMMARY_HEADER[1:], results[p].row()[1:])))
                                               for p in cfg.policies}))
        write_manifest(writer, "eval-e2e", inputs=_input_paths(cfg), config_hash=cfg.hash(),
                       seed=cfg.train.seed, started=started, timings=timings)
    return results


def _input_paths(cfg: BenchmarkConfig) -> list[str]:
    paths = list((cfg.corpus or {}).values()) + list((cfg.checkpoints or {}).values())
    return sorted(str(p) for p in paths)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(writer: BundleWriter, subcommand: str, inputs: Sequence[str], config_hash: str, seed: int,
                   started: float, timings: dict | None = None) -> dict:
    manifest = {
        "subcommand": subcommand,
        "inputs": {p: file_sha256(p) for p in inputs if Path(p).is_file()},
        "config_hash": config_hash,
        "seed": seed,
        "tool_version": __version__,
        "outputs": dict(sorted(writer.outputs.items())),
        "timestamps": {"started": started, "finished": time.time(), **(timings or {})},
    }
    write_text(writer.root / MANIFEST_NAME, dump_json(manifest))
    return manifest
